//! Subcommand implementations.

pub mod corrupt;
pub mod fit;
pub mod gen;
pub mod ggm;
pub mod repro;

use std::path::{Path, PathBuf};

use ndarray::Array2;

use margscore::data::MaskedDataset;

use crate::config::{FileConfig, TruncationSection};
use crate::errors::CliError;
use margscore::truncation::TruncationRegion;

/// Resolves the output directory (flag > config > "."), creating it.
pub fn resolve_out(
    flag: Option<PathBuf>,
    file: Option<PathBuf>,
) -> Result<PathBuf, CliError> {
    let out = flag.or(file).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

/// Resolves a truncation region: `--truncation FILE` wins over the config's
/// `[truncation]` section; absent both means untruncated.
pub fn resolve_truncation(
    flag: Option<&Path>,
    file: &FileConfig,
) -> Result<Option<TruncationRegion>, CliError> {
    match (flag, file.truncation.as_ref()) {
        (Some(path), _) => Ok(Some(TruncationSection::load(path)?.lower()?)),
        (None, Some(section)) => Ok(Some(section.lower()?)),
        (None, None) => Ok(None),
    }
}

/// Rebuilds the dense matrix of a dataset, requiring every cell observed.
pub fn dense_matrix(dataset: &MaskedDataset) -> Result<Array2<f64>, CliError> {
    let mut out = Array2::zeros((dataset.n(), dataset.dim));
    for (i, sample) in dataset.samples.iter().enumerate() {
        if !sample.pattern.is_fully_observed() {
            return Err(CliError::config(
                "input CSV has missing cells; this command needs fully observed data",
            ));
        }
        for (&j, &v) in sample.pattern.observed().iter().zip(&sample.values) {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Matrix rows as nested vectors for JSON output.
pub fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}
