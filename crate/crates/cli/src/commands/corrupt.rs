//! `corrupt`: apply a missingness mechanism to a fully observed CSV.

use std::time::Instant;

use serde_json::json;

use margscore::data::{load_csv, write_csv};
use margscore::synth::MissingSpec;

use crate::commands::{dense_matrix, resolve_out};
use crate::config::{parse_pair, FileConfig, MissingSection};
use crate::errors::CliError;
use crate::manifest::write_manifest;
use crate::CorruptArgs;

/// Resolves the missingness mechanism: flags first, then the config's
/// `[missing]` section.
pub fn resolve_missing(
    p: Option<f64>,
    mnar: Option<&str>,
    section: Option<&MissingSection>,
) -> Result<MissingSpec, CliError> {
    match (p, mnar) {
        (Some(_), Some(_)) => Err(CliError::config(
            "give either --p (MCAR) or --mnar-propensity, not both",
        )),
        (Some(p), None) => Ok(MissingSpec::Mcar { p }),
        (None, Some(s)) => {
            let (alpha, beta) = parse_pair(s)?;
            Ok(MissingSpec::MnarLogistic { alpha, beta })
        }
        (None, None) => match section {
            Some(section) => section.lower(),
            None => Err(CliError::config(
                "missingness unspecified: pass --p, --mnar-propensity, or a [missing] section",
            )),
        },
    }
}

pub fn run(args: CorruptArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let file = FileConfig::load(args.config.as_deref())?;
    let data_path = args
        .data
        .or(file.data.clone())
        .ok_or_else(|| CliError::config("corrupt needs --data (or a `data` config key)"))?;
    let input = load_csv(&data_path)?;
    let full = dense_matrix(&input)?;
    let spec = resolve_missing(
        args.p,
        args.mnar_propensity.as_deref(),
        file.missing.as_ref(),
    )?;
    spec.validate()?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out = resolve_out(args.out, file.out.clone())?;

    let outcome = spec.corrupt(full.view(), seed)?;
    let mut masked = outcome.dataset;
    masked.columns = input.columns.clone();
    write_csv(&masked, out.join("masked.csv"))?;

    let kept_rows = masked.n();
    let input_rows = full.nrows();
    let dim = masked.dim;
    let missing_kept: usize = masked
        .samples
        .iter()
        .map(|s| s.pattern.n_missing())
        .sum();
    let dropped = outcome.dropped_all_missing;
    let realized = (missing_kept + dropped * dim) as f64 / (input_rows * dim) as f64;

    write_manifest(
        &out,
        "corrupt",
        seed,
        &json!({ "data": data_path, "missing": spec }),
        json!({
            "realized_missing_fraction": realized,
            "dropped_all_missing_rows": dropped,
            "input_rows": input_rows,
            "kept_rows": kept_rows,
        }),
        start.elapsed().as_secs_f64(),
    )?;
    println!(
        "wrote {} ({kept_rows} rows, realized missing fraction {realized:.4})",
        out.join("masked.csv").display()
    );
    Ok(())
}
