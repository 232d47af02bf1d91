//! Run configuration files: TOML with sections mirroring the library's
//! module configs. Command-line flags override file values field by field,
//! and unknown keys anywhere in a file are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use margscore::experiments::{GaussianDeskConfig, IcaDeskConfig, StarDeskConfig};
use margscore::synth::MissingSpec;
use margscore::truncation::TruncationRegion;
use margscore::variational::{SliceKind, VarLossKind};

use crate::errors::CliError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub design: Option<DesignSection>,
    pub missing: Option<MissingSection>,
    pub truncation: Option<TruncationSection>,
    pub fit: Option<FitSection>,
    pub ggm: Option<GgmSection>,
    pub repro: Option<ReproSection>,
}

impl FileConfig {
    /// Loads the file at `path`, or an empty config when no file was given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::config(format!("config {}: {e}", p.display())))
            }
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub family: Option<String>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub centers: Option<usize>,
    pub edge_prob: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissingSection {
    /// "mcar" or "mnar-logistic".
    pub kind: Option<String>,
    pub p: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl MissingSection {
    pub fn lower(&self) -> Result<MissingSpec, CliError> {
        match self.kind.as_deref() {
            Some("mcar") => {
                let p = self
                    .p
                    .ok_or_else(|| CliError::config("mcar missingness needs `p`"))?;
                Ok(MissingSpec::Mcar { p })
            }
            Some("mnar-logistic") => {
                let alpha = self.alpha.ok_or_else(|| {
                    CliError::config("mnar-logistic missingness needs `alpha`")
                })?;
                let beta = self.beta.ok_or_else(|| {
                    CliError::config("mnar-logistic missingness needs `beta`")
                })?;
                Ok(MissingSpec::MnarLogistic { alpha, beta })
            }
            Some(k) => Err(CliError::config(format!(
                "unknown missingness kind {k:?}; use \"mcar\" or \"mnar-logistic\""
            ))),
            None => Err(CliError::config("missing section needs `kind`")),
        }
    }
}

/// Truncation region in config form. Axis-lower bounds use `nan` for
/// "unbounded below", since TOML arrays cannot hold nulls.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationSection {
    /// "axis-lower" or "half-space".
    pub kind: Option<String>,
    pub bounds: Option<Vec<f64>>,
    pub normal: Option<Vec<f64>>,
    pub offset: Option<f64>,
}

impl TruncationSection {
    /// Loads a bare truncation table from its own TOML file (the
    /// `--truncation FILE` form).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read truncation {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("truncation {}: {e}", path.display())))
    }

    pub fn lower(&self) -> Result<TruncationRegion, CliError> {
        match self.kind.as_deref() {
            Some("axis-lower") => {
                let raw = self.bounds.clone().ok_or_else(|| {
                    CliError::config("axis-lower truncation needs `bounds` (nan = unbounded)")
                })?;
                let bounds = raw
                    .into_iter()
                    .map(|b| if b.is_nan() { None } else { Some(b) })
                    .collect();
                Ok(TruncationRegion::AxisLower { bounds })
            }
            Some("half-space") => {
                let normal = self.normal.clone().ok_or_else(|| {
                    CliError::config("half-space truncation needs `normal`")
                })?;
                let offset = self.offset.ok_or_else(|| {
                    CliError::config("half-space truncation needs `offset`")
                })?;
                Ok(TruncationRegion::HalfSpace { normal, offset })
            }
            Some(k) => Err(CliError::config(format!(
                "unknown truncation kind {k:?}; use \"axis-lower\" or \"half-space\""
            ))),
            None => Err(CliError::config("truncation section needs `kind`")),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub method: Option<String>,
    pub model: Option<String>,
    pub r: Option<usize>,
    pub proposal_var: Option<f64>,
    pub lr: Option<f64>,
    pub lr_phi: Option<f64>,
    pub batch: Option<usize>,
    pub iters: Option<usize>,
    pub inner_steps: Option<usize>,
    pub hidden: Option<usize>,
    pub loss: Option<String>,
    pub sliced: Option<String>,
    pub denoise_levels: Option<Vec<f64>>,
    pub factor_two: Option<bool>,
    pub standardize: Option<bool>,
    /// `[alpha, beta]` of the logistic self-masking propensity.
    pub mnar_propensity: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GgmSection {
    pub estimator: Option<String>,
    pub lambda1_max: Option<f64>,
    pub lambda1_min: Option<f64>,
    pub lambda1_count: Option<usize>,
    pub warmup_iters: Option<usize>,
    pub iters_per_level: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub edge_threshold: Option<f64>,
    pub auto_threshold: Option<bool>,
    pub standardize: Option<bool>,
    pub r: Option<usize>,
    pub proposal_var: Option<f64>,
    pub hidden: Option<usize>,
    pub inner_steps: Option<usize>,
    pub lr_phi: Option<f64>,
    pub loss: Option<String>,
    pub factor_two: Option<bool>,
    pub truth: Option<PathBuf>,
    pub full_data: Option<PathBuf>,
    pub densities: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproSection {
    pub gaussian: Option<GaussianDeskConfig>,
    pub ica: Option<IcaDeskConfig>,
    pub star: Option<StarDeskConfig>,
}

/// Parses a variational loss name.
pub fn parse_loss(name: &str) -> Result<VarLossKind, CliError> {
    match name {
        "kl" => Ok(VarLossKind::Kl),
        "fisher" => Ok(VarLossKind::Fisher),
        other => Err(CliError::config(format!(
            "unknown loss {other:?}; use \"kl\" or \"fisher\""
        ))),
    }
}

/// Parses a slicing direction family name.
pub fn parse_slice(name: &str) -> Result<SliceKind, CliError> {
    match name {
        "rademacher" => Ok(SliceKind::Rademacher),
        "basis" => Ok(SliceKind::Basis),
        other => Err(CliError::config(format!(
            "unknown slicing kind {other:?}; use \"rademacher\" or \"basis\""
        ))),
    }
}

/// Parses "a,b" into a pair of floats.
pub fn parse_pair(s: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::config(format!(
            "expected two comma-separated numbers, got {s:?}"
        )));
    }
    let a = parts[0]
        .parse()
        .map_err(|_| CliError::config(format!("cannot parse {:?} as a number", parts[0])))?;
    let b = parts[1]
        .parse()
        .map_err(|_| CliError::config(format!("cannot parse {:?} as a number", parts[1])))?;
    Ok((a, b))
}

/// Parses "a,b,c" into a list of floats.
pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| CliError::config(format!("cannot parse {t:?} as a number")))
        })
        .collect()
}
