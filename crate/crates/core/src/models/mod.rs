//! Score-model parameterizations.
//!
//! Estimators in this crate interact with a model only through a small
//! capability set: the unnormalized log-density, the score (its gradient in
//! x), the diagonal of the score Jacobian, directional second derivatives,
//! and the parameter gradients of each of those. Everything is closed form;
//! no automatic differentiation is involved, which keeps single evaluations
//! cheap and lets tests pin every derivative against finite differences.
//!
//! Two families are provided: Gaussians (in two parameterizations — a
//! Cholesky factor of the precision for unconstrained fitting, and a raw
//! symmetric precision for L1-penalized graph recovery) and a pairwise
//! square-interaction energy model with quartic tails.

pub mod gaussian;
pub mod ica;

pub use gaussian::{
    sym_theta_len, sym_theta_off_diag_indices, GaussianCholModel, GaussianParams, GaussianSymModel,
};
pub use ica::{IcaModel, IcaParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model family whose member is selected by a flat parameter vector.
///
/// `prepare` digests a parameter vector into whatever cached form makes
/// pointwise evaluation cheap (for Gaussians, the assembled precision
/// matrix). Engines call it once per parameter update and then evaluate the
/// prepared model across a whole batch.
pub trait ScoreModel {
    type Prep: PreparedModel;

    /// Ambient data dimension d.
    fn dim(&self) -> usize;

    /// Length of the flat parameter vector.
    fn n_params(&self) -> usize;

    /// Validates the parameter vector length and caches derived quantities.
    fn prepare(&self, theta: &[f64]) -> Self::Prep;
}

/// Pointwise evaluation of a model at fixed parameters.
///
/// The `add_*` methods accumulate `coeff * gradient` into a caller-owned
/// buffer of length `n_params`, which is how the estimation engines build
/// weighted gradient sums without temporary allocations.
pub trait PreparedModel {
    fn dim(&self) -> usize;
    fn n_params(&self) -> usize;

    /// Unnormalized log-density log q(x) (normalizing constant dropped).
    fn log_unnorm(&self, x: &[f64]) -> f64;

    /// Score s(x) = d/dx log q(x), written into `out` (length d).
    fn score_into(&self, x: &[f64], out: &mut [f64]);

    /// Diagonal of the score Jacobian, (d s_j / d x_j)_j, into `out`.
    fn diag_score_deriv_into(&self, x: &[f64], out: &mut [f64]);

    /// Directional second derivative vᵀ (ds/dx) v of log q at x.
    fn hessian_quad(&self, x: &[f64], v: &[f64]) -> f64;

    /// (ds/dx) v — the score Jacobian applied to a vector — into `out`.
    fn hessian_vec_into(&self, x: &[f64], v: &[f64], out: &mut [f64]);

    /// d/dθ of log q(x), written into `out` (length `n_params`).
    fn grad_theta_log_unnorm_into(&self, x: &[f64], out: &mut [f64]);

    /// Accumulates coeff · d/dθ s(x)_j into `acc`.
    fn add_grad_theta_score_entry(&self, x: &[f64], j: usize, coeff: f64, acc: &mut [f64]);

    /// Accumulates coeff · d/dθ (d s_j / d x_j)(x) into `acc`.
    fn add_grad_theta_diag_score_deriv_entry(
        &self,
        x: &[f64],
        j: usize,
        coeff: f64,
        acc: &mut [f64],
    );

    /// Accumulates coeff · d/dθ (vᵀ (ds/dx) v)(x) into `acc`.
    fn add_grad_theta_hessian_quad(&self, x: &[f64], v: &[f64], coeff: f64, acc: &mut [f64]);

    // ---- allocating conveniences -------------------------------------

    fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(x, &mut out);
        out
    }

    fn diag_score_deriv(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.diag_score_deriv_into(x, &mut out);
        out
    }

    fn grad_theta_log_unnorm(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        self.grad_theta_log_unnorm_into(x, &mut out);
        out
    }

    fn grad_theta_score_entry(&self, x: &[f64], j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        self.add_grad_theta_score_entry(x, j, 1.0, &mut out);
        out
    }

    fn grad_theta_diag_score_deriv_entry(&self, x: &[f64], j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        self.add_grad_theta_diag_score_deriv_entry(x, j, 1.0, &mut out);
        out
    }

    fn grad_theta_hessian_quad(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        self.add_grad_theta_hessian_quad(x, v, 1.0, &mut out);
        out
    }
}

/// On-disk model representation: a tagged family name plus whichever
/// parameter blocks that family uses.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chol_lower: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<Vec<Vec<f64>>>,
}

/// A loaded model of either family.
#[derive(Clone, Debug)]
pub enum AnyParams {
    Gaussian(GaussianParams),
    Ica(IcaParams),
}

impl AnyParams {
    pub fn dim(&self) -> usize {
        match self {
            AnyParams::Gaussian(g) => g.dim(),
            AnyParams::Ica(p) => p.dim(),
        }
    }

    pub fn to_file(&self) -> ModelFile {
        match self {
            AnyParams::Gaussian(g) => ModelFile {
                model: "gaussian".into(),
                mu: Some(g.mu().to_vec()),
                chol_lower: Some(
                    g.chol_lower()
                        .rows()
                        .into_iter()
                        .map(|r| r.to_vec())
                        .collect(),
                ),
                theta: None,
            },
            AnyParams::Ica(p) => ModelFile {
                model: "ica".into(),
                mu: None,
                chol_lower: None,
                theta: Some(p.theta().rows().into_iter().map(|r| r.to_vec()).collect()),
            },
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        match file.model.as_str() {
            "gaussian" => {
                let mu = file
                    .mu
                    .as_ref()
                    .ok_or_else(|| Error::invalid("gaussian model file needs `mu`"))?;
                let rows = file
                    .chol_lower
                    .as_ref()
                    .ok_or_else(|| Error::invalid("gaussian model file needs `chol_lower`"))?;
                let d = mu.len();
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid("chol_lower must be a d x d matrix"));
                }
                let mut l = ndarray::Array2::zeros((d, d));
                for (i, r) in rows.iter().enumerate() {
                    for (j, v) in r.iter().enumerate() {
                        l[(i, j)] = *v;
                    }
                }
                Ok(AnyParams::Gaussian(GaussianParams::new(
                    ndarray::Array1::from_vec(mu.clone()),
                    l,
                )?))
            }
            "ica" => {
                let rows = file
                    .theta
                    .as_ref()
                    .ok_or_else(|| Error::invalid("ica model file needs `theta`"))?;
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid("theta must be a d x d matrix"));
                }
                let mut t = ndarray::Array2::zeros((d, d));
                for (i, r) in rows.iter().enumerate() {
                    for (j, v) in r.iter().enumerate() {
                        t[(i, j)] = *v;
                    }
                }
                Ok(AnyParams::Ica(IcaParams::new(t)?))
            }
            other => Err(Error::invalid(format!("unknown model family {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = self.to_file();
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        Self::from_file(&file)
    }
}
