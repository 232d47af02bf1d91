//! Zero-fill baseline: classical score matching evaluated at zero-imputed
//! samples.
//!
//! Each sample contributes Σ_{j observed} c·∂_j s_j(x⁰) + s_j(x⁰)², where
//! x⁰ fills the missing coordinates with zeros. With `factor_two` set
//! (the default) c = 2, matching the classical objective on fully observed
//! data; the flag also admits the c = 1 variant for comparison. The
//! baseline is deterministic and cheap but inconsistent under missingness:
//! zero-filling shifts where the score is probed, so its population
//! minimizer moves away from the truth as soon as coordinates are missing
//! and correlated with observed ones.

use serde::{Deserialize, Serialize};

use crate::data::MaskedDataset;
use crate::error::{Error, Result};
use crate::models::{PreparedModel, ScoreModel};
use crate::optim::Adam;

/// Settings for `fit_zeroed`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZeroedConfig {
    /// Use c = 2 on the divergence term (classical weighting); false gives
    /// the c = 1 variant.
    pub factor_two: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for ZeroedConfig {
    fn default() -> Self {
        Self {
            factor_two: true,
            learning_rate: 0.01,
            batch_size: 100,
            max_iters: 1000,
            seed: 0,
        }
    }
}

fn divergence_coeff(factor_two: bool) -> f64 {
    if factor_two {
        2.0
    } else {
        1.0
    }
}

/// Mean over the selected samples of Σ_{j observed} c ∂_j s_j(x⁰) + s_j(x⁰)².
pub fn zeroed_objective<M: ScoreModel>(
    model: &M,
    theta: &[f64],
    data: &MaskedDataset,
    batch: &[usize],
    factor_two: bool,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    let prep = model.prepare(theta);
    let d = data.dim;
    let c = divergence_coeff(factor_two);
    let mut x0 = vec![0.0; d];
    let mut sbuf = vec![0.0; d];
    let mut dbuf = vec![0.0; d];
    let mut total = 0.0;
    for &i in batch {
        let sample = &data.samples[i];
        x0.iter_mut().for_each(|v| *v = 0.0);
        sample.scatter_into(&mut x0);
        prep.score_into(&x0, &mut sbuf);
        prep.diag_score_deriv_into(&x0, &mut dbuf);
        for &j in sample.pattern.observed() {
            total += c * dbuf[j] + sbuf[j] * sbuf[j];
        }
    }
    let value = total / batch.len() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok(value)
}

/// Exact θ-gradient of `zeroed_objective` (the imputed points are fixed, so
/// each coordinate contributes c ∇∂_j s_j + 2 s_j ∇s_j).
pub fn zeroed_gradient<M: ScoreModel>(
    model: &M,
    theta: &[f64],
    data: &MaskedDataset,
    batch: &[usize],
    factor_two: bool,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    let prep = model.prepare(theta);
    let d = data.dim;
    let c = divergence_coeff(factor_two);
    let scale = 1.0 / batch.len() as f64;
    let mut x0 = vec![0.0; d];
    let mut sbuf = vec![0.0; d];
    let mut acc = vec![0.0; model.n_params()];
    for &i in batch {
        let sample = &data.samples[i];
        x0.iter_mut().for_each(|v| *v = 0.0);
        sample.scatter_into(&mut x0);
        prep.score_into(&x0, &mut sbuf);
        for &j in sample.pattern.observed() {
            prep.add_grad_theta_score_entry(&x0, j, scale * 2.0 * sbuf[j], &mut acc);
            prep.add_grad_theta_diag_score_deriv_entry(&x0, j, scale * c, &mut acc);
        }
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(acc)
}

/// Minibatch Adam on the zero-fill objective. Returns the fitted parameters
/// and the per-iteration objective trace.
pub fn fit_zeroed<M: ScoreModel>(
    model: &M,
    theta0: &[f64],
    data: &MaskedDataset,
    cfg: &ZeroedConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.n() == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut theta = theta0.to_vec();
    let mut adam = Adam::new(cfg.learning_rate, model.n_params())?;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    for t in 0..cfg.max_iters {
        let batch = crate::iw::minibatch_indices(data.n(), cfg.batch_size, cfg.seed, t as u64);
        let value = zeroed_objective(model, &theta, data, &batch, cfg.factor_two)?;
        let grad = zeroed_gradient(model, &theta, data, &batch, cfg.factor_two)?;
        adam.step(&mut theta, &grad)?;
        trace.push(value);
    }
    Ok((theta, trace))
}
