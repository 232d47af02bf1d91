//! Importance-weighted marginal score matching.
//!
//! For a partially observed sample only the observed coordinates x_λ carry
//! information, and the objective involves the score of the marginal density
//! over those coordinates. That marginal is an integral over the missing
//! coordinates; this module estimates it by completing each sample r times
//! from an isotropic Gaussian proposal and self-normalizing the importance
//! weights w_k ∝ q_θ(completion) / p′(missing part).
//!
//! Writing Ê[f] = Σ_k w̄_k f(X^(k)) for the self-normalized average over
//! completions, the per-sample objective is
//!
//!   Σ_{j∈λ} [ 2 Ê[∂_j s_j] + 2 Ê[s_j²] − Ê[s_j]² ],
//!
//! which is exactly 2 ∇·ŝ + ‖ŝ‖² for the estimated marginal score
//! ŝ_j = Ê[s_j] once the x-dependence of the weights is accounted for.
//! Because the weights also depend on θ, the exact θ-derivative of Ê[f]
//! for fixed draws is
//!
//!   Γ(f) = Ê[∇_θ f] + Ê[∇_θ ℓ · f] − Ê[∇_θ ℓ] Ê[f],
//!
//! with ℓ the model log-density of the completion; the gradient routine
//! assembles Γ analytically so that it equals finite differences of the
//! objective to the accuracy of the arithmetic.
//!
//! Truncated supports multiply each coordinate term by the boundary weight
//! g and add a 2 ∂_j g · Ê[s_j] correction; informative missingness (MNAR)
//! multiplies each raw weight by the observation propensity of the
//! completion. Both reduce exactly to the plain estimator when their extra
//! structure is trivial (g ≡ 1, constant propensity).

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MaskedDataset, MaskedSample, ObservedPattern, PropensityFn};
use crate::error::{Error, Result};
use crate::models::{PreparedModel, ScoreModel};
use crate::optim::Adam;
use crate::proposal::ProposalDensity;
use crate::rng::stream_rng;
use crate::truncation::{g_scalar_and_grad, TruncationRegion, WeightFunction};

/// Settings for the importance-weighted fitting loop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IwConfig {
    /// Completions drawn per sample per iteration.
    pub r: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iters: usize,
}

impl Default for IwConfig {
    fn default() -> Self {
        Self {
            r: 10,
            seed: 0,
            learning_rate: 0.01,
            batch_size: 100,
            max_iters: 1000,
        }
    }
}

impl IwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::invalid("r must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Estimator variant: plain, truncated-support, or informative missingness.
pub enum IwMode<'a> {
    Plain,
    Truncated {
        region: &'a TruncationRegion,
        weight: WeightFunction,
    },
    Mnar {
        /// Observation propensity φ(pattern, completed x) multiplying each
        /// raw weight; must be finite and nonnegative.
        propensity: &'a PropensityFn,
    },
}

/// Importance weights for one sample's completions.
#[derive(Clone, Debug)]
pub struct WeightBundle {
    /// The completed full vectors, one row per draw.
    pub draws: Array2<f64>,
    /// Unnormalized log-weights log q_θ − log p′ (+ log propensity).
    pub log_raw: Vec<f64>,
    /// Self-normalized weights (sum to 1).
    pub normalized: Vec<f64>,
}

impl WeightBundle {
    /// Effective sample size 1 / Σ w̄_k².
    pub fn ess(&self) -> f64 {
        1.0 / self.normalized.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Completes a sample r times: observed coordinates fixed, missing
/// coordinates drawn from the proposal. Draw k is keyed by
/// (seed, epoch, sample index, k), so repeated calls with the same key
/// reproduce the same completions. A fully observed sample needs no
/// completion and yields its own single row.
pub fn draw_completions(
    pattern: &ObservedPattern,
    obs_values: &[f64],
    proposal: &ProposalDensity,
    r: usize,
    seed: u64,
    epoch: u64,
    idx: u64,
) -> Array2<f64> {
    let d = pattern.dim();
    let mut base = vec![0.0; d];
    for (&j, &v) in pattern.observed().iter().zip(obs_values) {
        base[j] = v;
    }
    if pattern.is_fully_observed() {
        return Array2::from_shape_vec((1, d), base).expect("shape");
    }
    let missing = pattern.missing();
    let mut fill = vec![0.0; missing.len()];
    let mut out = Array2::zeros((r, d));
    for k in 0..r {
        let mut rng = stream_rng(seed, "imp", &[epoch, idx, k as u64]);
        proposal.sample_into(&missing, &mut fill, &mut rng);
        let mut row = out.row_mut(k);
        for (slot, &v) in row.iter_mut().zip(&base) {
            *slot = v;
        }
        for (&j, &v) in missing.iter().zip(&fill) {
            row[j] = v;
        }
    }
    out
}

/// Computes self-normalized weights for a set of completions. Weights are
/// kept in log-space with a max-subtraction before exponentiating.
pub fn compute_weights<P: PreparedModel>(
    prep: &P,
    pattern: &ObservedPattern,
    draws: Array2<f64>,
    proposal: &ProposalDensity,
    mode: &IwMode,
) -> Result<WeightBundle> {
    let k_draws = draws.nrows();
    if pattern.is_fully_observed() {
        return Ok(WeightBundle {
            draws,
            log_raw: vec![0.0; k_draws],
            normalized: vec![1.0 / k_draws as f64; k_draws],
        });
    }
    let missing = pattern.missing();
    let mut miss_vals = vec![0.0; missing.len()];
    let mut log_raw = Vec::with_capacity(k_draws);
    for row in draws.rows() {
        let x = row.as_slice().expect("contiguous row");
        for (slot, &j) in miss_vals.iter_mut().zip(&missing) {
            *slot = x[j];
        }
        let mut lw = prep.log_unnorm(x) - proposal.log_density(&missing, &miss_vals);
        if let IwMode::Mnar { propensity } = mode {
            let phi = propensity(pattern, x);
            if !phi.is_finite() || phi < 0.0 {
                return Err(Error::invalid("propensity must be finite and nonnegative"));
            }
            lw += phi.ln();
        }
        log_raw.push(lw);
    }
    let max = log_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut normalized: Vec<f64> = log_raw.iter().map(|&lw| (lw - max).exp()).collect();
    let sum: f64 = normalized.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    for w in &mut normalized {
        *w /= sum;
    }
    Ok(WeightBundle {
        draws,
        log_raw,
        normalized,
    })
}

/// Per-draw score values at the observed coordinates: s[(k, jj)] is the
/// jj-th observed coordinate of the score at draw k, and h = s² + ∂s pairs
/// each with its diagonal score derivative.
pub(crate) struct DrawMoments {
    pub s: Array2<f64>,
    pub h: Array2<f64>,
}

pub(crate) fn eval_draw_moments<P: PreparedModel>(
    prep: &P,
    pattern: &ObservedPattern,
    draws: &Array2<f64>,
) -> DrawMoments {
    let k_draws = draws.nrows();
    let no = pattern.n_observed();
    let d = pattern.dim();
    let mut sbuf = vec![0.0; d];
    let mut dbuf = vec![0.0; d];
    let mut s = Array2::zeros((k_draws, no));
    let mut h = Array2::zeros((k_draws, no));
    for (k, row) in draws.rows().into_iter().enumerate() {
        let x = row.as_slice().expect("contiguous row");
        prep.score_into(x, &mut sbuf);
        prep.diag_score_deriv_into(x, &mut dbuf);
        for (jj, &j) in pattern.observed().iter().enumerate() {
            let sj = sbuf[j];
            s[(k, jj)] = sj;
            h[(k, jj)] = sj * sj + dbuf[j];
        }
    }
    DrawMoments { s, h }
}

/// Weighted means Ê[s_j] and Ê[h_j] over draws.
pub(crate) fn weighted_stats(m: &DrawMoments, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let no = m.s.ncols();
    let mut es = vec![0.0; no];
    let mut eh = vec![0.0; no];
    for (k, &wk) in w.iter().enumerate() {
        for jj in 0..no {
            es[jj] += wk * m.s[(k, jj)];
            eh[jj] += wk * m.h[(k, jj)];
        }
    }
    (es, eh)
}

/// Per-sample objective Σ_j g_j (2 Ê[h_j] − Ê[s_j]²) + 2 ∂_j g Ê[s_j];
/// `gd` is the shared boundary-weight scalar with its coordinatewise
/// gradient, absent for untruncated supports (g ≡ 1, ∂g ≡ 0).
pub(crate) fn local_objective(es: &[f64], eh: &[f64], gd: Option<(f64, &[f64])>) -> f64 {
    let mut total = 0.0;
    for jj in 0..es.len() {
        let (g, dg) = match gd {
            None => (1.0, 0.0),
            Some((g, dgs)) => (g, dgs[jj]),
        };
        total += g * (2.0 * eh[jj] - es[jj] * es[jj]) + 2.0 * dg * es[jj];
    }
    total
}

/// Adds `scale` times the exact θ-gradient of `local_objective` (for the
/// fixed draws and weights) into `acc`. The assembly groups the Γ operator
/// per draw: each draw contributes its direct ∇_θ terms plus its
/// log-density gradient weighted by the centered coefficient
/// w̄_k (c_k − Σ w̄ c), which carries the θ-dependence of the weights.
pub(crate) fn add_local_gradient<P: PreparedModel>(
    prep: &P,
    pattern: &ObservedPattern,
    draws: &Array2<f64>,
    w: &[f64],
    m: &DrawMoments,
    es: &[f64],
    gd: Option<(f64, &[f64])>,
    scale: f64,
    acc: &mut [f64],
    ell_buf: &mut [f64],
) {
    let no = pattern.n_observed();
    let k_draws = draws.nrows();
    // c_k = Σ_j 2 g h_kj + (2 ∂_j g − 2 g Ê[s_j]) s_kj, and its weighted
    // mean over draws.
    let mut c = vec![0.0; k_draws];
    let mut c_mean = 0.0;
    for k in 0..k_draws {
        let mut ck = 0.0;
        for jj in 0..no {
            let (g, dg) = match gd {
                None => (1.0, 0.0),
                Some((g, dgs)) => (g, dgs[jj]),
            };
            ck += 2.0 * g * m.h[(k, jj)] + (2.0 * dg - 2.0 * g * es[jj]) * m.s[(k, jj)];
        }
        c[k] = ck;
        c_mean += w[k] * ck;
    }
    for k in 0..k_draws {
        let x = draws.row(k);
        let x = x.as_slice().expect("contiguous row");
        // Weight-dependence term: w̄_k (c_k − Ê[c]) ∇_θ ℓ(X^(k)).
        let coeff = w[k] * (c[k] - c_mean);
        if coeff != 0.0 {
            prep.grad_theta_log_unnorm_into(x, ell_buf);
            for (a, &g) in acc.iter_mut().zip(ell_buf.iter()) {
                *a += scale * coeff * g;
            }
        }
        // Direct terms: ∇_θ of s² + ∂s under the fixed weights.
        for (jj, &j) in pattern.observed().iter().enumerate() {
            let (g, dg) = match gd {
                None => (1.0, 0.0),
                Some((g, dgs)) => (g, dgs[jj]),
            };
            let s_coeff = w[k] * (4.0 * g * m.s[(k, jj)] + 2.0 * dg - 2.0 * g * es[jj]);
            prep.add_grad_theta_score_entry(x, j, scale * s_coeff, acc);
            prep.add_grad_theta_diag_score_deriv_entry(x, j, scale * 2.0 * g * w[k], acc);
        }
    }
}

/// The boundary weight of a sample under the given mode, if any.
fn mode_weight(
    mode: &IwMode,
    pattern: &ObservedPattern,
    obs_values: &[f64],
) -> Result<Option<(f64, Vec<f64>)>> {
    match mode {
        IwMode::Truncated { region, weight } => {
            let (g, dg) = g_scalar_and_grad(region, weight, pattern, obs_values)?;
            Ok(Some((g, dg)))
        }
        _ => Ok(None),
    }
}

/// Self-normalized estimate of the marginal score at the sample's observed
/// coordinates: Σ_k w̄_k s_θ(X^(k))_λ. Fully observed samples bypass
/// sampling and return the model score exactly.
pub fn estimate_marginal_score<M: ScoreModel>(
    model: &M,
    theta: &[f64],
    sample: &MaskedSample,
    proposal: &ProposalDensity,
    r: usize,
    seed: u64,
) -> Result<Array1<f64>> {
    let pattern = &sample.pattern;
    if pattern.is_empty() {
        return Err(Error::invalid("sample has no observed coordinates"));
    }
    if r == 0 {
        return Err(Error::invalid("r must be at least 1"));
    }
    let prep = model.prepare(theta);
    if pattern.is_fully_observed() {
        let s = prep.score(&sample.values);
        return Ok(Array1::from_vec(s));
    }
    let draws = draw_completions(pattern, &sample.values, proposal, r, seed, 0, 0);
    let bundle = compute_weights(&prep, pattern, draws, proposal, &IwMode::Plain)?;
    let no = pattern.n_observed();
    let mut out = Array1::zeros(no);
    let mut sbuf = vec![0.0; pattern.dim()];
    for (k, row) in bundle.draws.rows().into_iter().enumerate() {
        let x = row.as_slice().expect("contiguous row");
        prep.score_into(x, &mut sbuf);
        let wk = bundle.normalized[k];
        for (jj, &j) in pattern.observed().iter().enumerate() {
            out[jj] += wk * sbuf[j];
        }
    }
    Ok(out)
}

/// Dataset-mean objective under any mode. Completions for sample i are
/// keyed by (seed, epoch, i, k), so the companion gradient evaluated with
/// the same key differentiates exactly this value.
pub fn iw_objective_mode<M: ScoreModel>(
    model: &M,
    theta: &[f64],
    data: &MaskedDataset,
    proposal: &ProposalDensity,
    r: usize,
    seed: u64,
    epoch: u64,
    mode: &IwMode,
) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    if r == 0 {
        return Err(Error::invalid("r must be at least 1"));
    }
    let prep = model.prepare(theta);
    let mut total = 0.0;
    for (i, sample) in data.samples.iter().enumerate() {
        total += sample_objective(&prep, sample, proposal, r, seed, epoch, i as u64, mode)?;
    }
    let value = total / data.n() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok(value)
}

fn sample_objective<P: PreparedModel>(
    prep: &P,
    sample: &MaskedSample,
    proposal: &ProposalDensity,
    r: usize,
    seed: u64,
    epoch: u64,
    idx: u64,
    mode: &IwMode,
) -> Result<f64> {
    let pattern = &sample.pattern;
    if pattern.is_empty() {
        return Ok(0.0);
    }
    let gd = mode_weight(mode, pattern, &sample.values)?;
    let draws = draw_completions(pattern, &sample.values, proposal, r, seed, epoch, idx);
    let bundle = compute_weights(prep, pattern, draws, proposal, mode)?;
    let moments = eval_draw_moments(prep, pattern, &bundle.draws);
    let (es, eh) = weighted_stats(&moments, &bundle.normalized);
    Ok(local_objective(
        &es,
        &eh,
        gd.as_ref().map(|(g, dg)| (*g, dg.as_slice())),
    ))
}

/// Plain-mode objective.
pub fn iw_objective<M: ScoreModel>(
    model: &M,
    theta: &[f64],
    data: &MaskedDataset,
    proposal: &ProposalDensity,
    r: usize,
    seed: u64,
    epoch: u64,
) -> Result<f64> {
    iw_objective_mode(model, theta, data, proposal, r, seed, epoch, &IwMode::Plain)
}

/// Truncated-support objective with the capped-distance boundary weight.
pub fn iw_objective_truncated<M: ScoreModel>(
    model: &M,
    theta: &[f64],
    data: &MaskedDataset,
    proposal: &ProposalDensity,
    r: usize,
    region: &TruncationRegion,
    weight: WeightFunction,
    seed: u64,
    epoch: u64,
) -> Result<f64> {
    iw_objective_mode(
        model,
        theta,
        data,
        proposal,
        r,
        seed,
        epoch,
        &IwMode::Truncated { region, weight },
    )
}

/// Exact θ-gradient of `iw_objective_mode` for the same (seed, epoch).
pub fn iw_gradient<M: ScoreModel>(
    model: &M,
    theta: &[f64],
    data: &MaskedDataset,
    proposal: &ProposalDensity,
    r: usize,
    seed: u64,
    epoch: u64,
    mode: &IwMode,
) -> Result<Vec<f64>> {
    if data.n() == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    if r == 0 {
        return Err(Error::invalid("r must be at least 1"));
    }
    let prep = model.prepare(theta);
    let mut acc = vec![0.0; model.n_params()];
    let mut ell_buf = vec![0.0; model.n_params()];
    let scale = 1.0 / data.n() as f64;
    for (i, sample) in data.samples.iter().enumerate() {
        add_sample_gradient(
            &prep,
            sample,
            proposal,
            r,
            seed,
            epoch,
            i as u64,
            mode,
            scale,
            &mut acc,
            &mut ell_buf,
        )?;
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(acc)
}

#[allow(clippy::too_many_arguments)]
fn add_sample_gradient<P: PreparedModel>(
    prep: &P,
    sample: &MaskedSample,
    proposal: &ProposalDensity,
    r: usize,
    seed: u64,
    epoch: u64,
    idx: u64,
    mode: &IwMode,
    scale: f64,
    acc: &mut [f64],
    ell_buf: &mut [f64],
) -> Result<()> {
    let pattern = &sample.pattern;
    if pattern.is_empty() {
        return Ok(());
    }
    let gd = mode_weight(mode, pattern, &sample.values)?;
    let draws = draw_completions(pattern, &sample.values, proposal, r, seed, epoch, idx);
    let bundle = compute_weights(prep, pattern, draws, proposal, mode)?;
    let moments = eval_draw_moments(prep, pattern, &bundle.draws);
    let (es, _) = weighted_stats(&moments, &bundle.normalized);
    add_local_gradient(
        prep,
        pattern,
        &bundle.draws,
        &bundle.normalized,
        &moments,
        &es,
        gd.as_ref().map(|(g, dg)| (*g, dg.as_slice())),
        scale,
        acc,
        ell_buf,
    );
    Ok(())
}

/// Deterministic minibatch of indices for iteration `t` (without
/// replacement; the whole dataset when batch_size ≥ n).
pub(crate) fn minibatch_indices(n: usize, batch_size: usize, seed: u64, t: u64) -> Vec<usize> {
    if batch_size >= n {
        return (0..n).collect();
    }
    let mut rng = stream_rng(seed, "batch", &[t]);
    let mut idx: Vec<usize> = (0..n).collect();
    for pos in 0..batch_size {
        let swap = rng.random_range(pos..n);
        idx.swap(pos, swap);
    }
    idx.truncate(batch_size);
    idx
}

/// Minibatch Adam on the importance-weighted objective, re-completing each
/// visited sample's missing coordinates every iteration. Returns the final
/// parameters and the per-iteration minibatch objective.
pub fn fit_iw<M: ScoreModel>(
    model: &M,
    theta0: &[f64],
    data: &MaskedDataset,
    proposal: &ProposalDensity,
    cfg: &IwConfig,
    mode: &IwMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    let mut theta = theta0.to_vec();
    let mut adam = Adam::new(cfg.learning_rate, model.n_params())?;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut grad = vec![0.0; model.n_params()];
    let mut ell_buf = vec![0.0; model.n_params()];
    for t in 0..cfg.max_iters {
        let batch = minibatch_indices(data.n(), cfg.batch_size, cfg.seed, t as u64);
        let prep = model.prepare(&theta);
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut obj = 0.0;
        for &i in &batch {
            let sample = &data.samples[i];
            obj += scale
                * sample_objective(
                    &prep, sample, proposal, cfg.r, cfg.seed, t as u64, i as u64, mode,
                )?;
            add_sample_gradient(
                &prep,
                sample,
                proposal,
                cfg.r,
                cfg.seed,
                t as u64,
                i as u64,
                mode,
                scale,
                &mut grad,
                &mut ell_buf,
            )?;
        }
        if !obj.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        trace.push(obj);
        adam.step(&mut theta, &grad)?;
    }
    Ok((theta, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{fd_grad, max_rel_err};
    use crate::models::gaussian::{GaussianCholModel, GaussianParams};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn tiny_gaussian_data(d: usize, n: usize, miss: f64, seed: u64) -> MaskedDataset {
        let prec = Array2::eye(d) * 1.3;
        let params = GaussianParams::from_precision(Array1::zeros(d), &prec).unwrap();
        let mut rng = stream_rng(seed, "tiny", &[]);
        let full = params.sample(n, &mut rng);
        let outcome = crate::data::corrupt(
            full.view(),
            &crate::data::PropensitySpec::Mcar { p: miss },
            seed ^ 0x5151,
        )
        .unwrap();
        outcome.dataset
    }

    #[test]
    fn fully_observed_marginal_estimate_is_the_exact_score() {
        let model = GaussianCholModel::new(3);
        let theta = model.identity_theta();
        let sample = MaskedSample::new(ObservedPattern::full(3), vec![0.5, -1.0, 2.0]).unwrap();
        let proposal = ProposalDensity::default_for_dim(3);
        let est = estimate_marginal_score(&model, &theta, &sample, &proposal, 7, 3).unwrap();
        let prep = model.prepare(&theta);
        let exact = prep.score(&[0.5, -1.0, 2.0]);
        for (a, b) in est.iter().zip(&exact) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_draw_estimate_is_that_draws_score() {
        let model = GaussianCholModel::new(2);
        let theta = model.identity_theta();
        let pattern = ObservedPattern::new(2, vec![0]).unwrap();
        let sample = MaskedSample::new(pattern.clone(), vec![0.8]).unwrap();
        let proposal = ProposalDensity::default_for_dim(2);
        let est = estimate_marginal_score(&model, &theta, &sample, &proposal, 1, 9).unwrap();
        let draws = draw_completions(&pattern, &[0.8], &proposal, 1, 9, 0, 0);
        let prep = model.prepare(&theta);
        let s = prep.score(draws.row(0).as_slice().unwrap());
        assert_abs_diff_eq!(est[0], s[0], epsilon = 1e-15);
    }

    #[test]
    fn self_normalized_weights_sum_to_one() {
        let model = GaussianCholModel::new(3);
        let theta = model.identity_theta();
        let prep = model.prepare(&theta);
        let proposal = ProposalDensity::default_for_dim(3);
        for seed in 0..20 {
            let pattern = ObservedPattern::new(3, vec![1]).unwrap();
            let draws = draw_completions(&pattern, &[0.3], &proposal, 16, seed, 0, 0);
            let bundle =
                compute_weights(&prep, &pattern, draws, &proposal, &IwMode::Plain).unwrap();
            let total: f64 = bundle.normalized.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert!(bundle.ess() >= 1.0 && bundle.ess() <= 16.0 + 1e-9);
        }
    }

    #[test]
    fn objective_matches_a_raw_sum_transcription_in_one_dimension() {
        // Independent arithmetic path: for d=1 every sample is fully
        // observed, so compare against Y-ratio arithmetic on r identical
        // copies of x: 2*Y2/Y0 - Y1^2/Y0^2 with raw (unnormalized) sums.
        let model = GaussianCholModel::new(1);
        let theta = vec![0.4, 1.2]; // mu, L
        let data = MaskedDataset::from_full(array![[0.3], [-1.1], [2.4]].view()).unwrap();
        let proposal = ProposalDensity::default_for_dim(1);
        let got = iw_objective(&model, &theta, &data, &proposal, 2, 5, 0).unwrap();
        let prep = model.prepare(&theta);
        let mut expect = 0.0;
        for x in [0.3, -1.1, 2.4] {
            // One "draw": the sample itself, raw weight 1 after
            // normalization regardless of scale.
            let w = 1.0f64;
            let y0 = w;
            let s = prep.score(&[x])[0];
            let ds = prep.diag_score_deriv(&[x])[0];
            let y1 = w * s;
            let y2 = w * (ds + s * s);
            expect += 2.0 * y2 / y0 - (y1 * y1) / (y0 * y0);
        }
        expect /= 3.0;
        assert_abs_diff_eq!(got, expect, epsilon = 1e-10);
    }

    #[test]
    fn fully_observed_objective_equals_the_classical_one() {
        let model = GaussianCholModel::new(3);
        let theta = vec![0.1, -0.2, 0.3, 1.1, 0.2, 0.9, -0.1, 0.05, 1.3];
        let data = tiny_gaussian_data(3, 40, 0.0, 7);
        assert!((data.missing_rate() - 0.0).abs() < 1e-12);
        let proposal = ProposalDensity::default_for_dim(3);
        let got = iw_objective(&model, &theta, &data, &proposal, 4, 11, 0).unwrap();
        let prep = model.prepare(&theta);
        let mut classical = 0.0;
        for sample in &data.samples {
            let x = &sample.values;
            let s = prep.score(x);
            let ds = prep.diag_score_deriv(x);
            classical += 2.0 * ds.iter().sum::<f64>() + s.iter().map(|v| v * v).sum::<f64>();
        }
        classical /= data.n() as f64;
        assert_abs_diff_eq!(got, classical, epsilon = 1e-12);
    }

    #[test]
    fn unbounded_region_truncated_objective_is_bitwise_plain() {
        let model = GaussianCholModel::new(2);
        let theta = vec![0.2, -0.4, 1.0, 0.3, 0.8];
        let data = tiny_gaussian_data(2, 30, 0.4, 21);
        let proposal = ProposalDensity::default_for_dim(2);
        let region = TruncationRegion::AxisLower {
            bounds: vec![None, None],
        };
        let plain = iw_objective(&model, &theta, &data, &proposal, 5, 2, 0).unwrap();
        let trunc = iw_objective_truncated(
            &model,
            &theta,
            &data,
            &proposal,
            5,
            &region,
            WeightFunction::default(),
            2,
            0,
        )
        .unwrap();
        assert_eq!(plain, trunc);
    }

    #[test]
    fn gradient_matches_finite_differences_in_every_mode() {
        let model = GaussianCholModel::new(3);
        let theta = vec![0.3, -0.1, 0.2, 1.2, 0.1, 0.9, -0.2, 0.3, 1.1];
        let data = tiny_gaussian_data(3, 6, 0.35, 13);
        let proposal = ProposalDensity::default_for_dim(3);
        let region = TruncationRegion::AxisLower {
            bounds: vec![Some(-6.0), None, Some(-6.0)],
        };
        let wf = WeightFunction::new(2.0).unwrap();
        let phi = |_: &ObservedPattern, x: &[f64]| 1.0 / (1.0 + (-x[0]).exp());

        let modes: Vec<(IwMode, &str)> = vec![
            (IwMode::Plain, "plain"),
            (
                IwMode::Truncated {
                    region: &region,
                    weight: wf,
                },
                "truncated",
            ),
            (IwMode::Mnar { propensity: &phi }, "mnar"),
        ];
        for (mode, name) in &modes {
            let grad = iw_gradient(&model, &theta, &data, &proposal, 4, 17, 0, mode).unwrap();
            let fd = fd_grad(
                |th| iw_objective_mode(&model, th, &data, &proposal, 4, 17, 0, mode).unwrap(),
                &theta,
                1e-5,
            );
            let err = max_rel_err(&grad, &fd);
            assert!(err < 1e-5, "{name}: max relative error {err}");
        }
    }

    #[test]
    fn constant_propensity_with_unit_value_is_bitwise_plain() {
        let model = GaussianCholModel::new(2);
        let theta = vec![0.2, -0.4, 1.0, 0.3, 0.8];
        let data = tiny_gaussian_data(2, 25, 0.4, 3);
        let proposal = ProposalDensity::default_for_dim(2);
        let phi = |_: &ObservedPattern, _: &[f64]| 1.0;
        let g_plain =
            iw_gradient(&model, &theta, &data, &proposal, 6, 5, 0, &IwMode::Plain).unwrap();
        let g_mnar = iw_gradient(
            &model,
            &theta,
            &data,
            &proposal,
            6,
            5,
            0,
            &IwMode::Mnar { propensity: &phi },
        )
        .unwrap();
        assert_eq!(g_plain, g_mnar);
    }

    #[test]
    fn constant_propensity_cancels_in_self_normalization() {
        let model = GaussianCholModel::new(2);
        let theta = vec![0.2, -0.4, 1.0, 0.3, 0.8];
        let data = tiny_gaussian_data(2, 25, 0.4, 3);
        let proposal = ProposalDensity::default_for_dim(2);
        let phi = |_: &ObservedPattern, _: &[f64]| 0.37;
        let g_plain =
            iw_gradient(&model, &theta, &data, &proposal, 6, 5, 0, &IwMode::Plain).unwrap();
        let g_mnar = iw_gradient(
            &model,
            &theta,
            &data,
            &proposal,
            6,
            5,
            0,
            &IwMode::Mnar { propensity: &phi },
        )
        .unwrap();
        assert!(max_rel_err(&g_plain, &g_mnar) < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_the_population_optimum() {
        // One-dimensional data at the true parameters: the population
        // gradient is zero, so the empirical one should sit within noise.
        let d = 1;
        let prec = array![[1.7]];
        let params = GaussianParams::from_precision(Array1::from_vec(vec![0.4]), &prec).unwrap();
        let mut rng = stream_rng(31, "popt", &[]);
        let n = 100_000;
        let full = params.sample(n, &mut rng);
        let data = MaskedDataset::from_full(full.view()).unwrap();
        let model = GaussianCholModel::new(d);
        let theta = params.to_chol_theta();
        let proposal = ProposalDensity::default_for_dim(d);
        let grad = iw_gradient(&model, &theta, &data, &proposal, 1, 1, 0, &IwMode::Plain).unwrap();

        // Per-sample gradient spread for a component-wise standard error.
        let prep = model.prepare(&theta);
        let mut acc = vec![0.0; 2];
        let mut ell = vec![0.0; 2];
        let mut sums = vec![0.0; 2];
        let mut sqs = vec![0.0; 2];
        for sample in &data.samples {
            acc.iter_mut().for_each(|v| *v = 0.0);
            add_sample_gradient(
                &prep,
                sample,
                &proposal,
                1,
                1,
                0,
                0,
                &IwMode::Plain,
                1.0,
                &mut acc,
                &mut ell,
            )
            .unwrap();
            for c in 0..2 {
                sums[c] += acc[c];
                sqs[c] += acc[c] * acc[c];
            }
        }
        for c in 0..2 {
            let mean = sums[c] / n as f64;
            let var = sqs[c] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                grad[c].abs() <= 5.0 * se,
                "component {c}: |{}| > 5 x {se}",
                grad[c]
            );
        }
    }

    #[test]
    fn estimator_variance_shrinks_with_more_draws() {
        let model = GaussianCholModel::new(2);
        let prec = array![[1.0, 0.6], [0.6, 1.5]];
        let params = GaussianParams::from_precision(Array1::zeros(2), &prec).unwrap();
        let theta = params.to_chol_theta();
        let sample =
            MaskedSample::new(ObservedPattern::new(2, vec![0]).unwrap(), vec![0.7]).unwrap();
        let proposal = ProposalDensity::default_for_dim(2);
        let reps = 100;
        let mut prev: Option<(f64, f64)> = None; // (variance, se of variance)
        for r in [1usize, 10, 100, 1000] {
            let vals: Vec<f64> = (0..reps)
                .map(|rep| {
                    estimate_marginal_score(&model, &theta, &sample, &proposal, r, 1000 + rep)
                        .unwrap()[0]
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / reps as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / reps as f64;
            let se = var * (2.0 / (reps as f64 - 1.0)).sqrt();
            if let Some((pv, pse)) = prev {
                assert!(
                    var <= pv + 3.0 * (se + pse),
                    "variance grew from {pv} to {var} at r={r}"
                );
            }
            prev = Some((var, se));
        }
    }

    #[test]
    fn zero_iterations_returns_the_start_point() {
        let model = GaussianCholModel::new(2);
        let theta0 = model.identity_theta();
        let data = tiny_gaussian_data(2, 10, 0.3, 2);
        let proposal = ProposalDensity::default_for_dim(2);
        let cfg = IwConfig {
            max_iters: 0,
            ..IwConfig::default()
        };
        let (theta, trace) =
            fit_iw(&model, &theta0, &data, &proposal, &cfg, &IwMode::Plain).unwrap();
        assert_eq!(theta, theta0);
        assert!(trace.is_empty());
    }

    #[test]
    fn fully_observed_fit_matches_a_classical_fit_step_for_step() {
        // With no missing data the weighted objective is the classical one,
        // so the fitted parameters must track a hand-rolled classical loop
        // using the same minibatch stream.
        let model = GaussianCholModel::new(2);
        let theta0 = model.identity_theta();
        let data = tiny_gaussian_data(2, 60, 0.0, 17);
        let proposal = ProposalDensity::default_for_dim(2);
        let cfg = IwConfig {
            r: 3,
            seed: 9,
            learning_rate: 0.05,
            batch_size: 20,
            max_iters: 40,
        };
        let (theta, _) = fit_iw(&model, &theta0, &data, &proposal, &cfg, &IwMode::Plain).unwrap();

        let mut classical = theta0.clone();
        let mut adam = Adam::new(cfg.learning_rate, model.n_params()).unwrap();
        for t in 0..cfg.max_iters {
            let batch = minibatch_indices(data.n(), cfg.batch_size, cfg.seed, t as u64);
            let prep = model.prepare(&classical);
            let mut grad = vec![0.0; model.n_params()];
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let x = &data.samples[i].values;
                let s = prep.score(x);
                for j in 0..2 {
                    prep.add_grad_theta_score_entry(x, j, scale * 2.0 * s[j], &mut grad);
                    prep.add_grad_theta_diag_score_deriv_entry(x, j, scale * 2.0, &mut grad);
                }
            }
            adam.step(&mut classical, &grad).unwrap();
        }
        for (a, b) in theta.iter().zip(&classical) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn minibatches_are_deterministic_and_valid() {
        let a = minibatch_indices(50, 10, 4, 7);
        let b = minibatch_indices(50, 10, 4, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10, "indices must be distinct");
        assert_eq!(minibatch_indices(5, 10, 4, 7), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn degenerate_weights_are_reported() {
        let model = GaussianCholModel::new(2);
        let theta = model.identity_theta();
        let prep = model.prepare(&theta);
        let pattern = ObservedPattern::new(2, vec![0]).unwrap();
        let proposal = ProposalDensity::default_for_dim(2);
        // A propensity of zero everywhere zeroes every weight.
        let phi = |_: &ObservedPattern, _: &[f64]| 0.0;
        let draws = draw_completions(&pattern, &[0.5], &proposal, 4, 1, 0, 0);
        let res = compute_weights(
            &prep,
            &pattern,
            draws,
            &proposal,
            &IwMode::Mnar { propensity: &phi },
        );
        assert!(matches!(res, Err(Error::DegenerateWeights)));
    }
}
