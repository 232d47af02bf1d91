//! Synthetic experiment designs and evaluation metrics.
//!
//! Generators produce ground-truth parameters (random-rotation Gaussians,
//! star / dense sparse-precision Gaussians, pairwise-interaction energies)
//! and draw data from them; metrics score a fitted model against the truth
//! (exact and Monte-Carlo Fisher divergences, marginal-score divergence
//! under missingness, parameter-space errors). Everything is deterministic
//! given its seed.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{corrupt, CorruptionOutcome, ObservedPattern, PropensitySpec};
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, spd_inverse};
use crate::models::gaussian::GaussianParams;
use crate::models::ica::IcaParams;
use crate::rng::stream_rng;
use crate::truncation::{rejection_sample, TruncationRegion};

/// Probability that a star center links to any given non-center node in the
/// one-center design; multi-center designs scale it down to keep the
/// expected edge density fixed.
pub const HUB_EDGE_PROB: f64 = 0.9;

/// Off-diagonal precision magnitudes are drawn uniformly from this range
/// (sign chosen by fair coin).
pub const EDGE_MAGNITUDE_RANGE: (f64, f64) = (0.25, 0.45);

/// Diagonal entries exceed their row's absolute off-diagonal sum by this
/// margin, which forces positive definiteness.
pub const DIAG_DOMINANCE_MARGIN: f64 = 1.0;

// ---------------------------------------------------------------------------
// Missingness descriptions
// ---------------------------------------------------------------------------

/// Self-contained missingness description. Unlike the corruption mechanism's
/// closure-based specification, this form is serializable, so experiment
/// designs and CLI configs can carry it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MissingSpec {
    /// Each coordinate goes missing independently with probability `p`.
    Mcar { p: f64 },
    /// Value-dependent self-masking: coordinate j goes missing with
    /// probability sigmoid(alpha·x_j + beta). With alpha = 0 this reduces to
    /// Mcar with p = sigmoid(beta).
    MnarLogistic { alpha: f64, beta: f64 },
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Pattern probability under coordinatewise logistic self-masking: the
/// product over missing coordinates of sigmoid(alpha·x_j + beta) and over
/// observed coordinates of its complement. Usable both as the corruption
/// mechanism and as the observation propensity a weight correction needs.
pub fn logistic_self_masking(alpha: f64, beta: f64) -> impl Fn(&ObservedPattern, &[f64]) -> f64 {
    move |pattern, x| {
        let mut observed = vec![false; pattern.dim()];
        for &j in pattern.observed() {
            observed[j] = true;
        }
        let mut w = 1.0;
        for (j, &is_obs) in observed.iter().enumerate() {
            let p_miss = sigmoid(alpha * x[j] + beta);
            w *= if is_obs { 1.0 - p_miss } else { p_miss };
        }
        w
    }
}

impl MissingSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            MissingSpec::Mcar { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::invalid("mcar probability must lie in [0, 1]"));
                }
            }
            MissingSpec::MnarLogistic { alpha, beta } => {
                if !alpha.is_finite() || !beta.is_finite() {
                    return Err(Error::invalid("mnar coefficients must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Applies this mechanism to complete data.
    pub fn corrupt(&self, data: ArrayView2<f64>, seed: u64) -> Result<CorruptionOutcome> {
        self.validate()?;
        match self {
            MissingSpec::Mcar { p } => corrupt(data, &PropensitySpec::Mcar { p: *p }, seed),
            MissingSpec::MnarLogistic { alpha, beta } => {
                let evaluator = logistic_self_masking(*alpha, *beta);
                corrupt(
                    data,
                    &PropensitySpec::Mnar {
                        evaluator: &evaluator,
                    },
                    seed,
                )
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Experiment designs
// ---------------------------------------------------------------------------

/// Which ground truth an experiment draws from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum DesignKind {
    /// Random-rotation Gaussian with a strongly dependent last coordinate.
    RandomGaussian,
    /// Sparse Gaussian whose precision has star-shaped support.
    StarGgm { centers: usize },
    /// Sparse Gaussian with independent edges.
    DenseGgm { edge_prob: f64 },
    /// Pairwise square-interaction energy with the given row-major theta.
    Ica { theta_star: Vec<f64> },
}

/// A full synthetic design: ground-truth family, scale, support truncation,
/// and missingness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub kind: DesignKind,
    pub d: usize,
    pub n: usize,
    pub truncation: Option<TruncationRegion>,
    pub missingness: MissingSpec,
    pub seed: u64,
}

/// Ground-truth parameters produced by a design.
#[derive(Clone, Debug)]
pub enum GroundTruth {
    Gaussian(GaussianParams),
    Ica(IcaParams),
}

impl GroundTruth {
    /// JSON description for manifests (family tag plus dense parameters).
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            GroundTruth::Gaussian(p) => {
                let prec = p.precision();
                serde_json::json!({
                    "family": "gaussian",
                    "mu": p.mu().to_vec(),
                    "precision": prec.rows().into_iter()
                        .map(|r| r.to_vec()).collect::<Vec<_>>(),
                })
            }
            GroundTruth::Ica(p) => serde_json::json!({
                "family": "ica",
                "theta": p.theta().rows().into_iter()
                    .map(|r| r.to_vec()).collect::<Vec<_>>(),
            }),
        }
    }
}

impl ExperimentDesign {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::invalid("designs need d >= 2"));
        }
        if self.n == 0 {
            return Err(Error::invalid("designs need n >= 1"));
        }
        if let Some(region) = &self.truncation {
            if region.dim() != self.d {
                return Err(Error::invalid("truncation dimension mismatch"));
            }
        }
        self.missingness.validate()?;
        match &self.kind {
            DesignKind::StarGgm { centers } => {
                if *centers == 0 || *centers >= self.d {
                    return Err(Error::invalid("need 1 <= centers < d"));
                }
            }
            DesignKind::DenseGgm { edge_prob } => {
                if !(0.0..=1.0).contains(edge_prob) {
                    return Err(Error::invalid("edge probability must lie in [0, 1]"));
                }
            }
            DesignKind::Ica { theta_star } => {
                if theta_star.len() != self.d * self.d {
                    return Err(Error::invalid("ica theta must have d*d entries"));
                }
                if self.truncation.is_some() {
                    return Err(Error::invalid(
                        "truncation is supported for Gaussian designs only",
                    ));
                }
            }
            DesignKind::RandomGaussian => {}
        }
        Ok(())
    }

    /// Ground-truth parameters for this design.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        self.validate()?;
        Ok(match &self.kind {
            DesignKind::RandomGaussian => {
                GroundTruth::Gaussian(gen_random_gaussian(self.d, self.seed)?)
            }
            DesignKind::StarGgm { centers } => {
                GroundTruth::Gaussian(gen_star_precision(self.d, *centers, self.seed)?)
            }
            DesignKind::DenseGgm { edge_prob } => {
                GroundTruth::Gaussian(gen_dense_precision(self.d, *edge_prob, self.seed)?)
            }
            DesignKind::Ica { theta_star } => {
                GroundTruth::Ica(IcaParams::from_theta_vec(self.d, theta_star)?)
            }
        })
    }

    /// Draws the complete (pre-corruption) dataset, honoring truncation.
    pub fn sample_full(&self, truth: &GroundTruth) -> Result<Array2<f64>> {
        self.validate()?;
        match truth {
            GroundTruth::Gaussian(params) => {
                let mut rng = stream_rng(self.seed, "design", &[]);
                match &self.truncation {
                    None => Ok(params.sample(self.n, &mut rng)),
                    Some(region) => rejection_sample(params, region, self.n, &mut rng),
                }
            }
            GroundTruth::Ica(params) => sample_ica(params, self.n, self.seed),
        }
    }
}

// ---------------------------------------------------------------------------
// Gaussian generators
// ---------------------------------------------------------------------------

/// Random-rotation Gaussian: mean 0.5·1; the first d−1 coordinates get a
/// covariance with eigenvalues uniform on [0.5, 1.5] and a random orthogonal
/// eigenbasis; the last coordinate is X_d = ½X₁ + ½Z with Z independent and
/// Var(Z) = Var(X₁), tying it strongly to the first coordinate alone.
pub fn gen_random_gaussian(d: usize, seed: u64) -> Result<GaussianParams> {
    if d < 2 {
        return Err(Error::invalid("need d >= 2"));
    }
    let k = d - 1;
    let mut rng = stream_rng(seed, "gen-rg", &[]);
    let eigs: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut ginibre = Array2::zeros((k, k));
    for v in ginibre.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let q = orthonormalize(ginibre.view())?;
    // Sigma1 = Q diag(eigs) Qᵀ, assembled symmetrically.
    let mut sigma1 = Array2::zeros((k, k));
    for a in 0..k {
        for b in a..k {
            let mut v = 0.0;
            for (i, &lam) in eigs.iter().enumerate() {
                v += q[(a, i)] * lam * q[(b, i)];
            }
            sigma1[(a, b)] = v;
            sigma1[(b, a)] = v;
        }
    }
    // Last coordinate: Var = ½Var(X₁), Cov with X_j = ½Cov(X₁, X_j).
    let mut sigma = Array2::zeros((d, d));
    for a in 0..k {
        for b in 0..k {
            sigma[(a, b)] = sigma1[(a, b)];
        }
    }
    for j in 0..k {
        let c = 0.5 * sigma1[(0, j)];
        sigma[(k, j)] = c;
        sigma[(j, k)] = c;
    }
    sigma[(k, k)] = 0.5 * sigma1[(0, 0)];
    let prec = spd_inverse(sigma.view())?;
    GaussianParams::from_precision(Array1::from_elem(d, 0.5), &prec)
}

/// Shared sparse-precision assembly: magnitudes on the given edges, then a
/// diagonal that dominates each row's absolute sum by a fixed margin.
fn sparse_precision_from_edges(
    d: usize,
    edges: &[(usize, usize)],
    rng: &mut impl Rng,
) -> Result<GaussianParams> {
    let (lo, hi) = EDGE_MAGNITUDE_RANGE;
    let mut prec = Array2::zeros((d, d));
    for &(a, b) in edges {
        let mag = rng.random_range(lo..hi);
        let signed = if rng.random::<bool>() { mag } else { -mag };
        prec[(a, b)] = signed;
        prec[(b, a)] = signed;
    }
    for i in 0..d {
        let row_abs: f64 = (0..d).filter(|&j| j != i).map(|j| prec[(i, j)].abs()).sum();
        prec[(i, i)] = row_abs + DIAG_DOMINANCE_MARGIN;
    }
    GaussianParams::from_precision(Array1::zeros(d), &prec)
}

/// Star-support Gaussian with the default hub-link probability.
pub fn gen_star_precision(d: usize, center_count: usize, seed: u64) -> Result<GaussianParams> {
    gen_star_precision_with(d, center_count, HUB_EDGE_PROB, seed)
}

/// Star-support Gaussian: nodes 0..center_count are centers; each
/// center/non-center pair links with a probability scaled so the expected
/// edge density is the same for every center count (`hub_prob` applies
/// as-is to the one-center design).
pub fn gen_star_precision_with(
    d: usize,
    center_count: usize,
    hub_prob: f64,
    seed: u64,
) -> Result<GaussianParams> {
    if d < 2 || center_count == 0 || center_count >= d {
        return Err(Error::invalid("need d >= 2 and 1 <= center_count < d"));
    }
    if !(0.0..=1.0).contains(&hub_prob) {
        return Err(Error::invalid("hub probability must lie in [0, 1]"));
    }
    let k = center_count as f64;
    let link_prob = (hub_prob * (d as f64 - 1.0) / (k * (d as f64 - k))).min(1.0);
    let mut rng = stream_rng(seed, "gen-star", &[]);
    let mut edges = Vec::new();
    for c in 0..center_count {
        for j in center_count..d {
            if rng.random::<f64>() < link_prob {
                edges.push((c, j));
            }
        }
    }
    sparse_precision_from_edges(d, &edges, &mut rng)
}

/// Erdős–Rényi-support Gaussian: every pair links independently.
pub fn gen_dense_precision(d: usize, edge_prob: f64, seed: u64) -> Result<GaussianParams> {
    if d < 2 {
        return Err(Error::invalid("need d >= 2"));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::invalid("edge probability must lie in [0, 1]"));
    }
    let mut rng = stream_rng(seed, "gen-dense", &[]);
    let mut edges = Vec::new();
    for a in 0..d {
        for b in (a + 1)..d {
            if rng.random::<f64>() < edge_prob {
                edges.push((a, b));
            }
        }
    }
    sparse_precision_from_edges(d, &edges, &mut rng)
}

// ---------------------------------------------------------------------------
// Interaction-model generator and sampler
// ---------------------------------------------------------------------------

/// Ground-truth interaction matrix with small random couplings and a
/// diagonal negative enough that the symmetrization theta + thetaᵀ is
/// strictly diagonally dominant with negative diagonal — which makes the
/// energy integrable.
pub fn gen_ica_theta(d: usize, seed: u64) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(Error::invalid("need d >= 2"));
    }
    let mut rng = stream_rng(seed, "gen-ica", &[]);
    let mut theta: Array2<f64> = Array2::zeros((d, d));
    for a in 0..d {
        for b in 0..d {
            if a != b {
                theta[(a, b)] = rng.random_range(-0.1..0.1);
            }
        }
    }
    const MARGIN: f64 = 0.6;
    for i in 0..d {
        let row_abs: f64 = (0..d)
            .filter(|&j| j != i)
            .map(|j| (theta[(i, j)] + theta[(j, i)]).abs())
            .sum();
        // Symmetrized diagonal 2·theta_ii must dominate the symmetrized
        // off-diagonal row sum.
        theta[(i, i)] = -0.5 * (row_abs + MARGIN);
    }
    Ok(theta.iter().copied().collect())
}

/// Unnormalized log-density of the interaction model at x.
fn ica_log_density(theta: &Array2<f64>, x: &[f64]) -> f64 {
    let d = theta.nrows();
    let y: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mut total = 0.0;
    for a in 0..d {
        for b in 0..d {
            total += theta[(a, b)] * y[a] * y[b];
        }
    }
    total
}

const ICA_BURN_IN: usize = 10_000;
const ICA_THIN: usize = 50;
const ICA_TUNE_WINDOW: usize = 500;

/// Approximate draws from the interaction model via random-walk Metropolis:
/// 10⁴ burn-in steps with the proposal step size adapted toward 20–40%
/// acceptance, then one retained state per 50 steps. Errors when the
/// post-tuning acceptance rate leaves [0.05, 0.8].
pub fn sample_ica(theta_star: &IcaParams, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid("need n >= 1"));
    }
    let d = theta_star.dim();
    let theta = theta_star.theta();
    // Integrability guard: the symmetrization must have a strictly negative,
    // dominant diagonal, or the chain wanders a divergent energy.
    let sym = theta_star.symmetrized();
    for i in 0..d {
        let row_abs: f64 = (0..d).filter(|&j| j != i).map(|j| sym[(i, j)].abs()).sum();
        if !(sym[(i, i)] < 0.0) || sym[(i, i)].abs() <= row_abs {
            return Err(Error::invalid(
                "interaction energy is not integrable: symmetrized theta must be \
                 diagonally dominant with negative diagonal",
            ));
        }
    }
    let mut rng = stream_rng(seed, "ica-mcmc", &[]);
    let mut x = vec![0.0; d];
    let mut lq = ica_log_density(theta, &x);
    let mut step = 1.0;
    let mut window_accepts = 0usize;
    for t in 0..ICA_BURN_IN {
        if metropolis_step(theta, &mut x, &mut lq, step, &mut rng) {
            window_accepts += 1;
        }
        if (t + 1) % ICA_TUNE_WINDOW == 0 {
            let rate = window_accepts as f64 / ICA_TUNE_WINDOW as f64;
            if rate < 0.2 {
                step *= 0.7;
            } else if rate > 0.4 {
                step *= 1.4;
            }
            window_accepts = 0;
        }
    }
    let mut out = Array2::zeros((n, d));
    let mut accepts = 0usize;
    let total = n * ICA_THIN;
    for i in 0..n {
        for _ in 0..ICA_THIN {
            if metropolis_step(theta, &mut x, &mut lq, step, &mut rng) {
                accepts += 1;
            }
        }
        for (slot, &v) in out.row_mut(i).iter_mut().zip(&x) {
            *slot = v;
        }
    }
    let rate = accepts as f64 / total as f64;
    if !(0.05..=0.8).contains(&rate) {
        return Err(Error::invalid(format!(
            "sampler acceptance rate {rate:.3} outside [0.05, 0.8] after tuning"
        )));
    }
    Ok(out)
}

fn metropolis_step(
    theta: &Array2<f64>,
    x: &mut Vec<f64>,
    lq: &mut f64,
    step: f64,
    rng: &mut impl Rng,
) -> bool {
    let proposal: Vec<f64> = x
        .iter()
        .map(|&v| v + step * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lq_new = ica_log_density(theta, &proposal);
    let accept = lq_new - *lq >= 0.0 || rng.random::<f64>().ln() < lq_new - *lq;
    if accept {
        *x = proposal;
        *lq = lq_new;
    }
    accept
}

// ---------------------------------------------------------------------------
// Fisher-divergence metrics
// ---------------------------------------------------------------------------

/// Reference measure for [`fisher_divergence_gaussian`].
pub enum FisherUnder<'a> {
    /// Closed form under the first argument's own Gaussian law.
    Exact,
    /// Monte-Carlo under the first argument's law restricted to a region.
    Truncated {
        region: &'a TruncationRegion,
        mc_n: usize,
        seed: u64,
    },
}

/// E‖s_a(X) − s_b(X)‖² with X drawn from params_a (optionally truncated).
///
/// The exact mode uses the Gaussian identity
///   tr((P_b − P_a) Σ_a (P_b − P_a)) + ‖P_b(μ_a − μ_b)‖².
pub fn fisher_divergence_gaussian(
    params_a: &GaussianParams,
    params_b: &GaussianParams,
    under: &FisherUnder,
) -> Result<f64> {
    let d = params_a.dim();
    if params_b.dim() != d {
        return Err(Error::invalid("parameter dimension mismatch"));
    }
    match under {
        FisherUnder::Exact => {
            let pa = params_a.precision();
            let pb = params_b.precision();
            let sigma_a = params_a.covariance()?;
            let diff = &pb - &pa;
            let quad = diff.dot(&sigma_a).dot(&diff);
            let trace: f64 = (0..d).map(|i| quad[(i, i)]).sum();
            let delta = params_a.mu() - params_b.mu();
            let v = pb.dot(&delta);
            Ok(trace + v.dot(&v))
        }
        FisherUnder::Truncated { region, mc_n, seed } => {
            if *mc_n == 0 {
                return Err(Error::invalid("mc_n must be at least 1"));
            }
            let mut rng = stream_rng(*seed, "fisher-mc", &[]);
            let draws = rejection_sample(params_a, region, *mc_n, &mut rng)?;
            let mut total = 0.0;
            for row in draws.rows() {
                let diff = params_a.score(row) - params_b.score(row);
                total += diff.dot(&diff);
            }
            Ok(total / *mc_n as f64)
        }
    }
}

/// Monte-Carlo marginal-score divergence under coordinatewise missingness:
/// E over (Λ, X_Λ) of ‖s_{Λ,a} − s_{Λ,b}‖², with X ~ params_a and Λ masking
/// each coordinate independently with the given probability. Patterns with
/// nothing observed contribute zero.
pub fn marginal_fisher_divergence(
    params_a: &GaussianParams,
    params_b: &GaussianParams,
    missingness: &MissingSpec,
    mc_n: usize,
    seed: u64,
) -> Result<f64> {
    let d = params_a.dim();
    if params_b.dim() != d {
        return Err(Error::invalid("parameter dimension mismatch"));
    }
    if mc_n == 0 {
        return Err(Error::invalid("mc_n must be at least 1"));
    }
    let p = match missingness {
        MissingSpec::Mcar { p } => *p,
        MissingSpec::MnarLogistic { .. } => {
            return Err(Error::invalid(
                "marginal divergence is defined here for coordinatewise-random \
                 missingness only",
            ));
        }
    };
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("missing probability must lie in [0, 1]"));
    }
    let mut rng = stream_rng(seed, "mfd", &[]);
    let mut total = 0.0;
    for _ in 0..mc_n {
        let x = params_a.sample(1, &mut rng);
        let row = x.row(0);
        let observed: Vec<usize> = (0..d).filter(|_| rng.random::<f64>() >= p).collect();
        if observed.is_empty() {
            continue; // zero-length score, zero contribution
        }
        let obs_values: Vec<f64> = observed.iter().map(|&j| row[j]).collect();
        let pattern = ObservedPattern::new(d, observed)?;
        let sa = params_a.exact_marginal_score(&pattern, &obs_values)?;
        let sb = params_b.exact_marginal_score(&pattern, &obs_values)?;
        let diff = &sa - &sb;
        total += diff.dot(&diff);
    }
    Ok(total / mc_n as f64)
}

// ---------------------------------------------------------------------------
// Parameter-space errors
// ---------------------------------------------------------------------------

/// (‖μ̂ − μ*‖₂, ‖P̂ − P*‖_F) between two Gaussian parameterizations.
pub fn gaussian_param_errors(fit: &GaussianParams, truth: &GaussianParams) -> Result<(f64, f64)> {
    if fit.dim() != truth.dim() {
        return Err(Error::invalid("parameter dimension mismatch"));
    }
    let dmu = fit.mu() - truth.mu();
    let dprec = fit.precision() - truth.precision();
    Ok((
        dmu.dot(&dmu).sqrt(),
        crate::linalg::frobenius_norm(dprec.view()),
    ))
}

/// L2 error between interaction models, compared through the identified
/// symmetrization theta + thetaᵀ (theta itself is not identifiable).
pub fn ica_param_error(fit: &IcaParams, truth: &IcaParams) -> Result<f64> {
    if fit.dim() != truth.dim() {
        return Err(Error::invalid("parameter dimension mismatch"));
    }
    let diff = fit.symmetrized() - truth.symmetrized();
    Ok(crate::linalg::frobenius_norm(diff.view()))
}
