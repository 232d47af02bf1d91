//! Sparse precision estimation over an L1 regularization path.
//!
//! The pipeline fits a Gaussian in the (μ, P) parameterization with P held
//! symmetric, by proximal gradient: each step takes an estimator gradient
//! (importance-weighted, variational, or zero-fill) on a minibatch, then
//! soft-thresholds the off-diagonal precision entries by λ₁·lr. A path runs
//! a warmup block at the largest λ₁ and a short block at each subsequent
//! grid value, snapshotting the precision and its thresholded adjacency
//! after every level. Downstream: ROC/AUC of edge recovery against a known
//! adjacency, a path-roughness score ("jumpiness"), an automatic edge
//! threshold selector built on it, and reference adjacencies extracted from
//! a path run on uncorrupted data.
//!
//! Positive-definiteness is monitored (each snapshot records the smallest
//! eigenvalue) but never enforced: the prox acts directly on P's entries,
//! which is incompatible with a Cholesky parameterization.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::MaskedDataset;
use crate::error::{Error, Result};
use crate::iw::{iw_gradient, iw_objective_mode, IwMode};
use crate::linalg::min_sym_eigenvalue;
use crate::models::gaussian::{sym_upper_idx, GaussianSymModel};
use crate::optim::Adam;
use crate::proposal::ProposalDensity;
use crate::truncation::{TruncationRegion, WeightFunction};
use crate::variational::{
    fisher_var_loss_grad, grad_theta_mode, kl_var_loss_grad, variational_objective, VarLossKind,
    VarMode, VariationalParams,
};
use crate::zeroed::{zeroed_gradient, zeroed_objective};

/// Gaussian parameters for the prox pipeline: mean plus the precision as an
/// explicitly symmetric matrix (the penalized entries are P's off-diagonals,
/// so P cannot live behind a Cholesky factor here).
#[derive(Clone, Debug, PartialEq)]
pub struct SymPrecisionParams {
    pub mu: Array1<f64>,
    pub prec: Array2<f64>,
}

impl SymPrecisionParams {
    /// Validates shapes/finiteness and symmetrizes the precision.
    pub fn new(mu: Array1<f64>, prec: Array2<f64>) -> Result<Self> {
        let d = mu.len();
        if prec.nrows() != d || prec.ncols() != d {
            return Err(Error::invalid("precision must be d x d"));
        }
        if mu.iter().any(|v| !v.is_finite()) || prec.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        let mut out = Self { mu, prec };
        out.symmetrize();
        Ok(out)
    }

    /// Identity precision, zero mean.
    pub fn identity(d: usize) -> Self {
        Self {
            mu: Array1::zeros(d),
            prec: Array2::eye(d),
        }
    }

    /// Path initialization: P = I and μ_j = mean of the observed values in
    /// column j (0 when a column is never observed).
    pub fn init_from_data(data: &MaskedDataset) -> Self {
        let d = data.dim;
        let mut sums = vec![0.0; d];
        let mut counts = vec![0usize; d];
        for sample in &data.samples {
            for (&j, &v) in sample.pattern.observed().iter().zip(&sample.values) {
                sums[j] += v;
                counts[j] += 1;
            }
        }
        let mu = Array1::from_iter((0..d).map(|j| {
            if counts[j] > 0 {
                sums[j] / counts[j] as f64
            } else {
                0.0
            }
        }));
        Self {
            mu,
            prec: Array2::eye(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn symmetrize(&mut self) {
        let d = self.dim();
        for a in 0..d {
            for b in (a + 1)..d {
                let v = 0.5 * (self.prec[(a, b)] + self.prec[(b, a)]);
                self.prec[(a, b)] = v;
                self.prec[(b, a)] = v;
            }
        }
    }
}

/// beta − threshold above the dead zone, beta + threshold below it, else 0.
pub fn soft_threshold(beta: f64, threshold: f64) -> f64 {
    debug_assert!(threshold >= 0.0, "threshold must be nonnegative");
    if beta > threshold {
        beta - threshold
    } else if beta < -threshold {
        beta + threshold
    } else {
        0.0
    }
}

/// One proximal gradient step: descend (μ, P) along the given gradient,
/// symmetrize, then soft-threshold P's off-diagonal entries by λ₁·lr. The
/// precision gradient must arrive symmetric (it is the symmetric projection
/// of the objective gradient); asymmetry beyond roundoff indicates a bug
/// upstream and is an error.
pub fn prox_step(
    params: &SymPrecisionParams,
    grad_mu: &Array1<f64>,
    grad_prec: &Array2<f64>,
    lr: f64,
    lambda1: f64,
) -> Result<SymPrecisionParams> {
    let d = params.dim();
    if grad_mu.len() != d || grad_prec.nrows() != d || grad_prec.ncols() != d {
        return Err(Error::invalid("gradient shape mismatch"));
    }
    if !(lr > 0.0) || lambda1 < 0.0 {
        return Err(Error::invalid(
            "lr must be positive and lambda1 nonnegative",
        ));
    }
    let scale = 1.0 + crate::linalg::frobenius_norm(grad_prec.view());
    for a in 0..d {
        for b in (a + 1)..d {
            if (grad_prec[(a, b)] - grad_prec[(b, a)]).abs() > 1e-8 * scale {
                return Err(Error::invalid(
                    "precision gradient is not symmetric (internal bug guard)",
                ));
            }
        }
    }
    let mu = &params.mu - &(grad_mu * lr);
    let mut prec = &params.prec - &(grad_prec * lr);
    // Symmetrize, then prox on the penalized (off-diagonal) entries.
    let shrink = lambda1 * lr;
    for a in 0..d {
        for b in (a + 1)..d {
            let v = 0.5 * (prec[(a, b)] + prec[(b, a)]);
            let v = soft_threshold(v, shrink);
            prec[(a, b)] = v;
            prec[(b, a)] = v;
        }
    }
    SymPrecisionParams::new(mu, prec)
}

/// Which gradient estimator drives the path.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PathEstimator {
    /// Importance-weighted completions from a broad Gaussian proposal.
    Iw { r: usize, proposal_variance: f64 },
    /// Variational completions with an alternating φ fit.
    Var {
        r: usize,
        hidden: usize,
        inner_steps: usize,
        lr_phi: f64,
        loss: VarLossKind,
    },
    /// Zero-fill baseline (classical score matching on fully observed data).
    Zeroed { factor_two: bool },
}

/// Path schedule and estimator settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegPathConfig {
    /// Strictly decreasing positive regularization levels.
    pub lambda1_grid: Vec<f64>,
    /// Iterations at the largest level before the sweep.
    pub warmup_iters: usize,
    /// Iterations at each subsequent level.
    pub iters_per_level: usize,
    pub learning_rate: f64,
    /// |P_ab| above this marks an edge.
    pub edge_threshold: f64,
    pub estimator: PathEstimator,
    pub batch_size: usize,
    pub seed: u64,
}

impl RegPathConfig {
    /// Geometric grid from `hi` down to `lo`.
    pub fn log_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
        assert!(
            hi > lo && lo > 0.0 && count >= 2,
            "need hi > lo > 0, count >= 2"
        );
        let ratio = (lo / hi).powf(1.0 / (count - 1) as f64);
        let mut grid = Vec::with_capacity(count);
        let mut v = hi;
        for _ in 0..count {
            grid.push(v);
            v *= ratio;
        }
        grid
    }

    /// Default grid for synthetic graphs: 100 levels from 10^−1.7 to 10^−4.
    pub fn synthetic_grid() -> Vec<f64> {
        Self::log_grid(10f64.powf(-1.7), 1e-4, 100)
    }

    /// Default grid for real data: 100 levels from 10 to 10^−4.
    pub fn real_data_grid() -> Vec<f64> {
        Self::log_grid(10.0, 1e-4, 100)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1_grid.is_empty() {
            return Err(Error::invalid("lambda1 grid is empty"));
        }
        if self.lambda1_grid.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::invalid("lambda1 values must be positive"));
        }
        if self.lambda1_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("lambda1 grid must be strictly decreasing"));
        }
        if self.warmup_iters == 0 || self.iters_per_level == 0 {
            return Err(Error::invalid("iteration counts must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.edge_threshold > 0.0) {
            return Err(Error::invalid("edge threshold must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        match &self.estimator {
            PathEstimator::Iw {
                r,
                proposal_variance,
            } => {
                if *r == 0 || !(*proposal_variance > 0.0) {
                    return Err(Error::invalid("iw estimator needs r >= 1 and variance > 0"));
                }
            }
            PathEstimator::Var {
                r,
                hidden,
                inner_steps,
                lr_phi,
                ..
            } => {
                if *r == 0 || *hidden == 0 || *inner_steps == 0 || !(*lr_phi > 0.0) {
                    return Err(Error::invalid("var estimator settings must be positive"));
                }
            }
            PathEstimator::Zeroed { .. } => {}
        }
        Ok(())
    }
}

/// State after one regularization level.
#[derive(Clone, Debug)]
pub struct PathSnapshot {
    pub lambda1: f64,
    pub prec: Array2<f64>,
    pub adjacency: Array2<bool>,
    pub edge_density: f64,
    pub min_eigenvalue: f64,
    /// Estimator objective on the level's last minibatch.
    pub objective: f64,
}

/// The whole path, one snapshot per grid level.
#[derive(Clone, Debug)]
pub struct RegPathResult {
    pub dim: usize,
    pub snapshots: Vec<PathSnapshot>,
}

impl RegPathResult {
    pub fn densities(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.edge_density).collect()
    }

    /// One row per snapshot: lambda1, edge_density, min_eigenvalue, objective.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lambda1", "edge_density", "min_eigenvalue", "objective"])?;
        for s in &self.snapshots {
            w.write_record([
                s.lambda1.to_string(),
                s.edge_density.to_string(),
                s.min_eigenvalue.to_string(),
                s.objective.to_string(),
            ])?;
        }
        w.flush().map_err(Error::Io)?;
        Ok(())
    }
}

/// Thresholded adjacency: an edge wherever |P_ab| > threshold, a ≠ b.
pub fn adjacency_from_precision(prec: &Array2<f64>, threshold: f64) -> Array2<bool> {
    let d = prec.nrows();
    let mut adj = Array2::from_elem((d, d), false);
    for a in 0..d {
        for b in (a + 1)..d {
            // Use the symmetrized magnitude so the result never depends on
            // which triangle is read.
            let v = 0.5 * (prec[(a, b)] + prec[(b, a)]);
            if v.abs() > threshold {
                adj[(a, b)] = true;
                adj[(b, a)] = true;
            }
        }
    }
    adj
}

/// Fraction of the d(d−1)/2 possible edges present.
pub fn edge_density(adjacency: &Array2<bool>) -> f64 {
    let d = adjacency.nrows();
    if d < 2 {
        return 0.0;
    }
    let mut edges = 0usize;
    for a in 0..d {
        for b in (a + 1)..d {
            if adjacency[(a, b)] {
                edges += 1;
            }
        }
    }
    edges as f64 / (d * (d - 1) / 2) as f64
}

/// Writes an adjacency matrix as a 0/1 CSV grid.
pub fn write_adjacency_csv(
    adjacency: &Array2<bool>,
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in adjacency.rows() {
        w.write_record(row.iter().map(|&b| if b { "1" } else { "0" }))?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Flat θ-gradient in the [μ; upper-tri P] layout, split into the mean part
/// and the symmetric-matrix projection of the precision part. Each
/// upper-triangle entry carries the combined sensitivity of both mirrored
/// slots, so the matrix form halves it per slot.
fn split_sym_grad(d: usize, flat: &[f64]) -> (Array1<f64>, Array2<f64>) {
    let grad_mu = Array1::from_iter(flat[..d].iter().copied());
    let mut grad_prec = Array2::zeros((d, d));
    for a in 0..d {
        for b in a..d {
            let g = flat[d + sym_upper_idx(d, a, b)];
            if a == b {
                grad_prec[(a, a)] = g;
            } else {
                grad_prec[(a, b)] = 0.5 * g;
                grad_prec[(b, a)] = 0.5 * g;
            }
        }
    }
    (grad_mu, grad_prec)
}

/// Per-iteration estimator state for the path.
enum EstimatorState {
    Iw {
        r: usize,
        proposal: ProposalDensity,
    },
    Var {
        r: usize,
        inner_steps: usize,
        loss: VarLossKind,
        phi: VariationalParams,
        adam_phi: Adam,
        phi_flat: Vec<f64>,
    },
    Zeroed {
        factor_two: bool,
    },
}

impl EstimatorState {
    fn init(cfg: &RegPathConfig, d: usize) -> Result<Self> {
        Ok(match &cfg.estimator {
            PathEstimator::Iw {
                r,
                proposal_variance,
            } => EstimatorState::Iw {
                r: *r,
                proposal: ProposalDensity::new(Array1::zeros(d), *proposal_variance)?,
            },
            PathEstimator::Var {
                r,
                hidden,
                inner_steps,
                lr_phi,
                loss,
            } => {
                let phi = VariationalParams::new(d, *hidden, cfg.seed ^ 0x9e3779b97f4a7c15)?;
                let adam_phi = Adam::new(*lr_phi, phi.n_params())?;
                let phi_flat = phi.flatten();
                EstimatorState::Var {
                    r: *r,
                    inner_steps: *inner_steps,
                    loss: *loss,
                    phi,
                    adam_phi,
                    phi_flat,
                }
            }
            PathEstimator::Zeroed { factor_two } => EstimatorState::Zeroed {
                factor_two: *factor_two,
            },
        })
    }

    /// Objective value and flat θ-gradient on one minibatch.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        model: &GaussianSymModel,
        theta: &[f64],
        data: &MaskedDataset,
        batch: &[usize],
        truncation: Option<(&TruncationRegion, WeightFunction)>,
        seed: u64,
        t_global: u64,
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            EstimatorState::Zeroed { factor_two } => {
                let obj = zeroed_objective(model, theta, data, batch, *factor_two)?;
                let grad = zeroed_gradient(model, theta, data, batch, *factor_two)?;
                Ok((obj, grad))
            }
            EstimatorState::Iw { r, proposal } => {
                let sub = MaskedDataset::new(
                    data.dim,
                    batch.iter().map(|&i| data.samples[i].clone()).collect(),
                )?;
                let mode = match truncation {
                    Some((region, weight)) => IwMode::Truncated { region, weight },
                    None => IwMode::Plain,
                };
                let obj =
                    iw_objective_mode(model, theta, &sub, proposal, *r, seed, t_global, &mode)?;
                let grad = iw_gradient(model, theta, &sub, proposal, *r, seed, t_global, &mode)?;
                Ok((obj, grad))
            }
            EstimatorState::Var {
                r,
                inner_steps,
                loss,
                phi,
                adam_phi,
                phi_flat,
            } => {
                let any_missing = batch
                    .iter()
                    .any(|&i| !data.samples[i].pattern.is_fully_observed());
                if any_missing {
                    for l in 0..*inner_steps {
                        let epoch = t_global * (*inner_steps as u64) + l as u64;
                        let (_, grad) = match loss {
                            VarLossKind::Kl => {
                                kl_var_loss_grad(phi, model, theta, data, batch, *r, seed, epoch)?
                            }
                            VarLossKind::Fisher => fisher_var_loss_grad(
                                phi, model, theta, data, batch, *r, seed, epoch,
                            )?,
                        };
                        adam_phi.step(phi_flat, &grad)?;
                        phi.unflatten_from(phi_flat);
                    }
                }
                let mode = match truncation {
                    Some((region, weight)) => VarMode::Truncated { region, weight },
                    None => VarMode::Plain,
                };
                let grad =
                    grad_theta_mode(model, theta, data, batch, phi, *r, seed, t_global, &mode)?;
                let obj = variational_objective(
                    model, theta, data, batch, phi, *r, seed, t_global, &mode,
                )?;
                Ok((obj, grad))
            }
        }
    }
}

/// Runs the full regularization path: warmup at the largest λ₁, then a
/// short block per remaining level, snapshotting after each level.
pub fn run_reg_path(
    data: &MaskedDataset,
    cfg: &RegPathConfig,
    truncation: Option<(&TruncationRegion, WeightFunction)>,
) -> Result<RegPathResult> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    let d = data.dim;
    let model = GaussianSymModel::new(d);
    let mut params = SymPrecisionParams::init_from_data(data);
    let mut estimator = EstimatorState::init(cfg, d)?;
    let mut snapshots = Vec::with_capacity(cfg.lambda1_grid.len());
    let mut t_global: u64 = 0;
    for (li, &lambda1) in cfg.lambda1_grid.iter().enumerate() {
        let iters = if li == 0 {
            cfg.warmup_iters
        } else {
            cfg.iters_per_level
        };
        let mut last_objective = f64::NAN;
        for _ in 0..iters {
            let batch = crate::iw::minibatch_indices(data.n(), cfg.batch_size, cfg.seed, t_global);
            let theta = model.pack(&params.mu, &params.prec);
            let (objective, flat_grad) =
                estimator.step(&model, &theta, data, &batch, truncation, cfg.seed, t_global)?;
            if !objective.is_finite() {
                return Err(Error::NonFinite("path objective"));
            }
            let (grad_mu, grad_prec) = split_sym_grad(d, &flat_grad);
            params = prox_step(&params, &grad_mu, &grad_prec, cfg.learning_rate, lambda1)?;
            last_objective = objective;
            t_global += 1;
        }
        let adjacency = adjacency_from_precision(&params.prec, cfg.edge_threshold);
        snapshots.push(PathSnapshot {
            lambda1,
            edge_density: edge_density(&adjacency),
            min_eigenvalue: min_sym_eigenvalue(params.prec.view())?,
            prec: params.prec.clone(),
            adjacency,
            objective: last_objective,
        });
    }
    Ok(RegPathResult { dim: d, snapshots })
}

/// Area under the edge-recovery ROC curve implied by the path's snapshots:
/// per-snapshot (FPR, TPR) over the off-diagonal upper triangle, sorted by
/// FPR, anchored at (0,0) and (1,1), trapezoidal area.
pub fn roc_auc(result: &RegPathResult, truth: &Array2<bool>) -> Result<f64> {
    let d = result.dim;
    if truth.nrows() != d || truth.ncols() != d {
        return Err(Error::invalid("truth adjacency dimension mismatch"));
    }
    for a in 0..d {
        for b in 0..d {
            if truth[(a, b)] != truth[(b, a)] {
                return Err(Error::invalid("truth adjacency must be symmetric"));
            }
        }
    }
    let mut positives = 0usize;
    let mut negatives = 0usize;
    for a in 0..d {
        for b in (a + 1)..d {
            if truth[(a, b)] {
                positives += 1;
            } else {
                negatives += 1;
            }
        }
    }
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid(
            "truth adjacency must contain both edges and non-edges",
        ));
    }
    let mut points: Vec<(f64, f64)> = result
        .snapshots
        .iter()
        .map(|s| {
            let mut tp = 0usize;
            let mut fp = 0usize;
            for a in 0..d {
                for b in (a + 1)..d {
                    if s.adjacency[(a, b)] {
                        if truth[(a, b)] {
                            tp += 1;
                        } else {
                            fp += 1;
                        }
                    }
                }
            }
            (fp as f64 / negatives as f64, tp as f64 / positives as f64)
        })
        .collect();
    points.sort_by(|x, y| x.partial_cmp(y).expect("finite rates"));
    let mut curve = Vec::with_capacity(points.len() + 2);
    curve.push((0.0, 0.0));
    curve.extend(points);
    curve.push((1.0, 1.0));
    let mut area = 0.0;
    for w in curve.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        area += (x1 - x0) * (y0 + y1) * 0.5;
    }
    Ok(area)
}

/// Path roughness: the summed magnitude of density decreases that
/// immediately follow an increase.
pub fn jumpiness(densities: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 2..densities.len() {
        let prev_jump = densities[i - 1] - densities[i - 2];
        let jump = densities[i] - densities[i - 1];
        if jump < 0.0 && prev_jump > 0.0 {
            total += -jump;
        }
    }
    total
}

/// Smallest edge threshold in [lo, hi] whose density sequence stays smooth
/// (jumpiness ≤ level), found by iteratively shrinking a geometric grid
/// around the pass/fail boundary.
pub fn auto_threshold(
    path_at: impl Fn(f64) -> Vec<f64>,
    level: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if !(lo > 0.0) || !(hi > lo) || !(level >= 0.0) {
        return Err(Error::invalid(
            "need 0 < lo < hi and a nonnegative jumpiness level",
        ));
    }
    const GRID: usize = 16;
    let mut lo = lo;
    let mut hi = hi;
    let mut best: Option<f64> = None;
    loop {
        let ratio = (hi / lo).powf(1.0 / (GRID - 1) as f64);
        let candidates: Vec<f64> = (0..GRID).map(|k| lo * ratio.powi(k as i32)).collect();
        let mut pass_idx = None;
        for (k, &t) in candidates.iter().enumerate() {
            if jumpiness(&path_at(t)) <= level {
                pass_idx = Some(k);
                break;
            }
        }
        match pass_idx {
            None => {
                // Nothing passes on this grid; a previously found pass (the
                // right endpoint) still stands, otherwise no threshold works.
                return best.ok_or(Error::NoStableThreshold { level });
            }
            Some(0) => {
                // The smallest candidate already passes.
                return Ok(candidates[0]);
            }
            Some(k) => {
                best = Some(candidates[k]);
                // The boundary lies between the last failing candidate and
                // the first passing one; shrink into that bracket.
                lo = candidates[k - 1];
                hi = candidates[k];
                if (hi - lo) <= 1e-4 * hi {
                    return Ok(hi);
                }
            }
        }
    }
}

/// Reference adjacencies: runs the path with the zero-fill (classical)
/// estimator on fully observed data and picks, for each requested density,
/// the snapshot with the nearest achieved density (ties to the sparser
/// snapshot). A request outside the achieved range is an error.
pub fn ground_truth_path(
    full_data: &MaskedDataset,
    densities: &[f64],
    cfg: &RegPathConfig,
) -> Result<Vec<Array2<bool>>> {
    if full_data
        .samples
        .iter()
        .any(|s| !s.pattern.is_fully_observed())
    {
        return Err(Error::invalid(
            "reference path requires fully observed data",
        ));
    }
    if densities.is_empty() {
        return Err(Error::invalid("no target densities given"));
    }
    let mut ref_cfg = cfg.clone();
    ref_cfg.estimator = PathEstimator::Zeroed { factor_two: true };
    let result = run_reg_path(full_data, &ref_cfg, None)?;
    let achieved = result.densities();
    let max_achieved = achieved.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_achieved = achieved.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out = Vec::with_capacity(densities.len());
    for &target in densities {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::invalid("target density must lie in [0, 1]"));
        }
        if target > max_achieved + 1e-12 || target < min_achieved - 1e-12 {
            let closest = if target > max_achieved {
                max_achieved
            } else {
                min_achieved
            };
            return Err(Error::DensityUnreachable { target, closest });
        }
        let mut best_idx = 0usize;
        for (idx, snap) in result.snapshots.iter().enumerate() {
            let best = &result.snapshots[best_idx];
            let dist = (snap.edge_density - target).abs();
            let best_dist = (best.edge_density - target).abs();
            if dist < best_dist || (dist == best_dist && snap.edge_density < best.edge_density) {
                best_idx = idx;
            }
        }
        out.push(result.snapshots[best_idx].adjacency.clone());
    }
    Ok(out)
}
