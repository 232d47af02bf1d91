//! Truncated supports and the boundary-vanishing weight they induce.
//!
//! When data live on a truncated region, score matching needs a weight
//! function g that vanishes at the boundary so the integration by parts
//! behind the objective has no boundary term. The weight used here is the
//! capped distance to the region boundary, evaluated on the observed
//! coordinates of each sample: every observed coordinate shares the scalar
//! g = min(distance, cap), and the weight's gradient is the distance
//! gradient wherever the cap is not binding.
//!
//! A pattern whose observed coordinates are not constrained by the region
//! (an axis region with no bound on any observed coordinate, or a half-space
//! involving a missing coordinate) has an unbounded observed margin, so g is
//! the cap with zero gradient.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservedPattern;
use crate::error::{Error, Result};
use crate::models::GaussianParams;

/// A truncation region: data are kept when they satisfy the constraint.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruncationRegion {
    /// Keep x with x_j >= bounds[j] for every coordinate with a bound.
    AxisLower { bounds: Vec<Option<f64>> },
    /// Keep x with normal · x >= offset.
    HalfSpace { normal: Vec<f64>, offset: f64 },
}

impl TruncationRegion {
    pub fn dim(&self) -> usize {
        match self {
            TruncationRegion::AxisLower { bounds } => bounds.len(),
            TruncationRegion::HalfSpace { normal, .. } => normal.len(),
        }
    }

    /// Whether a complete point lies in the region.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            TruncationRegion::AxisLower { bounds } => bounds
                .iter()
                .zip(x)
                .all(|(b, &v)| b.map_or(true, |lo| v >= lo)),
            TruncationRegion::HalfSpace { normal, offset } => {
                let dot: f64 = normal.iter().zip(x).map(|(a, v)| a * v).sum();
                dot >= *offset
            }
        }
    }

    fn validate_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::invalid(format!(
                "region dimension {} does not match data dimension {dim}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Capped-distance boundary weight g = min(distance, cap).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WeightFunction {
    pub cap: f64,
}

impl Default for WeightFunction {
    fn default() -> Self {
        Self { cap: 1.0 }
    }
}

impl WeightFunction {
    pub fn new(cap: f64) -> Result<Self> {
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(Error::invalid("weight cap must be positive"));
        }
        Ok(Self { cap })
    }
}

/// The shared weight scalar and its gradient in the observed coordinates.
///
/// Returns (g, dg) with dg.len() == pattern.n_observed(). Errors when the
/// observed sub-vector already violates the region.
pub fn g_scalar_and_grad(
    region: &TruncationRegion,
    weight: &WeightFunction,
    pattern: &ObservedPattern,
    x_obs: &[f64],
) -> Result<(f64, Vec<f64>)> {
    region.validate_dim(pattern.dim())?;
    if x_obs.len() != pattern.n_observed() {
        return Err(Error::invalid("x_obs length must match observed count"));
    }
    let no = pattern.n_observed();
    let mut grad = vec![0.0; no];
    let dist: Option<(f64, Vec<f64>)> = match region {
        TruncationRegion::AxisLower { bounds } => {
            // Distance to the nearest bounded face among observed
            // coordinates; first such coordinate wins ties.
            let mut best: Option<(f64, usize)> = None;
            for (k, &j) in pattern.observed().iter().enumerate() {
                if let Some(lo) = bounds[j] {
                    let dj = x_obs[k] - lo;
                    if best.map_or(true, |(bd, _)| dj < bd) {
                        best = Some((dj, k));
                    }
                }
            }
            best.map(|(dj, k)| {
                let mut dg = vec![0.0; no];
                dg[k] = 1.0;
                (dj, dg)
            })
        }
        TruncationRegion::HalfSpace { normal, offset } => {
            // The observed margin is constrained only when every coordinate
            // the constraint touches is observed.
            let touched_all_observed = normal
                .iter()
                .enumerate()
                .all(|(j, &a)| a == 0.0 || pattern.is_observed(j));
            if !touched_all_observed {
                None
            } else {
                let mut dot = 0.0;
                let mut norm_sq = 0.0;
                for (k, &j) in pattern.observed().iter().enumerate() {
                    dot += normal[j] * x_obs[k];
                    norm_sq += normal[j] * normal[j];
                }
                if norm_sq == 0.0 {
                    None
                } else {
                    let norm = norm_sq.sqrt();
                    let dg = pattern
                        .observed()
                        .iter()
                        .map(|&j| normal[j] / norm)
                        .collect();
                    Some(((dot - offset) / norm, dg))
                }
            }
        }
    };
    match dist {
        None => Ok((weight.cap, grad)),
        Some((d, dg)) => {
            if d < 0.0 {
                return Err(Error::invalid(format!(
                    "observed point lies outside the truncation region (distance {d:.6})"
                )));
            }
            if d >= weight.cap {
                Ok((weight.cap, grad))
            } else {
                grad.copy_from_slice(&dg);
                Ok((d, grad))
            }
        }
    }
}

/// Weight vector over observed coordinates: every entry is the shared
/// scalar min(distance, cap).
pub fn g_value(
    region: &TruncationRegion,
    weight: &WeightFunction,
    pattern: &ObservedPattern,
    x_obs: &[f64],
) -> Result<Array1<f64>> {
    let (g, _) = g_scalar_and_grad(region, weight, pattern, x_obs)?;
    Ok(Array1::from_elem(pattern.n_observed(), g))
}

/// Coordinatewise partial derivatives of the shared weight scalar with
/// respect to the observed coordinates.
pub fn g_grad(
    region: &TruncationRegion,
    weight: &WeightFunction,
    pattern: &ObservedPattern,
    x_obs: &[f64],
) -> Result<Array1<f64>> {
    let (_, dg) = g_scalar_and_grad(region, weight, pattern, x_obs)?;
    Ok(Array1::from_vec(dg))
}

/// Draws n samples from a Gaussian restricted to the region by rejection.
/// Gives up once total proposals exceed 1000 per requested sample.
pub fn rejection_sample(
    params: &GaussianParams,
    region: &TruncationRegion,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    region.validate_dim(params.dim())?;
    let budget = n.saturating_mul(1000);
    let mut out = Array2::zeros((n, params.dim()));
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < n {
        if attempts >= budget {
            return Err(Error::RejectionBudget {
                attempts,
                accepted,
                target: n,
            });
        }
        let x = params.sample(1, rng);
        attempts += 1;
        let row = x.row(0);
        if region.contains(row.as_slice().expect("contiguous")) {
            out.row_mut(accepted).assign(&row);
            accepted += 1;
        }
    }
    Ok(out)
}
