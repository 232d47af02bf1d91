//! Isotropic Gaussian proposal used to complete missing coordinates.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N(mean, variance * I), able to evaluate and sample any sub-vector of
/// coordinates (the density factorizes across coordinates).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProposalDensity {
    mean: Array1<f64>,
    variance: f64,
}

pub const DEFAULT_PROPOSAL_VARIANCE: f64 = 16.0;

impl ProposalDensity {
    pub fn new(mean: Array1<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::invalid("proposal variance must be positive"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("proposal mean"));
        }
        Ok(Self { mean, variance })
    }

    /// Zero-mean proposal with the default variance of 16.
    pub fn default_for_dim(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            variance: DEFAULT_PROPOSAL_VARIANCE,
        }
    }

    pub fn with_variance(dim: usize, variance: f64) -> Result<Self> {
        Self::new(Array1::zeros(dim), variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Log-density of the sub-vector `values` at coordinates `coords`
    /// (product of the per-coordinate normal densities). Empty sub-vector
    /// has log-density zero.
    pub fn log_density(&self, coords: &[usize], values: &[f64]) -> f64 {
        debug_assert_eq!(coords.len(), values.len());
        let k = coords.len() as f64;
        let mut quad = 0.0;
        for (&j, &v) in coords.iter().zip(values) {
            let c = v - self.mean[j];
            quad += c * c;
        }
        -0.5 * k * (2.0 * std::f64::consts::PI * self.variance).ln() - quad / (2.0 * self.variance)
    }

    /// Draws the coordinates `coords` into `out` (same length).
    pub fn sample_into(&self, coords: &[usize], out: &mut [f64], rng: &mut impl Rng) {
        debug_assert_eq!(coords.len(), out.len());
        let sd = self.variance.sqrt();
        for (slot, &j) in out.iter_mut().zip(coords) {
            let z: f64 = rng.sample(StandardNormal);
            *slot = self.mean[j] + sd * z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_density_matches_the_closed_form() {
        // Two coordinates, variance 16, zero mean, values (1, 3):
        // -ln(2*pi*16) - (1 + 9)/32.
        let p = ProposalDensity::default_for_dim(4);
        let expect = -(2.0 * std::f64::consts::PI * 16.0).ln() - 10.0 / 32.0;
        assert_abs_diff_eq!(p.log_density(&[1, 3], &[1.0, 3.0]), expect, epsilon = 1e-12);
        // Empty sub-vector.
        assert_eq!(p.log_density(&[], &[]), 0.0);
        // Nonzero mean shifts the quadratic term.
        let q = ProposalDensity::new(Array1::from_vec(vec![2.0, 0.0]), 4.0).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln() - (1.0 - 2.0_f64).powi(2) / 8.0;
        assert_abs_diff_eq!(q.log_density(&[0], &[1.0]), expect, epsilon = 1e-12);
    }

    #[test]
    fn samples_have_the_requested_moments() {
        let p = ProposalDensity::new(Array1::from_vec(vec![5.0, -1.0]), 9.0).unwrap();
        let mut rng = crate::rng::stream_rng(11, "proposal-test", &[]);
        let n = 40_000;
        let mut buf = [0.0; 2];
        let (mut m0, mut m1, mut v0) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            p.sample_into(&[0, 1], &mut buf, &mut rng);
            m0 += buf[0];
            m1 += buf[1];
            v0 += (buf[0] - 5.0) * (buf[0] - 5.0);
        }
        let n = n as f64;
        assert_abs_diff_eq!(m0 / n, 5.0, epsilon = 0.06);
        assert_abs_diff_eq!(m1 / n, -1.0, epsilon = 0.06);
        assert_abs_diff_eq!(v0 / n, 9.0, epsilon = 0.3);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(ProposalDensity::new(Array1::zeros(2), 0.0).is_err());
        assert!(ProposalDensity::new(Array1::zeros(2), -1.0).is_err());
        assert!(ProposalDensity::new(Array1::from_vec(vec![f64::NAN]), 1.0).is_err());
    }
}
