//! Pairwise square-interaction energy model.
//!
//! The unnormalized log-density is log q(x) = sum_{i,j} theta_ij x_i² x_j²
//! with a d x d parameter matrix theta. Only the symmetrization
//! A = theta + thetaᵀ enters the density, so theta itself is identified only
//! up to A; comparisons between fits therefore go through A. With A negative
//! definite the energy decays like -||x||⁴ and the density is proper.
//!
//! Writing y = (x_i²)_i, the derivatives used by the estimators are
//!   s_k(x)            = 2 x_k (A y)_k
//!   d s_k / d x_l     = 2 δ_kl (A y)_k + 4 A_kl x_k x_l
//!   d log q / d θ_ab  = x_a² x_b²
//! and the θ-gradients of the score entries follow by inspection.

use ndarray::Array2;

use super::{PreparedModel, ScoreModel};
use crate::error::{Error, Result};

/// Canonical parameters of the interaction model: the raw d x d matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct IcaParams {
    theta: Array2<f64>,
}

impl IcaParams {
    pub fn new(theta: Array2<f64>) -> Result<Self> {
        if theta.nrows() != theta.ncols() {
            return Err(Error::invalid("interaction matrix must be square"));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("interaction matrix must be finite"));
        }
        Ok(Self { theta })
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    /// The identified symmetrization theta + thetaᵀ.
    pub fn symmetrized(&self) -> Array2<f64> {
        &self.theta + &self.theta.t()
    }

    /// Flat row-major parameter vector for [`IcaModel`].
    pub fn to_theta_vec(&self) -> Vec<f64> {
        self.theta.iter().copied().collect()
    }

    pub fn from_theta_vec(d: usize, theta: &[f64]) -> Result<Self> {
        if theta.len() != d * d {
            return Err(Error::invalid("theta length mismatch"));
        }
        Self::new(Array2::from_shape_vec((d, d), theta.to_vec()).expect("shape"))
    }
}

/// The interaction model as a flat-parameter score model (theta row-major).
#[derive(Clone, Copy, Debug)]
pub struct IcaModel {
    pub d: usize,
}

impl IcaModel {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    /// A proper starting point: theta = -1/2 I (so A = -I).
    pub fn default_theta(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.d * self.d];
        for i in 0..self.d {
            theta[i * self.d + i] = -0.5;
        }
        theta
    }
}

pub struct IcaPrepared {
    d: usize,
    theta: Array2<f64>,
    /// A = theta + thetaᵀ.
    a: Array2<f64>,
}

impl ScoreModel for IcaModel {
    type Prep = IcaPrepared;

    fn dim(&self) -> usize {
        self.d
    }

    fn n_params(&self) -> usize {
        self.d * self.d
    }

    fn prepare(&self, theta: &[f64]) -> IcaPrepared {
        assert_eq!(theta.len(), self.n_params(), "theta length mismatch");
        let t = Array2::from_shape_vec((self.d, self.d), theta.to_vec()).expect("shape");
        let a = &t + &t.t();
        IcaPrepared {
            d: self.d,
            theta: t,
            a,
        }
    }
}

impl IcaPrepared {
    /// (A y)_k with y = (x_i²)_i.
    #[inline]
    fn ay(&self, x: &[f64], k: usize) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            s += self.a[(k, i)] * x[i] * x[i];
        }
        s
    }
}

impl PreparedModel for IcaPrepared {
    fn dim(&self) -> usize {
        self.d
    }

    fn n_params(&self) -> usize {
        self.d * self.d
    }

    fn log_unnorm(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.d {
            let yi = x[i] * x[i];
            if yi == 0.0 {
                continue;
            }
            for j in 0..self.d {
                acc += self.theta[(i, j)] * yi * x[j] * x[j];
            }
        }
        acc
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.d {
            out[k] = 2.0 * x[k] * self.ay(x, k);
        }
    }

    fn diag_score_deriv_into(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.d {
            out[k] = 2.0 * self.ay(x, k) + 4.0 * self.a[(k, k)] * x[k] * x[k];
        }
    }

    fn hessian_quad(&self, x: &[f64], v: &[f64]) -> f64 {
        // sum_kl v_k v_l (2 δ_kl (Ay)_k + 4 A_kl x_k x_l)
        let mut acc = 0.0;
        for k in 0..self.d {
            acc += 2.0 * v[k] * v[k] * self.ay(x, k);
            let wk = v[k] * x[k];
            if wk == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for l in 0..self.d {
                inner += self.a[(k, l)] * v[l] * x[l];
            }
            acc += 4.0 * wk * inner;
        }
        acc
    }

    fn hessian_vec_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        for k in 0..self.d {
            let mut inner = 0.0;
            for l in 0..self.d {
                inner += self.a[(k, l)] * x[l] * v[l];
            }
            out[k] = 2.0 * self.ay(x, k) * v[k] + 4.0 * x[k] * inner;
        }
    }

    fn grad_theta_log_unnorm_into(&self, x: &[f64], out: &mut [f64]) {
        for a in 0..self.d {
            let ya = x[a] * x[a];
            for b in 0..self.d {
                out[a * self.d + b] = ya * x[b] * x[b];
            }
        }
    }

    fn add_grad_theta_score_entry(&self, x: &[f64], k: usize, coeff: f64, acc: &mut [f64]) {
        // d s_k / d θ_ab = 2 x_k (δ_ka x_b² + δ_kb x_a²)
        let c = coeff * 2.0 * x[k];
        for b in 0..self.d {
            acc[k * self.d + b] += c * x[b] * x[b];
        }
        for a in 0..self.d {
            acc[a * self.d + k] += c * x[a] * x[a];
        }
    }

    fn add_grad_theta_diag_score_deriv_entry(
        &self,
        x: &[f64],
        k: usize,
        coeff: f64,
        acc: &mut [f64],
    ) {
        // d(ds_k/dx_k)/dθ_ab = 2(δ_ka x_b² + δ_kb x_a²) + 8 δ_ak δ_bk x_k²
        let c = coeff * 2.0;
        for b in 0..self.d {
            acc[k * self.d + b] += c * x[b] * x[b];
        }
        for a in 0..self.d {
            acc[a * self.d + k] += c * x[a] * x[a];
        }
        acc[k * self.d + k] += coeff * 8.0 * x[k] * x[k];
    }

    fn add_grad_theta_hessian_quad(&self, x: &[f64], v: &[f64], coeff: f64, acc: &mut [f64]) {
        // d(vᵀ(ds/dx)v)/dθ_ab = 2(v_a² x_b² + v_b² x_a²) + 8 (vx)_a (vx)_b
        for a in 0..self.d {
            let ya = x[a] * x[a];
            let wa = v[a] * x[a];
            for b in 0..self.d {
                let g =
                    2.0 * (v[a] * v[a] * x[b] * x[b] + v[b] * v[b] * ya) + 8.0 * wa * v[b] * x[b];
                acc[a * self.d + b] += coeff * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// Hand-computed values at theta = [[-1, -1/2], [-1/2, -1]], x = (1, 2):
    /// A = [[-2, -1], [-1, -2]], y = (1, 4),
    /// log q = -1 - 2 - 2 - 16 = -21,
    /// s = (2·1·(-6), 2·2·(-9)) = (-12, -36),
    /// ds_1/dx_1 = 2(-6) + 4(-2)(1) = -20,
    /// ds_2/dx_2 = 2(-9) + 4(-2)(4) = -50.
    #[test]
    fn hand_values_for_energy_score_and_diagonal() {
        let model = IcaModel::new(2);
        let theta = [-1.0, -0.5, -0.5, -1.0];
        let prep = model.prepare(&theta);
        let x = [1.0, 2.0];
        assert_abs_diff_eq!(prep.log_unnorm(&x), -21.0, epsilon = 1e-12);
        let s = prep.score(&x);
        assert_abs_diff_eq!(s[0], -12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], -36.0, epsilon = 1e-12);
        let dd = prep.diag_score_deriv(&x);
        assert_abs_diff_eq!(dd[0], -20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dd[1], -50.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_is_even_in_every_coordinate() {
        let model = IcaModel::new(3);
        let theta: Vec<f64> = (0..9).map(|i| -0.2 - 0.05 * i as f64).collect();
        let prep = model.prepare(&theta);
        let x = [0.7, -1.1, 0.4];
        let mut flipped = x;
        flipped[1] = -flipped[1];
        assert_abs_diff_eq!(
            prep.log_unnorm(&x),
            prep.log_unnorm(&flipped),
            epsilon = 1e-12
        );
    }

    #[test]
    fn only_the_symmetrization_is_identified() {
        // theta and thetaᵀ give the same density and score.
        let t = array![[-1.0, -0.8], [-0.2, -1.0]];
        let a = IcaModel::new(2).prepare(&t.iter().copied().collect::<Vec<_>>());
        let b = IcaModel::new(2).prepare(&t.t().iter().copied().collect::<Vec<_>>());
        let x = [0.3, -0.9];
        assert_abs_diff_eq!(a.log_unnorm(&x), b.log_unnorm(&x), epsilon = 1e-12);
        assert_abs_diff_eq!(a.score(&x)[0], b.score(&x)[0], epsilon = 1e-12);
        assert_abs_diff_eq!(a.score(&x)[1], b.score(&x)[1], epsilon = 1e-12);
    }
}
