//! Gaussian score models.
//!
//! The unnormalized log-density is log q(x) = -1/2 (x-mu)ᵀ P (x-mu) with
//! precision P, so the score is -P(x-mu) and all parameter derivatives are
//! short closed forms. Two flat parameterizations are provided:
//!
//! * [`GaussianCholModel`] — theta = (mu, vech L) with P = L Lᵀ. Any real
//!   lower-triangular L keeps P positive semidefinite, so unconstrained
//!   optimizers can move freely.
//! * [`GaussianSymModel`] — theta = (mu, vech P) with P symmetric, the
//!   natural parameterization when an L1 penalty acts on individual
//!   precision entries.
//!
//! [`GaussianParams`] is the canonical fitted/ground-truth object and also
//! computes the exact score of any observed margin: for observed set o and
//! missing set m, the margin of N(mu, P⁻¹) has precision equal to the Schur
//! complement P_oo - P_om P_mm⁻¹ P_mo, so the marginal score at x_o is
//! -(P_oo - P_om P_mm⁻¹ P_mo)(x_o - mu_o).

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{PreparedModel, ScoreModel};
use crate::data::ObservedPattern;
use crate::error::{Error, Result};
use crate::linalg;

/// A Gaussian in canonical form: mean plus lower Cholesky factor of the
/// precision matrix (positive diagonal).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    mu: Array1<f64>,
    chol_lower: Array2<f64>,
}

impl GaussianParams {
    /// Validates shape, lower-triangularity, finiteness, and a strictly
    /// positive diagonal.
    pub fn new(mu: Array1<f64>, chol_lower: Array2<f64>) -> Result<Self> {
        let d = mu.len();
        if chol_lower.nrows() != d || chol_lower.ncols() != d {
            return Err(Error::invalid("chol_lower must be d x d"));
        }
        if mu.iter().any(|v| !v.is_finite()) || chol_lower.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("gaussian parameters must be finite"));
        }
        for i in 0..d {
            if !(chol_lower[(i, i)] > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            for j in (i + 1)..d {
                if chol_lower[(i, j)] != 0.0 {
                    return Err(Error::invalid("chol_lower must be lower-triangular"));
                }
            }
        }
        Ok(Self { mu, chol_lower })
    }

    /// Builds canonical parameters from a mean and a symmetric positive
    /// definite precision matrix.
    pub fn from_precision(mu: Array1<f64>, prec: &Array2<f64>) -> Result<Self> {
        let l = linalg::cholesky(prec.view())?;
        Self::new(mu, l)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn chol_lower(&self) -> &Array2<f64> {
        &self.chol_lower
    }

    /// Precision matrix P = L Lᵀ.
    pub fn precision(&self) -> Array2<f64> {
        self.chol_lower.dot(&self.chol_lower.t())
    }

    /// Covariance matrix P⁻¹.
    pub fn covariance(&self) -> Result<Array2<f64>> {
        linalg::spd_inverse(self.precision().view())
    }

    /// Score -P(x - mu) at a complete point.
    pub fn score(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let z = &x.to_owned() - &self.mu;
        -self.precision().dot(&z)
    }

    /// Unnormalized log-density -1/2 (x-mu)ᵀ P (x-mu).
    pub fn log_unnorm(&self, x: ArrayView1<f64>) -> f64 {
        let z = &x.to_owned() - &self.mu;
        let u = self.chol_lower.t().dot(&z);
        -0.5 * u.dot(&u)
    }

    /// Exact score of the observed margin at `x_obs` (length = number of
    /// observed coordinates): -(P_oo - P_om P_mm⁻¹ P_mo)(x_o - mu_o).
    pub fn exact_marginal_score(
        &self,
        pattern: &ObservedPattern,
        x_obs: &[f64],
    ) -> Result<Array1<f64>> {
        if pattern.dim() != self.dim() {
            return Err(Error::invalid("pattern dimension mismatch"));
        }
        if x_obs.len() != pattern.n_observed() {
            return Err(Error::invalid("x_obs length must match observed count"));
        }
        if pattern.is_empty() {
            return Err(Error::invalid("empty pattern has no marginal score"));
        }
        let k = self.marginal_precision(pattern)?;
        let obs = pattern.observed();
        let z = Array1::from_iter(obs.iter().zip(x_obs).map(|(&j, &v)| v - self.mu[j]));
        Ok(-k.dot(&z))
    }

    /// Precision of the observed margin (Schur complement in P of the
    /// missing block).
    pub fn marginal_precision(&self, pattern: &ObservedPattern) -> Result<Array2<f64>> {
        let prec = self.precision();
        let obs = pattern.observed();
        let mis = pattern.missing();
        let no = obs.len();
        let mut p_oo = Array2::zeros((no, no));
        for (a, &i) in obs.iter().enumerate() {
            for (b, &j) in obs.iter().enumerate() {
                p_oo[(a, b)] = prec[(i, j)];
            }
        }
        if mis.is_empty() {
            return Ok(p_oo);
        }
        let nm = mis.len();
        let mut p_mm = Array2::zeros((nm, nm));
        for (a, &i) in mis.iter().enumerate() {
            for (b, &j) in mis.iter().enumerate() {
                p_mm[(a, b)] = prec[(i, j)];
            }
        }
        let mut p_mo = Array2::zeros((nm, no));
        for (a, &i) in mis.iter().enumerate() {
            for (b, &j) in obs.iter().enumerate() {
                p_mo[(a, b)] = prec[(i, j)];
            }
        }
        let l_mm = linalg::cholesky(p_mm.view())?;
        // K = P_oo - P_moᵀ (P_mm⁻¹ P_mo)
        let mut k = p_oo;
        for b in 0..no {
            let zcol = linalg::solve_with_cholesky(l_mm.view(), p_mo.column(b));
            for a in 0..no {
                k[(a, b)] -= p_mo.column(a).dot(&zcol);
            }
        }
        // Symmetrize away solve round-off.
        for a in 0..no {
            for b in (a + 1)..no {
                let v = 0.5 * (k[(a, b)] + k[(b, a)]);
                k[(a, b)] = v;
                k[(b, a)] = v;
            }
        }
        Ok(k)
    }

    /// Draws n samples (rows) via x = mu + L⁻ᵀ z with z standard normal,
    /// which has covariance (L Lᵀ)⁻¹ = P⁻¹.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        let mut z = Array1::zeros(d);
        for mut row in out.rows_mut() {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = linalg::solve_lower_transpose(self.chol_lower.view(), z.view());
            row.assign(&(&x + &self.mu));
        }
        out
    }

    /// Flat parameter vector for [`GaussianCholModel`].
    pub fn to_chol_theta(&self) -> Vec<f64> {
        let d = self.dim();
        let mut theta = Vec::with_capacity(d + d * (d + 1) / 2);
        theta.extend(self.mu.iter());
        for i in 0..d {
            for j in 0..=i {
                theta.push(self.chol_lower[(i, j)]);
            }
        }
        theta
    }

    /// Rebuilds canonical parameters from a [`GaussianCholModel`] vector.
    /// Columns of the factor whose diagonal went negative during
    /// unconstrained optimization are sign-flipped (P = L Lᵀ is unchanged).
    pub fn from_chol_theta(d: usize, theta: &[f64]) -> Result<Self> {
        if theta.len() != d + d * (d + 1) / 2 {
            return Err(Error::invalid("theta length mismatch"));
        }
        let mu = Array1::from_iter(theta[..d].iter().copied());
        let mut l = Array2::zeros((d, d));
        let mut idx = d;
        for i in 0..d {
            for j in 0..=i {
                l[(i, j)] = theta[idx];
                idx += 1;
            }
        }
        for j in 0..d {
            if l[(j, j)] < 0.0 {
                for i in j..d {
                    l[(i, j)] = -l[(i, j)];
                }
            }
        }
        Self::new(mu, l)
    }
}

/// Index of (a, b), a >= b, in the row-major lower-triangle layout.
#[inline]
fn lower_idx(a: usize, b: usize) -> usize {
    a * (a + 1) / 2 + b
}

/// Gaussian model with theta = (mu, vech L), P = L Lᵀ.
#[derive(Clone, Copy, Debug)]
pub struct GaussianCholModel {
    pub d: usize,
}

impl GaussianCholModel {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    /// A neutral starting point: mu = 0, L = I.
    pub fn identity_theta(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_params()];
        for i in 0..self.d {
            theta[self.d + lower_idx(i, i)] = 1.0;
        }
        theta
    }
}

pub struct GaussianCholPrepared {
    d: usize,
    mu: Vec<f64>,
    l: Array2<f64>,
    prec: Array2<f64>,
}

impl ScoreModel for GaussianCholModel {
    type Prep = GaussianCholPrepared;

    fn dim(&self) -> usize {
        self.d
    }

    fn n_params(&self) -> usize {
        self.d + self.d * (self.d + 1) / 2
    }

    fn prepare(&self, theta: &[f64]) -> GaussianCholPrepared {
        assert_eq!(theta.len(), self.n_params(), "theta length mismatch");
        let d = self.d;
        let mu = theta[..d].to_vec();
        let mut l = Array2::zeros((d, d));
        let mut idx = d;
        for i in 0..d {
            for j in 0..=i {
                l[(i, j)] = theta[idx];
                idx += 1;
            }
        }
        let prec = l.dot(&l.t());
        GaussianCholPrepared { d, mu, l, prec }
    }
}

impl GaussianCholPrepared {
    #[inline]
    fn z(&self, x: &[f64], a: usize) -> f64 {
        x[a] - self.mu[a]
    }

    /// u_b = (Lᵀ (x - mu))_b.
    #[inline]
    fn u(&self, x: &[f64], b: usize) -> f64 {
        let mut s = 0.0;
        for r in b..self.d {
            s += self.l[(r, b)] * self.z(x, r);
        }
        s
    }
}

impl PreparedModel for GaussianCholPrepared {
    fn dim(&self) -> usize {
        self.d
    }

    fn n_params(&self) -> usize {
        self.d + self.d * (self.d + 1) / 2
    }

    fn log_unnorm(&self, x: &[f64]) -> f64 {
        // -1/2 ||Lᵀ(x - mu)||²
        let mut acc = 0.0;
        for b in 0..self.d {
            let ub = self.u(x, b);
            acc += ub * ub;
        }
        -0.5 * acc
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.d {
            let mut s = 0.0;
            for c in 0..self.d {
                s += self.prec[(j, c)] * self.z(x, c);
            }
            out[j] = -s;
        }
    }

    fn diag_score_deriv_into(&self, _x: &[f64], out: &mut [f64]) {
        for j in 0..self.d {
            out[j] = -self.prec[(j, j)];
        }
    }

    fn hessian_quad(&self, _x: &[f64], v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for a in 0..self.d {
            for b in 0..self.d {
                acc += v[a] * self.prec[(a, b)] * v[b];
            }
        }
        -acc
    }

    fn hessian_vec_into(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
        for j in 0..self.d {
            let mut s = 0.0;
            for c in 0..self.d {
                s += self.prec[(j, c)] * v[c];
            }
            out[j] = -s;
        }
    }

    fn grad_theta_log_unnorm_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        // d/dmu = P (x - mu)
        for a in 0..d {
            let mut s = 0.0;
            for c in 0..d {
                s += self.prec[(a, c)] * self.z(x, c);
            }
            out[a] = s;
        }
        // d/dL_ab = -(x - mu)_a (Lᵀ(x - mu))_b
        for b in 0..d {
            let ub = self.u(x, b);
            for a in b..d {
                out[d + lower_idx(a, b)] = -self.z(x, a) * ub;
            }
        }
    }

    fn add_grad_theta_score_entry(&self, x: &[f64], j: usize, coeff: f64, acc: &mut [f64]) {
        let d = self.d;
        // d s_j / d mu_a = P_ja
        for a in 0..d {
            acc[a] += coeff * self.prec[(j, a)];
        }
        // d s_j / d L_ab = -delta_aj u_b - L_jb (x - mu)_a   (b <= a, b <= j)
        for b in 0..=j {
            let ljb = self.l[(j, b)];
            if ljb != 0.0 {
                for a in b..d {
                    acc[d + lower_idx(a, b)] -= coeff * ljb * self.z(x, a);
                }
            }
            acc[d + lower_idx(j, b)] -= coeff * self.u(x, b);
        }
    }

    fn add_grad_theta_diag_score_deriv_entry(
        &self,
        _x: &[f64],
        j: usize,
        coeff: f64,
        acc: &mut [f64],
    ) {
        // d(-P_jj)/dL_jb = -2 L_jb
        let d = self.d;
        for b in 0..=j {
            acc[d + lower_idx(j, b)] -= coeff * 2.0 * self.l[(j, b)];
        }
    }

    fn add_grad_theta_hessian_quad(&self, _x: &[f64], v: &[f64], coeff: f64, acc: &mut [f64]) {
        // d(-vᵀPv)/dL_ab = -2 v_a (Lᵀ v)_b
        let d = self.d;
        for b in 0..d {
            let mut tb = 0.0;
            for r in b..d {
                tb += self.l[(r, b)] * v[r];
            }
            if tb == 0.0 {
                continue;
            }
            for a in b..d {
                acc[d + lower_idx(a, b)] -= coeff * 2.0 * v[a] * tb;
            }
        }
    }
}

/// Length of the (mu, vech P) parameter vector of [`GaussianSymModel`].
pub fn sym_theta_len(d: usize) -> usize {
    d + d * (d + 1) / 2
}

/// Index of (a, b), a <= b, in the row-major upper-triangle layout that
/// [`GaussianSymModel`] uses after the mean block. Row a starts at
/// a·(2d - a + 1)/2 and holds entries (a, a) ... (a, d-1).
#[inline]
pub(crate) fn sym_upper_idx(d: usize, a: usize, b: usize) -> usize {
    a * (2 * d - a + 1) / 2 + (b - a)
}

/// Positions within the flat (mu, vech P) vector that hold off-diagonal
/// precision entries — the coordinates an L1 penalty applies to.
pub fn sym_theta_off_diag_indices(d: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(d * (d - 1) / 2);
    for a in 0..d {
        for b in a..d {
            if a != b {
                idx.push(d + sym_upper_idx(d, a, b));
            }
        }
    }
    idx
}

/// Gaussian model with theta = (mu, vech P), P symmetric.
#[derive(Clone, Copy, Debug)]
pub struct GaussianSymModel {
    pub d: usize,
}

impl GaussianSymModel {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    /// theta for mu = 0, P = I.
    pub fn identity_theta(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_params()];
        for i in 0..self.d {
            theta[self.d + sym_upper_idx(self.d, i, i)] = 1.0;
        }
        theta
    }

    /// Packs (mu, P) into the flat vector (upper triangle of P, row-major).
    pub fn pack(&self, mu: &Array1<f64>, prec: &Array2<f64>) -> Vec<f64> {
        let d = self.d;
        let mut theta = vec![0.0; self.n_params()];
        theta[..d].copy_from_slice(mu.as_slice().expect("contiguous"));
        for a in 0..d {
            for b in a..d {
                theta[d + sym_upper_idx(d, a, b)] = prec[(a, b)];
            }
        }
        theta
    }

    /// Unpacks the flat vector into (mu, symmetric P).
    pub fn unpack(&self, theta: &[f64]) -> (Array1<f64>, Array2<f64>) {
        let d = self.d;
        let mu = Array1::from_iter(theta[..d].iter().copied());
        let mut prec = Array2::zeros((d, d));
        for a in 0..d {
            for b in a..d {
                let v = theta[d + sym_upper_idx(d, a, b)];
                prec[(a, b)] = v;
                prec[(b, a)] = v;
            }
        }
        (mu, prec)
    }
}

pub struct GaussianSymPrepared {
    d: usize,
    mu: Vec<f64>,
    prec: Array2<f64>,
}

impl ScoreModel for GaussianSymModel {
    type Prep = GaussianSymPrepared;

    fn dim(&self) -> usize {
        self.d
    }

    fn n_params(&self) -> usize {
        sym_theta_len(self.d)
    }

    fn prepare(&self, theta: &[f64]) -> GaussianSymPrepared {
        assert_eq!(theta.len(), self.n_params(), "theta length mismatch");
        let (mu, prec) = self.unpack(theta);
        GaussianSymPrepared {
            d: self.d,
            mu: mu.to_vec(),
            prec,
        }
    }
}

impl GaussianSymPrepared {
    #[inline]
    fn z(&self, x: &[f64], a: usize) -> f64 {
        x[a] - self.mu[a]
    }
}

impl PreparedModel for GaussianSymPrepared {
    fn dim(&self) -> usize {
        self.d
    }

    fn n_params(&self) -> usize {
        sym_theta_len(self.d)
    }

    fn log_unnorm(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for a in 0..self.d {
            for b in 0..self.d {
                acc += self.z(x, a) * self.prec[(a, b)] * self.z(x, b);
            }
        }
        -0.5 * acc
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.d {
            let mut s = 0.0;
            for c in 0..self.d {
                s += self.prec[(j, c)] * self.z(x, c);
            }
            out[j] = -s;
        }
    }

    fn diag_score_deriv_into(&self, _x: &[f64], out: &mut [f64]) {
        for j in 0..self.d {
            out[j] = -self.prec[(j, j)];
        }
    }

    fn hessian_quad(&self, _x: &[f64], v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for a in 0..self.d {
            for b in 0..self.d {
                acc += v[a] * self.prec[(a, b)] * v[b];
            }
        }
        -acc
    }

    fn hessian_vec_into(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
        for j in 0..self.d {
            let mut s = 0.0;
            for c in 0..self.d {
                s += self.prec[(j, c)] * v[c];
            }
            out[j] = -s;
        }
    }

    fn grad_theta_log_unnorm_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        for a in 0..d {
            let mut s = 0.0;
            for c in 0..d {
                s += self.prec[(a, c)] * self.z(x, c);
            }
            out[a] = s;
        }
        for a in 0..d {
            let za = self.z(x, a);
            for b in a..d {
                let g = if a == b {
                    -0.5 * za * za
                } else {
                    -za * self.z(x, b)
                };
                out[d + sym_upper_idx(d, a, b)] = g;
            }
        }
    }

    fn add_grad_theta_score_entry(&self, x: &[f64], j: usize, coeff: f64, acc: &mut [f64]) {
        let d = self.d;
        for a in 0..d {
            acc[a] += coeff * self.prec[(j, a)];
        }
        // s_j = -sum_c P_jc z_c; entry (a, b) with a <= b feeds s_j when
        // j == a (coefficient z_b) or j == b (coefficient z_a).
        for b in j..d {
            acc[d + sym_upper_idx(d, j, b)] -= coeff * self.z(x, b);
        }
        for a in 0..j {
            acc[d + sym_upper_idx(d, a, j)] -= coeff * self.z(x, a);
        }
    }

    fn add_grad_theta_diag_score_deriv_entry(
        &self,
        _x: &[f64],
        j: usize,
        coeff: f64,
        acc: &mut [f64],
    ) {
        acc[self.d + sym_upper_idx(self.d, j, j)] -= coeff;
    }

    fn add_grad_theta_hessian_quad(&self, _x: &[f64], v: &[f64], coeff: f64, acc: &mut [f64]) {
        let d = self.d;
        for a in 0..d {
            for b in a..d {
                let g = if a == b {
                    -v[a] * v[a]
                } else {
                    -2.0 * v[a] * v[b]
                };
                acc[d + sym_upper_idx(d, a, b)] += coeff * g;
            }
        }
    }
}
