//! Minimal dense multilayer perceptron with tanh hidden layers.
//!
//! This is the mean network of the variational family: a few dense layers,
//! batched forward/backward passes built on matrix products, and a flat
//! parameter view so a generic first-order optimizer can drive it. Hidden
//! layers use tanh (the downstream losses differentiate through the network
//! output, so a smooth activation is required); the output layer is linear.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    /// weights[l] has shape (widths[l], widths[l+1]).
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Post-activation values per layer from a forward pass, kept for backprop.
pub struct MlpCache {
    /// activations[0] is the input batch; activations[L] the linear output.
    pub activations: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("nonempty")
    }
}

/// Parameter-shaped gradients from a backward pass.
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Builds a network with the given layer widths (at least input and
    /// output), weights uniform in ±1/√fan_in, biases zero.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("an MLP needs at least two layer widths"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = stream_rng(seed, "mlp-init", &[l as u64]);
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                (rng.random::<f64>() * 2.0 - 1.0) * bound
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("nonempty")
    }

    pub fn n_params(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.len())
            .chain(self.biases.iter().map(|b| b.len()))
            .sum()
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> MlpCache {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(x.to_owned());
        for l in 0..n_layers {
            let prev = activations.last().expect("nonempty");
            let mut z = prev.dot(&self.weights[l]);
            z += &self.biases[l];
            if l + 1 < n_layers {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        MlpCache { activations }
    }

    /// Single-sample convenience forward.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let input = ArrayView2::from_shape((1, x.len()), x).expect("shape");
        let cache = self.forward(input);
        cache.output().row(0).to_vec()
    }

    /// Backpropagates `grad_out` (same shape as the output batch) through a
    /// cached forward pass, returning parameter gradients.
    pub fn backward(&self, cache: &MlpCache, grad_out: ArrayView2<f64>) -> MlpGrads {
        let n_layers = self.weights.len();
        assert_eq!(grad_out.dim(), cache.output().dim(), "grad shape mismatch");
        let mut w_grads: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        let mut b_grads: Vec<Array1<f64>> = Vec::with_capacity(n_layers);
        let mut g = grad_out.to_owned();
        for l in (0..n_layers).rev() {
            let prev = &cache.activations[l];
            w_grads.push(prev.t().dot(&g));
            b_grads.push(g.sum_axis(Axis(0)));
            if l > 0 {
                // Gradient through the tanh that produced activations[l].
                let mut gp = g.dot(&self.weights[l].t());
                gp.zip_mut_with(&cache.activations[l], |gv, &a| *gv *= 1.0 - a * a);
                g = gp;
            }
        }
        w_grads.reverse();
        b_grads.reverse();
        MlpGrads {
            weights: w_grads,
            biases: b_grads,
        }
    }

    /// Writes all parameters into `out` in (W_0, b_0, W_1, b_1, …) order,
    /// weights row-major.
    pub fn flatten_into(&self, out: &mut [f64]) {
        let mut pos = 0;
        for l in 0..self.weights.len() {
            for &v in self.weights[l].iter() {
                out[pos] = v;
                pos += 1;
            }
            for &v in self.biases[l].iter() {
                out[pos] = v;
                pos += 1;
            }
        }
        assert_eq!(pos, out.len(), "flat parameter length mismatch");
    }

    /// Loads all parameters from the flat layout of `flatten_into`.
    pub fn unflatten_from(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for l in 0..self.weights.len() {
            for v in self.weights[l].iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
            for v in self.biases[l].iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        assert_eq!(pos, flat.len(), "flat parameter length mismatch");
    }
}

impl MlpGrads {
    /// Adds `scale` times these gradients into a flat buffer laid out as in
    /// `Mlp::flatten_into`.
    pub fn add_into_flat(&self, scale: f64, out: &mut [f64]) {
        let mut pos = 0;
        for l in 0..self.weights.len() {
            for &v in self.weights[l].iter() {
                out[pos] += scale * v;
                pos += 1;
            }
            for &v in self.biases[l].iter() {
                out[pos] += scale * v;
                pos += 1;
            }
        }
        assert_eq!(pos, out.len(), "flat gradient length mismatch");
    }
}
