//! A small fully connected network with tanh hidden layers, a linear output
//! and hand-written reverse-mode parameter gradients.
//!
//! The default shape is 2 -> 32 -> 32 -> 1. Weights are stored in one flat
//! vector, laid out layer by layer as `[W, b]` with `W` in row-major order,
//! so actor-critic updates can treat the whole network as a parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Feed-forward network specification plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by each layer's post-activation output.
    activations: Vec<Vec<f64>>,
}

impl Mlp {
    pub const DEFAULT_WIDTHS: [usize; 4] = [2, 32, 32, 1];

    /// Glorot-uniform weights (`+- sqrt(6/(fan_in+fan_out))`), zero biases.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2 && *widths.last().unwrap() == 1, "scalar output expected");
        let mut params = Vec::with_capacity(Self::param_count(widths));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-limit..limit));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Mlp { widths: widths.to_vec(), params }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Mlp { widths: widths.to_vec(), params: vec![0.0; Self::param_count(widths)] }
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Option<Self> {
        (params.len() == Self::param_count(widths))
            .then_some(Mlp { widths: widths.to_vec(), params })
    }

    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn add_scaled(&mut self, step: f64, direction: &[f64]) {
        debug_assert_eq!(direction.len(), self.params.len());
        for (p, d) in self.params.iter_mut().zip(direction) {
            *p += step * d;
        }
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        self.forward_cached(input).0
    }

    /// Forward pass keeping activations for [`Mlp::backward_into`].
    pub fn forward_cached(&self, input: &[f64]) -> (f64, ForwardCache) {
        debug_assert_eq!(input.len(), self.widths[0]);
        let n_layers = self.widths.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for (layer, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let prev = activations.last().unwrap();
            let mut out = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let row = &weights[j * n_in..(j + 1) * n_in];
                let z: f64 =
                    row.iter().zip(prev.iter()).map(|(w, a)| w * a).sum::<f64>() + biases[j];
                out.push(if layer + 1 < n_layers { z.tanh() } else { z });
            }
            activations.push(out);
        }
        (activations.last().unwrap()[0], ForwardCache { activations })
    }

    /// Gradient of the scalar output with respect to every parameter, written
    /// into `grad` in the flat layout.
    pub fn backward_into(&self, cache: &ForwardCache, grad: &mut Vec<f64>) {
        grad.clear();
        grad.resize(self.params.len(), 0.0);
        let n_layers = self.widths.len() - 1;
        // Upstream sensitivity of the output w.r.t. each layer's output.
        let mut delta = vec![1.0f64];
        let mut offset = self.params.len();
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (self.widths[layer], self.widths[layer + 1]);
            offset -= n_in * n_out + n_out;
            let weights = &self.params[offset..offset + n_in * n_out];
            let prev = &cache.activations[layer];
            let grad_w = &mut grad[offset..offset + n_in * n_out + n_out];
            for j in 0..n_out {
                let d = delta[j];
                for i in 0..n_in {
                    grad_w[j * n_in + i] = d * prev[i];
                }
                grad_w[n_in * n_out + j] = d;
            }
            if layer > 0 {
                let cur = &cache.activations[layer];
                let mut next_delta = vec![0.0f64; n_in];
                for j in 0..n_out {
                    let d = delta[j];
                    for i in 0..n_in {
                        next_delta[i] += d * weights[j * n_in + i];
                    }
                }
                // activations of hidden layers are tanh outputs
                for (nd, a) in next_delta.iter_mut().zip(cur.iter()) {
                    *nd *= 1.0 - a * a;
                }
                delta = next_delta;
            }
        }
    }
}
