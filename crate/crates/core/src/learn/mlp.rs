//! Fully connected network with tanh hidden layers and a linear output.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (`out × in`, row-major) followed by the bias. Gradients use the same layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
}

/// Activations of one forward pass, input first, output last.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |v| v.as_slice())
    }
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self { sizes }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform Glorot weights, zero biases; the output layer is scaled by `out_scale`.
    pub fn init(&self, rng: &mut SimRng, out_scale: f64) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == layers {
                limit *= out_scale;
            }
            p.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
            p.extend(std::iter::repeat_n(0.0, fan_out));
        }
        p
    }

    pub fn forward(&self, params: &[f64], x: &[f64], trace: &mut Trace) {
        debug_assert_eq!(params.len(), self.n_params());
        debug_assert_eq!(x.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        trace.acts.resize(layers + 1, Vec::new());
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (prev, rest) = trace.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(input) {
                    z += wi * xi;
                }
                out.push(if l + 1 < layers { z.tanh() } else { z });
            }
            off += n_in * n_out + n_out;
        }
    }

    pub fn eval(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut t = Trace::default();
        self.forward(params, x, &mut t);
        t.output().to_vec()
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output`; optionally writes `∂L/∂input`.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &Trace,
        d_out: &[f64],
        grad: &mut [f64],
        d_in: Option<&mut [f64]>,
    ) {
        let layers = self.sizes.len() - 1;
        let mut delta = d_out.to_vec();
        let mut off_end = self.n_params();
        let mut next = Vec::new();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = off_end - (n_in * n_out + n_out);
            if l + 1 < layers {
                // Through tanh: d/dz = 1 − a².
                for (d, a) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &trace.acts[l];
            let w = &params[off..off + n_in * n_out];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let need_input = l > 0 || d_in.is_some();
            next.clear();
            next.resize(n_in, 0.0);
            for o in 0..n_out {
                let d = delta[o];
                gb[o] += d;
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, x) in grow.iter_mut().zip(input) {
                    *g += d * x;
                }
                if need_input {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for (n, wi) in next.iter_mut().zip(row) {
                        *n += d * wi;
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next);
            off_end = off;
        }
        if let Some(d_in) = d_in {
            d_in.copy_from_slice(&delta);
        }
    }
}
