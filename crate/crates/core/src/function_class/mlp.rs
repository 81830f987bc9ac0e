//! Fully connected ReLU network over a flat parameter vector, with a
//! hand-written reverse pass.
//!
//! Layout per layer: row-major weights `[out][in]` followed by `out` biases.
//! Hidden layers use ReLU; the output layer is linear.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
}

/// Per-layer activations recorded by [`Mlp::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l]` the post-activation of layer `l`,
    /// the last entry the network output.
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has output")
    }
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`.
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        assert!(sizes.iter().all(|&n| n > 0), "layer sizes must be positive");
        Self { sizes }
    }

    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let start = off;
            off += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for (_, n_in, n_out) in self.layers() {
            let k = 1.0 / (n_in as f64).sqrt();
            for _ in 0..(n_in * n_out + n_out) {
                p.push(rng.gen_range(-k..k));
            }
        }
        p
    }

    /// Zero the output layer so the network is identically zero.
    pub fn zero_output_layer(&self, params: &mut [f64]) {
        if let Some((off, n_in, n_out)) = self.layers().last() {
            params[off..off + n_in * n_out + n_out].iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(params.len(), self.num_params());
        let n_layers = self.sizes.len() - 1;
        let mut cur = x.to_vec();
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            cur = affine(params, off, n_in, n_out, &cur);
            if l + 1 < n_layers {
                cur.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        cur
    }

    pub fn forward_trace(&self, params: &[f64], x: &[f64]) -> Trace {
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let mut next = affine(params, off, n_in, n_out, acts.last().unwrap());
            if l + 1 < n_layers {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(next);
        }
        Trace { acts }
    }

    /// Accumulate `d(dout . output)/d params` into `grad`.
    pub fn backward(&self, params: &[f64], trace: &Trace, dout: &[f64], grad: &mut [f64]) {
        let layers: Vec<_> = self.layers().collect();
        let mut delta = dout.to_vec();
        for l in (0..layers.len()).rev() {
            let (off, n_in, n_out) = layers[l];
            let input = &trace.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = off + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += d * input[i];
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = off + o * n_in;
                    for i in 0..n_in {
                        prev[i] += params[row + i] * d;
                    }
                }
                // ReLU gate on the layer input (post-activation of layer l-1)
                for i in 0..n_in {
                    if input[i] <= 0.0 {
                        prev[i] = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Gradient of output `k` with respect to all parameters.
    pub fn output_gradient(&self, params: &[f64], x: &[f64], k: usize) -> (f64, Vec<f64>) {
        let trace = self.forward_trace(params, x);
        let mut dout = vec![0.0; self.output_dim()];
        dout[k] = 1.0;
        let mut g = vec![0.0; params.len()];
        self.backward(params, &trace, &dout, &mut g);
        (trace.output()[k], g)
    }
}

fn affine(params: &[f64], off: usize, n_in: usize, n_out: usize, x: &[f64]) -> Vec<f64> {
    let bias = off + n_in * n_out;
    (0..n_out)
        .map(|o| {
            let row = &params[off + o * n_in..off + (o + 1) * n_in];
            params[bias + o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

/// Global-norm gradient clipping; returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    n
}
