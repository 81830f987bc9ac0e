//! Width heuristic for neural critics.
//!
//! A trainable network `f` and a frozen copy `f'` start identical. `f` is
//! pushed away from `f'` on query points and tied to it on buffer points by
//! ascending
//!
//! `lambda mean_Q (f - f')^2 - mean_B (f - f')^2 - lambda_1 mean_Q (f - f')`
//!
//! and `|f - f'|` is returned as the width. Points that look like the buffer
//! end up with small widths, points far from it with large ones.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::function_class::mlp::{clip_global_norm, Mlp};
use crate::function_class::EncoderFn;
use crate::rng::Rng;
use crate::width::{BonusFn, WidthFn};
use crate::{Error, Result};

/// Encoded network input and the output head (action) it is read from.
pub type Point = (Vec<f64>, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WidthTrainConfig {
    pub lambda: f64,
    pub lambda1: f64,
    pub query_set_size: usize,
    pub learning_rate: f64,
    pub buffer_batch: usize,
    pub query_batch: usize,
    pub gradient_clip: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
}

impl Default for WidthTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            lambda1: 0.01,
            query_set_size: 20_000,
            learning_rate: 0.001,
            buffer_batch: 160,
            query_batch: 20,
            gradient_clip: 5.0,
            outer_iters: 1000,
            inner_iters: 10,
        }
    }
}

impl WidthTrainConfig {
    /// Settings for the six-hidden-layer preset.
    pub fn six_layer() -> Self {
        Self { learning_rate: 0.0015, query_batch: 10, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("lambda1", self.lambda1),
            ("learning_rate", self.learning_rate),
            ("gradient_clip", self.gradient_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("width training {name} must be positive, got {v}")));
            }
        }
        if self.buffer_batch == 0 || self.query_batch == 0 || self.inner_iters == 0 || self.query_set_size == 0 {
            return Err(Error::Config("width training batch sizes and inner iterations must be positive".into()));
        }
        Ok(())
    }
}

/// The three loss terms, each with its own normalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `lambda mean_Q (f - f')^2`
    pub stretch: f64,
    /// `mean_B (f - f')^2`, entering with a minus sign
    pub tie: f64,
    /// `lambda_1 mean_Q (f - f')`, entering with a minus sign
    pub degeneracy: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.stretch - self.tie - self.degeneracy
    }
}

/// Trainable `f` and frozen `f'` over the same architecture.
#[derive(Debug, Clone)]
pub struct WidthNetPair {
    net: Mlp,
    f: Vec<f64>,
    f_prime: Arc<Vec<f64>>,
}

impl WidthNetPair {
    /// Fresh random `f`, then `f'` as a copy of it.
    pub fn new(net: Mlp, rng: &mut Rng) -> Self {
        let f = net.init(rng);
        let f_prime = Arc::new(f.clone());
        Self { net, f, f_prime }
    }

    pub fn from_params(net: Mlp, f: Vec<f64>, f_prime: Vec<f64>) -> Result<Self> {
        let n = net.num_params();
        for p in [&f, &f_prime] {
            if p.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: p.len() });
            }
        }
        Ok(Self { net, f, f_prime: Arc::new(f_prime) })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn f_params(&self) -> &[f64] {
        &self.f
    }

    pub fn f_prime_params(&self) -> &[f64] {
        &self.f_prime
    }

    /// `f(x)[head] - f'(x)[head]`.
    pub fn diff(&self, x: &[f64], head: usize) -> f64 {
        self.net.forward(&self.f, x)[head] - self.net.forward(&self.f_prime, x)[head]
    }

    pub fn width(&self, x: &[f64], head: usize) -> f64 {
        self.diff(x, head).abs()
    }

    /// SHA-256 of the frozen parameters' little-endian bytes, hex encoded.
    pub fn f_prime_hash(&self) -> String {
        param_hash(&self.f_prime)
    }

    pub fn loss_terms(&self, dq: &[Point], dj: &[Point], lambda: f64, lambda1: f64) -> LossTerms {
        let q: Vec<f64> = dq.iter().map(|(x, h)| self.diff(x, *h)).collect();
        let b: Vec<f64> = dj.iter().map(|(x, h)| self.diff(x, *h)).collect();
        terms(&q, &b, lambda, lambda1)
    }

    /// Accumulates the gradient of the total loss with respect to `f` into
    /// `grad` and returns the loss terms at the current parameters.
    pub fn loss_gradient(&self, dq: &[Point], dj: &[Point], lambda: f64, lambda1: f64, grad: &mut [f64]) -> LossTerms {
        let nq = dq.len() as f64;
        let nb = dj.len() as f64;
        let na = self.net.output_dim();
        let mut q = Vec::with_capacity(dq.len());
        let mut b = Vec::with_capacity(dj.len());
        for (x, h) in dq {
            let trace = self.net.forward_trace(&self.f, x);
            let d = trace.output()[*h] - self.net.forward(&self.f_prime, x)[*h];
            let mut dout = vec![0.0; na];
            dout[*h] = (2.0 * lambda * d - lambda1) / nq;
            self.net.backward(&self.f, &trace, &dout, grad);
            q.push(d);
        }
        for (x, h) in dj {
            let trace = self.net.forward_trace(&self.f, x);
            let d = trace.output()[*h] - self.net.forward(&self.f_prime, x)[*h];
            let mut dout = vec![0.0; na];
            dout[*h] = -2.0 * d / nb;
            self.net.backward(&self.f, &trace, &dout, grad);
            b.push(d);
        }
        terms(&q, &b, lambda, lambda1)
    }
}

fn terms(q: &[f64], b: &[f64], lambda: f64, lambda1: f64) -> LossTerms {
    let mean = |v: &[f64], g: fn(f64) -> f64| v.iter().map(|&x| g(x)).sum::<f64>() / v.len() as f64;
    LossTerms {
        stretch: lambda * mean(q, |x| x * x),
        tie: mean(b, |x| x * x),
        degeneracy: lambda1 * mean(q, |x| x),
    }
}

pub fn param_hash(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// The loss to maximise on one pair of minibatches.
pub fn width_loss(pair: &WidthNetPair, dq: &[Point], dj: &[Point], lambda: f64, lambda1: f64) -> f64 {
    pair.loss_terms(dq, dj, lambda, lambda1).total()
}

/// One row per outer iteration. Widths are averaged over that iteration's
/// query minibatch and its last buffer minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthTrainRow {
    pub iter: usize,
    pub loss: f64,
    pub mean_buffer_width: f64,
    pub mean_query_width: f64,
}

fn minibatch<'a>(pool: &'a [Point], size: usize, rng: &mut Rng) -> Vec<&'a Point> {
    (0..size).map(|_| &pool[rng.gen_range(0..pool.len())]).collect()
}

/// Train a fresh pair on `buffer` (minibatches with replacement) and
/// `query_set`. `f` is initialised from `rng`, `f'` copies it and is never
/// modified.
pub fn train_width(
    net: &Mlp,
    buffer: &[Point],
    query_set: &[Point],
    config: &WidthTrainConfig,
    rng: &mut Rng,
    on_iter: &mut dyn FnMut(&WidthTrainRow),
) -> Result<WidthNetPair> {
    config.validate()?;
    if buffer.is_empty() {
        return Err(Error::Empty("width training buffer".into()));
    }
    if query_set.is_empty() {
        return Err(Error::Empty("width training query set".into()));
    }
    let mut pair = WidthNetPair::new(net.clone(), rng);
    let mut grad = vec![0.0; pair.f.len()];
    for iter in 0..config.outer_iters {
        let dq: Vec<Point> = minibatch(query_set, config.query_batch, rng).into_iter().cloned().collect();
        let mut last = None;
        for _ in 0..config.inner_iters {
            let dj: Vec<Point> = minibatch(buffer, config.buffer_batch, rng).into_iter().cloned().collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let t = pair.loss_gradient(&dq, &dj, config.lambda, config.lambda1, &mut grad);
            let loss = t.total();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::WidthTraining { iteration: iter, loss });
            }
            clip_global_norm(&mut grad, config.gradient_clip);
            for (p, g) in pair.f.iter_mut().zip(&grad) {
                *p += config.learning_rate * g;
            }
            last = Some((loss, dj));
        }
        let (loss, dj) = last.expect("inner_iters >= 1");
        let mean_w = |pts: &[Point]| pts.iter().map(|(x, h)| pair.width(x, *h)).sum::<f64>() / pts.len() as f64;
        on_iter(&WidthTrainRow { iter, loss, mean_buffer_width: mean_w(&dj), mean_query_width: mean_w(&dq) });
    }
    Ok(pair)
}

/// A trained pair behind a state encoder.
pub struct NeuralWidth<S> {
    pair: Arc<WidthNetPair>,
    encoder: EncoderFn<S>,
}

impl<S> Clone for NeuralWidth<S> {
    fn clone(&self) -> Self {
        Self { pair: self.pair.clone(), encoder: self.encoder.clone() }
    }
}

impl<S: 'static> NeuralWidth<S> {
    pub fn new(pair: WidthNetPair, encoder: EncoderFn<S>) -> Self {
        Self { pair: Arc::new(pair), encoder }
    }

    pub fn pair(&self) -> &WidthNetPair {
        &self.pair
    }

    pub fn width(&self, s: &S, a: usize) -> f64 {
        self.pair.width(&(self.encoder)(s), a)
    }

    pub fn width_fn(&self) -> WidthFn<S> {
        let me = self.clone();
        Arc::new(move |s: &S, a: usize| me.width(s, a))
    }
}

/// `b(s, a) = 0.5 w(s, a) / max_{Z_Q} w`, with no threshold. A zero maximum
/// yields the zero bonus.
pub fn normalized_bonus<S: 'static>(width: WidthFn<S>, query_set: &[(S, usize)]) -> BonusFn<S> {
    let max = query_set.iter().map(|(s, a)| width(s, *a)).fold(0.0, f64::max);
    if !(max > 0.0) {
        log::warn!("width is zero on every query point; using the zero bonus");
        return Arc::new(|_: &S, _| 0.0);
    }
    Arc::new(move |s: &S, a: usize| 0.5 * width(s, a) / max)
}
