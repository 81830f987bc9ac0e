use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mlp::{clip_global_norm, Mlp};
use super::{check_samples, mean_squared_residual, ClassKind, DifferentiableClass, Fit, FitOptions, FunctionClass, Sample};
use crate::rng::seeded;
use crate::Result;

/// State encoder feeding the network input layer.
pub type EncoderFn<S> = Arc<dyn Fn(&S) -> Vec<f64> + Send + Sync>;

/// Full-batch gradient descent settings for critic fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Global-norm clip on each full-batch gradient.
    pub gradient_clip: f64,
    /// Seed for the initial parameters when no warm start is given.
    pub init_seed: u64,
}

impl Default for MlpFitConfig {
    fn default() -> Self {
        Self { steps: 200, learning_rate: 0.05, gradient_clip: 5.0, init_seed: 0 }
    }
}

/// `f_theta(s, a) = clamp(net(encode(s))[a], -W, W)`: one output head per
/// action, ReLU hidden layers.
pub struct MlpClass<S> {
    net: Mlp,
    encoder: EncoderFn<S>,
    bound: f64,
    fit: MlpFitConfig,
}

impl<S> Clone for MlpClass<S> {
    fn clone(&self) -> Self {
        Self { net: self.net.clone(), encoder: self.encoder.clone(), bound: self.bound, fit: self.fit.clone() }
    }
}

impl<S> MlpClass<S> {
    pub fn new(encoder: EncoderFn<S>, input_dim: usize, hidden: &[usize], num_actions: usize, bound: f64) -> Self {
        Self { net: Mlp::with_hidden(input_dim, hidden, num_actions), encoder, bound, fit: MlpFitConfig::default() }
    }

    pub fn with_fit_config(mut self, fit: MlpFitConfig) -> Self {
        self.fit = fit;
        self
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn encode(&self, s: &S) -> Vec<f64> {
        (self.encoder)(s)
    }

    pub fn fit_config(&self) -> &MlpFitConfig {
        &self.fit
    }

    /// Fresh random parameters.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        self.net.init(&mut seeded(seed))
    }

    /// Unclamped network outputs for every action.
    pub fn raw_outputs(&self, params: &[f64], s: &S) -> Vec<f64> {
        self.net.forward(params, &self.encode(s))
    }
}

impl MlpClass<usize> {
    /// One-hot state encoding over `0..num_states`.
    pub fn one_hot(num_states: usize, hidden: &[usize], num_actions: usize, bound: f64) -> Self {
        let enc: EncoderFn<usize> = Arc::new(move |s: &usize| {
            let mut v = vec![0.0; num_states];
            v[*s] = 1.0;
            v
        });
        Self::new(enc, num_states, hidden, num_actions, bound)
    }
}

impl MlpClass<Vec<f64>> {
    /// Identity encoding of a real-vector state.
    pub fn identity(input_dim: usize, hidden: &[usize], num_actions: usize, bound: f64) -> Self {
        Self::new(Arc::new(|s: &Vec<f64>| s.clone()), input_dim, hidden, num_actions, bound)
    }
}

impl<S: Send + Sync> FunctionClass<S> for MlpClass<S> {
    fn kind(&self) -> ClassKind {
        ClassKind::Mlp
    }

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn num_actions(&self) -> usize {
        self.net.output_dim()
    }

    fn sup_bound(&self) -> f64 {
        self.bound
    }

    fn shape(&self) -> Vec<usize> {
        self.net.sizes().to_vec()
    }

    fn evaluate(&self, params: &[f64], s: &S, a: usize) -> f64 {
        self.raw_outputs(params, s)[a].clamp(-self.bound, self.bound)
    }

    fn evaluate_all(&self, params: &[f64], s: &S) -> Vec<f64> {
        self.raw_outputs(params, s).into_iter().map(|x| x.clamp(-self.bound, self.bound)).collect()
    }

    /// Gradient steps act on the unclamped output so saturated samples still
    /// pull the network back inside the bound.
    fn fit_with(&self, samples: &[Sample<S>], opts: &FitOptions<'_>) -> Result<Fit> {
        check_samples(samples)?;
        let mut params = match opts.init {
            Some(p) => p.to_vec(),
            None => self.init_params(self.fit.init_seed),
        };
        let inputs: Vec<Vec<f64>> = samples.iter().map(|x| self.encode(&x.state)).collect();
        let n = samples.len() as f64;
        let lr = self.fit.learning_rate * opts.step_scale;
        let na = self.net.output_dim();
        let mut grad = vec![0.0; params.len()];
        for _ in 0..self.fit.steps {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (x, sample) in inputs.iter().zip(samples) {
                let trace = self.net.forward_trace(&params, x);
                let err = trace.output()[sample.action] - sample.target;
                let mut dout = vec![0.0; na];
                dout[sample.action] = 2.0 * err / n;
                self.net.backward(&params, &trace, &dout, &mut grad);
            }
            clip_global_norm(&mut grad, self.fit.gradient_clip);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
        let loss = mean_squared_residual(samples, |s, a| self.evaluate(&params, s, a));
        Ok(Fit { params, loss })
    }

    fn uniform_params(&self) -> Vec<f64> {
        let mut p = self.init_params(self.fit.init_seed);
        self.net.zero_output_layer(&mut p);
        p
    }
}

impl<S: Send + Sync> DifferentiableClass<S> for MlpClass<S> {
    /// Zero where the clamp is active.
    fn gradient(&self, params: &[f64], s: &S, a: usize) -> Vec<f64> {
        let (value, g) = self.net.output_gradient(params, &self.encode(s), a);
        if value.abs() >= self.bound {
            vec![0.0; g.len()]
        } else {
            g
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_class::{softmax_policy, tangent_features};

    #[test]
    fn fit_reduces_loss() {
        let c = MlpClass::one_hot(3, &[8], 2, 10.0);
        let samples: Vec<_> = (0..6).map(|i| Sample { state: i % 3, action: i % 2, target: (i % 3) as f64 }).collect();
        let before = mean_squared_residual(&samples, |s, a| c.evaluate(&c.init_params(0), s, a));
        let fit = c.fit(&samples).unwrap();
        assert!(fit.loss < before * 0.1, "{} vs {before}", fit.loss);
    }

    #[test]
    fn uniform_params_give_uniform_policy() {
        let c = MlpClass::identity(2, &[4, 4], 3, 1.0);
        let p = softmax_policy(&c, &c.uniform_params(), &vec![0.5, -0.1]);
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn tangent_features_match_log_policy_differences() {
        // two hidden units, log pi differentiated numerically
        let c = MlpClass::identity(2, &[2], 3, 100.0);
        let theta = c.init_params(5);
        let s = vec![0.7, -0.4];
        for a in 0..3 {
            let g = tangent_features(&c, &theta, &s, a);
            let h = 1e-5;
            for k in 0..theta.len() {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[k] += h;
                minus[k] -= h;
                let lp = softmax_policy(&c, &plus, &s)[a].ln();
                let lm = softmax_policy(&c, &minus, &s)[a].ln();
                let fd = (lp - lm) / (2.0 * h);
                let scale = fd.abs().max(g[k].abs()).max(1e-3);
                assert!((fd - g[k]).abs() / scale < 1e-4, "a={a} k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn output_is_clamped() {
        let c = MlpClass::identity(1, &[3], 1, 0.5);
        let mut p = c.init_params(1);
        let last = p.len() - 1;
        p[last] = 100.0;
        assert_eq!(c.evaluate(&p, &vec![0.0], 0), 0.5);
        assert!(c.gradient(&p, &vec![0.0], 0).iter().all(|&x| x == 0.0));
    }
}
