use std::sync::Arc;

use super::{ClassKind, DifferentiableClass, Fit, FitOptions, FunctionClass, Sample};
use crate::linalg::{ball_constrained_lstsq, dot};
use crate::Result;

/// Feature map `phi : S x A -> R^d`.
pub type FeatureFn<S> = Arc<dyn Fn(&S, usize) -> Vec<f64> + Send + Sync>;

/// `f_u(s,a) = u . phi(s,a)` with `|u|_2 <= B`.
pub struct LinearClass<S> {
    features: FeatureFn<S>,
    dim: usize,
    num_actions: usize,
    bound: f64,
    feature_bound: f64,
}

impl<S> Clone for LinearClass<S> {
    fn clone(&self) -> Self {
        Self {
            features: self.features.clone(),
            dim: self.dim,
            num_actions: self.num_actions,
            bound: self.bound,
            feature_bound: self.feature_bound,
        }
    }
}

impl<S> LinearClass<S> {
    /// `feature_bound` is a bound on `|phi(s,a)|_2`, used for the sup-norm
    /// bound `B * feature_bound`.
    pub fn new(features: FeatureFn<S>, dim: usize, num_actions: usize, bound: f64, feature_bound: f64) -> Self {
        Self { features, dim, num_actions, bound, feature_bound }
    }

    pub fn phi(&self, s: &S, a: usize) -> Vec<f64> {
        (self.features)(s, a)
    }

    pub fn feature_fn(&self) -> FeatureFn<S> {
        self.features.clone()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

impl LinearClass<usize> {
    /// One-hot features over a finite `S x A`.
    pub fn one_hot(num_states: usize, num_actions: usize, bound: f64) -> Self {
        Self::new(one_hot_features(num_states, num_actions), num_states * num_actions, num_actions, bound, 1.0)
    }
}

impl LinearClass<Vec<f64>> {
    /// Gaussian radial bins on continuous states, one block per action.
    pub fn radial_bins(centers: Vec<Vec<f64>>, width: f64, num_actions: usize, bound: f64) -> Self {
        let dim = centers.len() * num_actions;
        Self::new(radial_bin_features(centers, width, num_actions), dim, num_actions, bound, 1.0)
    }
}

pub fn one_hot_features(num_states: usize, num_actions: usize) -> FeatureFn<usize> {
    Arc::new(move |s: &usize, a: usize| {
        let mut v = vec![0.0; num_states * num_actions];
        v[s * num_actions + a] = 1.0;
        v
    })
}

/// `phi(s,a)` places normalised RBF activations of `s` in the block of `a`.
pub fn radial_bin_features(centers: Vec<Vec<f64>>, width: f64, num_actions: usize) -> FeatureFn<Vec<f64>> {
    let k = centers.len();
    Arc::new(move |s: &Vec<f64>, a: usize| {
        let mut v = vec![0.0; k * num_actions];
        let acts: Vec<f64> = centers
            .iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(s).map(|(x, y)| (x - y).powi(2)).sum();
                (-d2 / (2.0 * width * width)).exp()
            })
            .collect();
        let n = acts.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        for (i, x) in acts.iter().enumerate() {
            v[a * k + i] = x / n;
        }
        v
    })
}

impl<S> FunctionClass<S> for LinearClass<S> {
    fn kind(&self) -> ClassKind {
        ClassKind::Linear
    }

    fn num_params(&self) -> usize {
        self.dim
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn sup_bound(&self) -> f64 {
        self.bound * self.feature_bound
    }

    fn shape(&self) -> Vec<usize> {
        vec![self.dim, self.num_actions]
    }

    fn evaluate(&self, params: &[f64], s: &S, a: usize) -> f64 {
        dot(params, &self.phi(s, a))
    }

    fn fit_with(&self, samples: &[Sample<S>], _opts: &FitOptions<'_>) -> Result<Fit> {
        let rows: Vec<Vec<f64>> = samples.iter().map(|x| self.phi(&x.state, x.action)).collect();
        let targets: Vec<f64> = samples.iter().map(|x| x.target).collect();
        let sol = ball_constrained_lstsq(&rows, &targets, self.bound)?;
        Ok(Fit { params: sol.coefficients, loss: sol.mean_squared_residual })
    }

    fn uniform_params(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn additive(&self) -> bool {
        true
    }
}

impl<S> DifferentiableClass<S> for LinearClass<S> {
    fn gradient(&self, _params: &[f64], s: &S, a: usize) -> Vec<f64> {
        self.phi(s, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_class::{softmax, tangent_features};

    #[test]
    fn constant_feature_fits_sample_mean() {
        let c = LinearClass::new(Arc::new(|_: &usize, _| vec![1.0]), 1, 1, 10.0, 1.0);
        let samples = vec![Sample { state: 0, action: 0, target: 1.0 }, Sample { state: 0, action: 0, target: 3.0 }];
        let fit = c.fit(&samples).unwrap();
        assert!((fit.params[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_targets_fit_zero() {
        let c = LinearClass::one_hot(3, 2, 1.0);
        let samples: Vec<_> = (0..6).map(|i| Sample { state: i % 3, action: i % 2, target: 0.0 }).collect();
        let fit = c.fit(&samples).unwrap();
        assert!(fit.params.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_score_closed_form() {
        let c = LinearClass::new(
            Arc::new(|s: &usize, a: usize| vec![(*s as f64 + 1.0) * a as f64, 1.0 - a as f64, 0.5]),
            3,
            2,
            10.0,
            10.0,
        );
        let theta = vec![0.4, -0.3, 2.0];
        let s = 1usize;
        let logits: Vec<f64> = (0..2).map(|a| c.evaluate(&theta, &s, a)).collect();
        let p = softmax(&logits);
        for a in 0..2 {
            let g = tangent_features(&c, &theta, &s, a);
            let phi = c.phi(&s, a);
            let mean: Vec<f64> = (0..3).map(|k| (0..2).map(|b| p[b] * c.phi(&s, b)[k]).sum()).collect();
            for k in 0..3 {
                assert!((g[k] - (phi[k] - mean[k])).abs() < 1e-12);
            }
            // third feature is action-independent, so its score component vanishes
            assert!(g[2].abs() < 1e-12);
        }
    }

    #[test]
    fn radial_bins_unit_norm() {
        let c = LinearClass::radial_bins(vec![vec![0.0, 0.0], vec![1.0, 0.0]], 0.5, 3, 1.0);
        let phi = c.phi(&vec![0.3, 0.2], 2);
        assert!((crate::linalg::norm(&phi) - 1.0).abs() < 1e-12);
        assert!(phi[..4].iter().all(|&x| x == 0.0));
    }
}
