//! Critic families: evaluation, least-squares fitting, the softmax policy
//! each function induces, and tangent (score) features for NPG.

mod finite;
mod linear;
pub mod mlp;
mod mlp_class;
pub mod params;
mod tabular;

use std::fmt;
use std::sync::Arc;

pub use finite::FiniteClass;
pub use linear::{one_hot_features, radial_bin_features, FeatureFn, LinearClass};
pub use mlp::Mlp;
pub use mlp_class::{EncoderFn, MlpClass, MlpFitConfig};
pub use params::ParamFile;
pub use tabular::TabularClass;

use crate::linalg::ball_constrained_lstsq;
use crate::{Error, Result};

/// One regression example `(s, a, target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    pub state: S,
    pub action: usize,
    pub target: f64,
}

/// Fitted parameters and their mean squared residual on the fit samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub params: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions<'a> {
    /// Warm start for iterative fitters.
    pub init: Option<&'a [f64]>,
    /// Multiplier on iterative step sizes (the divergence guard halves it).
    pub step_scale: f64,
}

impl Default for FitOptions<'_> {
    fn default() -> Self {
        Self { init: None, step_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Tabular,
    Finite,
    Linear,
    Mlp,
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassKind::Tabular => "tabular",
            ClassKind::Finite => "finite",
            ClassKind::Linear => "linear",
            ClassKind::Mlp => "mlp",
        })
    }
}

impl std::str::FromStr for ClassKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(ClassKind::Tabular),
            "finite" => Ok(ClassKind::Finite),
            "linear" => Ok(ClassKind::Linear),
            "mlp" => Ok(ClassKind::Mlp),
            other => Err(Error::Parse(format!("unknown class kind {other:?}"))),
        }
    }
}

/// A family of functions `f_params : S x A -> R` with `|f| <= sup_bound()`.
pub trait FunctionClass<S>: Send + Sync {
    fn kind(&self) -> ClassKind;
    fn num_params(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn sup_bound(&self) -> f64;
    /// Dimensions recorded in checkpoint headers.
    fn shape(&self) -> Vec<usize>;

    fn evaluate(&self, params: &[f64], s: &S, a: usize) -> f64;

    /// Approximate minimiser of the squared loss over `samples`.
    fn fit_with(&self, samples: &[Sample<S>], opts: &FitOptions<'_>) -> Result<Fit>;

    fn fit(&self, samples: &[Sample<S>]) -> Result<Fit> {
        self.fit_with(samples, &FitOptions::default())
    }

    /// Parameters of a member that is constant across actions, so its
    /// softmax policy is uniform.
    fn uniform_params(&self) -> Vec<f64>;

    /// True when `evaluate` is linear in the parameters, which lets
    /// policies keep a running sum of critics instead of the full list.
    fn additive(&self) -> bool {
        false
    }

    fn evaluate_all(&self, params: &[f64], s: &S) -> Vec<f64> {
        (0..self.num_actions()).map(|a| self.evaluate(params, s, a)).collect()
    }
}

/// A class smoothly parameterised by `theta`.
pub trait DifferentiableClass<S>: FunctionClass<S> {
    fn gradient(&self, params: &[f64], s: &S, a: usize) -> Vec<f64>;
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

/// `pi_f(.|s)` for the member with `params`.
pub fn softmax_policy<S>(class: &dyn FunctionClass<S>, params: &[f64], s: &S) -> Vec<f64> {
    softmax(&class.evaluate_all(params, s))
}

/// Score features `grad f(s,a) - E_{a'~pi}[grad f(s,a')]` for every action.
pub fn tangent_features_all<S>(class: &dyn DifferentiableClass<S>, params: &[f64], s: &S) -> Vec<Vec<f64>> {
    let na = class.num_actions();
    let grads: Vec<Vec<f64>> = (0..na).map(|a| class.gradient(params, s, a)).collect();
    let probs = softmax(&(0..na).map(|a| class.evaluate(params, s, a)).collect::<Vec<_>>());
    let d = grads[0].len();
    let mut mean = vec![0.0; d];
    for (g, p) in grads.iter().zip(&probs) {
        for (m, x) in mean.iter_mut().zip(g) {
            *m += p * x;
        }
    }
    grads
        .into_iter()
        .map(|g| g.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect()
}

/// `grad_theta log pi_{f_theta}(a|s)`.
pub fn tangent_features<S>(class: &dyn DifferentiableClass<S>, params: &[f64], s: &S, a: usize) -> Vec<f64> {
    tangent_features_all(class, params, s).swap_remove(a)
}

/// Tangent class at a fixed base point `theta`, with coefficient bound `B`.
/// The gradient and Hessian bounds are carried as metadata for step-size
/// defaults.
pub struct TangentFeatureMap<S> {
    pub class: Arc<dyn DifferentiableClass<S>>,
    pub theta: Vec<f64>,
    pub bound: f64,
    pub grad_bound: f64,
    pub hessian_bound: f64,
}

impl<S> Clone for TangentFeatureMap<S> {
    fn clone(&self) -> Self {
        Self {
            class: self.class.clone(),
            theta: self.theta.clone(),
            bound: self.bound,
            grad_bound: self.grad_bound,
            hessian_bound: self.hessian_bound,
        }
    }
}

impl<S> TangentFeatureMap<S> {
    pub fn new(class: Arc<dyn DifferentiableClass<S>>, theta: Vec<f64>, bound: f64) -> Self {
        Self { class, theta, bound, grad_bound: 1.0, hessian_bound: 0.0 }
    }

    pub fn at(&self, theta: Vec<f64>) -> Self {
        Self { theta, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn features(&self, s: &S, a: usize) -> Vec<f64> {
        tangent_features(self.class.as_ref(), &self.theta, s, a)
    }

    pub fn features_all(&self, s: &S) -> Vec<Vec<f64>> {
        tangent_features_all(self.class.as_ref(), &self.theta, s)
    }

    pub fn policy(&self, s: &S) -> Vec<f64> {
        softmax_policy(self.class.as_ref(), &self.theta, s)
    }
}

fn check_samples<S>(samples: &[Sample<S>]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty("critic samples".into()));
    }
    if let Some(bad) = samples.iter().find(|x| !x.target.is_finite()) {
        return Err(Error::NonFinite(format!("critic target {}", bad.target)));
    }
    Ok(())
}

pub(crate) fn mean_squared_residual<S>(samples: &[Sample<S>], f: impl Fn(&S, usize) -> f64) -> f64 {
    samples.iter().map(|x| (x.target - f(&x.state, x.action)).powi(2)).sum::<f64>() / samples.len() as f64
}

/// SPI critic fit: least squares of `f(s,a)` onto the (bonus-offset) targets.
pub fn fit_critic_spi<S>(class: &dyn FunctionClass<S>, samples: &[Sample<S>], opts: &FitOptions<'_>) -> Result<Fit> {
    check_samples(samples)?;
    class.fit_with(samples, opts)
}

/// NPG critic fit: `min_{|u| <= B} sum (target - u . g(s,a))^2` in the
/// tangent features of `map`.
pub fn fit_critic_npg<S>(map: &TangentFeatureMap<S>, samples: &[Sample<S>]) -> Result<Fit> {
    check_samples(samples)?;
    let rows: Vec<Vec<f64>> = samples.iter().map(|x| map.features(&x.state, x.action)).collect();
    let targets: Vec<f64> = samples.iter().map(|x| x.target).collect();
    let sol = ball_constrained_lstsq(&rows, &targets, map.bound)?;
    Ok(Fit { params: sol.coefficients, loss: sol.mean_squared_residual })
}
