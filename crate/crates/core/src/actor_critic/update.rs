use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{KnownSet, NpgPolicy, SpiPolicy};
use super::{init_policy, Algorithm, Shared, UpdateVariant};
use crate::function_class::{
    fit_critic_npg, fit_critic_spi, DifferentiableClass, Fit, FitOptions, FunctionClass, Sample, TangentFeatureMap,
};
use crate::mdp::{entropy, estimate_advantage, estimate_q, Mdp, MixturePolicy, Policy, RewardFn};
use crate::rng::{split_n, Rng};
use crate::{Error, Result};

/// Draws a restart pair `(s, a)` from the cover distribution.
pub type CoverSampler<'a, S> = dyn Fn(&mut Rng) -> (S, usize) + Send + Sync + 'a;

/// Critic family and the actor rule it drives.
pub enum Learner<S> {
    Spi {
        class: Arc<dyn FunctionClass<S>>,
    },
    /// Natural policy gradient on the softmax policy of `class`. `bound` is
    /// the coefficient radius `B` of the tangent class; `grad_bound` and
    /// `hessian_bound` (`G`, `Lambda`) only enter the default step size.
    /// `value_bound` bounds the bonus-added values the critic regresses on
    /// and sets the divergence limit together with `B G`.
    Npg {
        class: Arc<dyn DifferentiableClass<S>>,
        bound: f64,
        grad_bound: f64,
        hessian_bound: f64,
        value_bound: f64,
    },
}

impl<S> Clone for Learner<S> {
    fn clone(&self) -> Self {
        match self {
            Learner::Spi { class } => Learner::Spi { class: class.clone() },
            Learner::Npg { class, bound, grad_bound, hessian_bound, value_bound } => Learner::Npg {
                class: class.clone(),
                bound: *bound,
                grad_bound: *grad_bound,
                hessian_bound: *hessian_bound,
                value_bound: *value_bound,
            },
        }
    }
}

impl<S> Learner<S> {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Learner::Spi { .. } => Algorithm::Spi,
            Learner::Npg { .. } => Algorithm::Npg,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Learner::Spi { class } => class.num_actions(),
            Learner::Npg { class, .. } => class.num_actions(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyUpdateConfig {
    /// Iterations `T`.
    pub iterations: usize,
    /// Critic samples per iteration `M`.
    pub samples: usize,
    /// Actor step size; `None` selects the default for the algorithm.
    pub eta: Option<f64>,
    /// Collect critic samples on the rayon pool.
    pub parallel: bool,
}

impl Default for PolicyUpdateConfig {
    fn default() -> Self {
        Self { iterations: 50, samples: 200, eta: None, parallel: true }
    }
}

impl PolicyUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.samples == 0 {
            return Err(Error::Config("policy update needs T >= 1 and M >= 1".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("step size must be positive, got {eta}")));
            }
        }
        Ok(())
    }
}

/// `sqrt(log|A| / (16 W^2 T))`.
pub fn default_spi_eta(num_actions: usize, sup_bound: f64, iterations: usize) -> f64 {
    ((num_actions as f64).ln() / (16.0 * sup_bound * sup_bound * iterations as f64)).sqrt()
}

/// `sqrt(log|A| / ((16 D^2 + Lambda B^2) T))` with `D = max(B G, 1/(1-gamma))`.
pub fn default_npg_eta(num_actions: usize, gamma: f64, bound: f64, grad_bound: f64, hessian_bound: f64, iterations: usize) -> f64 {
    let d = npg_scale(gamma, bound, grad_bound);
    ((num_actions as f64).ln() / ((16.0 * d * d + hessian_bound * bound * bound) * iterations as f64)).sqrt()
}

fn npg_scale(gamma: f64, bound: f64, grad_bound: f64) -> f64 {
    (bound * grad_bound).max(1.0 / (1.0 - gamma))
}

/// `M` critic samples with `(s, a)` drawn from `rho`.
///
/// SPI targets are `Q(s, a; r + b) - b(s, a)`; NPG targets are
/// `A(s, a; r + b) - (b(s, a) - E_{a'~pi}[b(s, a')])`. Each sample uses its
/// own child stream split from `rng` up front, so the parallel and serial
/// paths return identical samples.
#[allow(clippy::too_many_arguments)]
pub fn collect_critic_samples<M: Mdp>(
    mdp: &M,
    rho: &CoverSampler<'_, M::State>,
    policy: &dyn Policy<M::State>,
    reward: &RewardFn<'_, M::State>,
    bonus: &RewardFn<'_, M::State>,
    m: usize,
    algorithm: Algorithm,
    parallel: bool,
    rng: &mut Rng,
) -> Vec<Sample<M::State>> {
    let combined = |s: &M::State, a: usize| reward(s, a) + bonus(s, a);
    let one = |mut r: Rng| {
        let (s, a) = rho(&mut r);
        let target = match algorithm {
            Algorithm::Spi => estimate_q(mdp, policy, &s, a, &combined, &mut r) - bonus(&s, a),
            Algorithm::Npg => {
                let probs = policy.action_probabilities(&s);
                let mean_b: f64 = probs.iter().enumerate().map(|(b, p)| p * bonus(&s, b)).sum();
                estimate_advantage(mdp, policy, &s, a, &combined, &mut r) - (bonus(&s, a) - mean_b)
            }
        };
        Sample { state: s, action: a, target }
    };
    let streams = split_n(rng, m);
    if parallel {
        streams.into_par_iter().map(one).collect()
    } else {
        streams.into_iter().map(one).collect()
    }
}

/// Multiplicative-weights step with critic `params`.
pub fn spi_actor_step<S: Send + Sync + 'static>(policy: &SpiPolicy<S>, params: Vec<f64>, eta: f64) -> SpiPolicy<S> {
    policy.step(params, eta)
}

/// `theta + eta u`.
pub fn npg_actor_step<S: Send + Sync + 'static>(policy: &NpgPolicy<S>, u: &[f64], eta: f64) -> Result<NpgPolicy<S>> {
    if u.len() != policy.theta().len() {
        return Err(Error::DimensionMismatch { expected: policy.theta().len(), got: u.len() });
    }
    let theta = policy.theta().iter().zip(u).map(|(t, d)| t + eta * d).collect();
    Ok(policy.with_theta(theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub critic_loss: f64,
    pub mean_target: f64,
    /// Mean action entropy of the iterate at the sampled states.
    pub entropy: f64,
    /// The critic fit was retried with a halved step size.
    pub retried: bool,
    pub wallclock: f64,
}

pub struct UpdateOutcome<S> {
    /// `Unif(pi_0, ..., pi_{T-1})`.
    pub mixture: MixturePolicy<S>,
    pub iterates: Vec<Shared<S>>,
    /// `pi_T`, not part of the mixture.
    pub last: Shared<S>,
    pub eta: f64,
    pub diagnostics: Vec<IterationDiagnostics>,
}

fn guarded_fit(limit: f64, iteration: usize, fit: impl Fn(f64) -> Result<Fit>) -> Result<(Fit, bool)> {
    let first = fit(1.0)?;
    if first.loss <= limit {
        return Ok((first, false));
    }
    log::warn!("critic loss {} exceeds {limit} at iteration {iteration}; retrying with a halved step", first.loss);
    let second = fit(0.5)?;
    if second.loss <= limit && second.loss.is_finite() {
        return Ok((second, true));
    }
    Err(Error::Diverged { iteration, loss: second.loss, limit })
}

/// Run `T` iterations of collect, fit and actor step from the epoch's
/// initial policy, under reward `r + b`.
#[allow(clippy::too_many_arguments)]
pub fn policy_update<M: Mdp>(
    mdp: &M,
    rho: &CoverSampler<'_, M::State>,
    reward: &RewardFn<'_, M::State>,
    bonus: &RewardFn<'_, M::State>,
    known: Option<KnownSet<M::State>>,
    learner: &Learner<M::State>,
    config: &PolicyUpdateConfig,
    variant: UpdateVariant,
    rng: &mut Rng,
) -> Result<UpdateOutcome<M::State>> {
    config.validate()?;
    if variant.algorithm != learner.algorithm() {
        return Err(Error::Config(format!("variant {variant} does not match the learner")));
    }
    let na = learner.num_actions();
    if na != mdp.num_actions() {
        return Err(Error::DimensionMismatch { expected: mdp.num_actions(), got: na });
    }
    let init = init_policy(&variant, known, na)?;
    let t_max = config.iterations;
    let mut iterates: Vec<Shared<M::State>> = Vec::with_capacity(t_max);
    let mut diagnostics = Vec::with_capacity(t_max);

    let run = |policy: &dyn Policy<M::State>, rng: &mut Rng| {
        collect_critic_samples(mdp, rho, policy, reward, bonus, config.samples, variant.algorithm, config.parallel, rng)
    };
    let stats = |samples: &[Sample<M::State>], policy: &dyn Policy<M::State>| {
        let n = samples.len() as f64;
        let mean_target = samples.iter().map(|x| x.target).sum::<f64>() / n;
        let ent = samples.iter().map(|x| entropy(&policy.action_probabilities(&x.state))).sum::<f64>() / n;
        (mean_target, ent)
    };

    let (last, eta): (Shared<M::State>, f64) = match learner {
        Learner::Spi { class } => {
            let w = class.sup_bound();
            let eta = config.eta.unwrap_or_else(|| default_spi_eta(na, w, t_max));
            let limit = 4.0 * w * w;
            let mut pi = SpiPolicy::new(class.clone(), init, variant.mode);
            for t in 0..t_max {
                let start = Instant::now();
                iterates.push(Arc::new(pi.clone()));
                let samples = run(&pi, rng);
                let (fit, retried) = guarded_fit(limit, t, |scale| {
                    fit_critic_spi(class.as_ref(), &samples, &FitOptions { init: None, step_scale: scale })
                })
                .map_err(|e| Error::Iteration { iteration: t, source: Box::new(e) })?;
                let (mean_target, entropy) = stats(&samples, &pi);
                pi = spi_actor_step(&pi, fit.params, eta);
                diagnostics.push(IterationDiagnostics {
                    iteration: t,
                    critic_loss: fit.loss,
                    mean_target,
                    entropy,
                    retried,
                    wallclock: start.elapsed().as_secs_f64(),
                });
            }
            (Arc::new(pi), eta)
        }
        Learner::Npg { class, bound, grad_bound, hessian_bound, value_bound } => {
            let gamma = mdp.gamma();
            let eta = config
                .eta
                .unwrap_or_else(|| default_npg_eta(na, gamma, *bound, *grad_bound, *hessian_bound, t_max));
            let d = npg_scale(gamma, *bound, *grad_bound).max(*value_bound);
            let limit = 4.0 * d * d;
            let mut pi = NpgPolicy::new(class.clone(), class.uniform_params(), init, variant.mode);
            for t in 0..t_max {
                let start = Instant::now();
                iterates.push(Arc::new(pi.clone()));
                let samples = run(&pi, rng);
                let mut map = TangentFeatureMap::new(class.clone(), pi.theta().to_vec(), *bound);
                map.grad_bound = *grad_bound;
                map.hessian_bound = *hessian_bound;
                let (fit, retried) = guarded_fit(limit, t, |_| fit_critic_npg(&map, &samples))
                    .map_err(|e| Error::Iteration { iteration: t, source: Box::new(e) })?;
                let (mean_target, entropy) = stats(&samples, &pi);
                pi = npg_actor_step(&pi, &fit.params, eta)?;
                diagnostics.push(IterationDiagnostics {
                    iteration: t,
                    critic_loss: fit.loss,
                    mean_target,
                    entropy,
                    retried,
                    wallclock: start.elapsed().as_secs_f64(),
                });
            }
            (Arc::new(pi), eta)
        }
    };

    Ok(UpdateOutcome { mixture: MixturePolicy::new(iterates.clone()), iterates, last, eta, diagnostics })
}
