//! Environment and policy abstractions, Monte-Carlo estimators over a
//! geometric horizon, the discounted-occupancy sampler, and an exact
//! dynamic-programming oracle for tabular MDPs.

mod dp;
mod estimators;
mod tabular;

use std::fmt::Debug;
use std::sync::Arc;

pub use dp::{exact_occupancy, exact_q_dp, exact_value_dp, optimal_q_dp, start_occupancy, QTable};
pub use estimators::{
    estimate_advantage, estimate_q, estimate_v, occupancy_from_start, rollout_from, sample_occupancy,
    truncated_rollouts, Rollout,
};
pub use tabular::{TabularMdp, TabularMdpFile};

use crate::rng::{sample_categorical, Rng};

/// Reward as a function of a state-action pair. ENIAC evaluates policies
/// under `r`, `r + b` and `max(r, b)`, so every estimator takes one.
pub type RewardFn<'a, S> = dyn Fn(&S, usize) -> f64 + Send + Sync + 'a;

/// A discounted MDP with a finite action set `0..num_actions()`.
pub trait Mdp: Send + Sync {
    type State: Clone + Debug + Send + Sync + 'static;

    fn num_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    fn initial_state(&self, rng: &mut Rng) -> Self::State;
    fn step(&self, s: &Self::State, a: usize, rng: &mut Rng) -> Self::State;
    fn reward(&self, s: &Self::State, a: usize) -> f64;

    /// Range every reward value falls in. The default is the `[0, 1]`
    /// contract; environments with raw task rewards override it.
    fn reward_bounds(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    /// Hook called once per trajectory started by an estimator or sampler.
    fn on_rollout(&self) {}
}

impl<M: Mdp + ?Sized> Mdp for &M {
    type State = M::State;
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn gamma(&self) -> f64 {
        (**self).gamma()
    }
    fn initial_state(&self, rng: &mut Rng) -> Self::State {
        (**self).initial_state(rng)
    }
    fn step(&self, s: &Self::State, a: usize, rng: &mut Rng) -> Self::State {
        (**self).step(s, a, rng)
    }
    fn reward(&self, s: &Self::State, a: usize) -> f64 {
        (**self).reward(s, a)
    }
    fn reward_bounds(&self) -> (f64, f64) {
        (**self).reward_bounds()
    }
    fn on_rollout(&self) {
        (**self).on_rollout()
    }
}

/// The environment's own reward as a [`RewardFn`].
pub fn env_reward<M: Mdp>(mdp: &M) -> impl Fn(&M::State, usize) -> f64 + Send + Sync + '_ {
    move |s, a| mdp.reward(s, a)
}

/// Stochastic policy over a finite action set.
pub trait Policy<S>: Send + Sync {
    fn action_probabilities(&self, s: &S) -> Vec<f64>;

    fn act(&self, s: &S, rng: &mut Rng) -> usize {
        sample_categorical(&self.action_probabilities(s), rng)
    }

    /// Components of a trajectory-level uniform mixture. A mixture is
    /// executed by drawing one component per trajectory; see [`resolve`].
    fn components(&self) -> Option<&[Arc<dyn Policy<S>>]> {
        None
    }
}

/// Pick the concrete (non-mixture) policy that will drive one trajectory.
pub fn resolve<'a, S>(mut policy: &'a dyn Policy<S>, rng: &mut Rng) -> &'a dyn Policy<S> {
    use rand::Rng as _;
    while let Some(parts) = policy.components() {
        if parts.is_empty() {
            break;
        }
        policy = parts[rng.gen_range(0..parts.len())].as_ref();
    }
    policy
}

#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub num_actions: usize,
}

impl<S> Policy<S> for UniformPolicy {
    fn action_probabilities(&self, _s: &S) -> Vec<f64> {
        vec![1.0 / self.num_actions as f64; self.num_actions]
    }
}

/// Explicit per-state action distributions over states `0..n`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    /// Materialise any policy on a finite state set.
    pub fn from_policy(policy: &dyn Policy<usize>, num_states: usize) -> Self {
        Self { probs: (0..num_states).map(|s| policy.action_probabilities(&s)).collect() }
    }

    /// Deterministic policy playing `actions[s]`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut p = vec![0.0; num_actions];
                p[a] = 1.0;
                p
            })
            .collect();
        Self { probs }
    }
}

impl Policy<usize> for TabularPolicy {
    fn action_probabilities(&self, s: &usize) -> Vec<f64> {
        self.probs[*s].clone()
    }
}

/// Uniform trajectory-level mixture `Unif(pi_1, ..., pi_k)`.
pub struct MixturePolicy<S> {
    parts: Vec<Arc<dyn Policy<S>>>,
}

impl<S> Clone for MixturePolicy<S> {
    fn clone(&self) -> Self {
        Self { parts: self.parts.clone() }
    }
}

impl<S> MixturePolicy<S> {
    pub fn new(parts: Vec<Arc<dyn Policy<S>>>) -> Self {
        assert!(!parts.is_empty(), "mixture needs at least one component");
        Self { parts }
    }

    pub fn parts(&self) -> &[Arc<dyn Policy<S>>] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }
}

impl<S> Policy<S> for MixturePolicy<S> {
    /// State-marginal average of the components. Trajectories are sampled
    /// component-wise, so this is informational only.
    fn action_probabilities(&self, s: &S) -> Vec<f64> {
        let mut acc = self.parts[0].action_probabilities(s);
        for p in &self.parts[1..] {
            for (x, y) in acc.iter_mut().zip(p.action_probabilities(s)) {
                *x += y;
            }
        }
        let k = self.parts.len() as f64;
        acc.iter_mut().for_each(|x| *x /= k);
        acc
    }

    fn components(&self) -> Option<&[Arc<dyn Policy<S>>]> {
        Some(&self.parts)
    }
}

/// Shannon entropy (nats) of a distribution.
pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}
