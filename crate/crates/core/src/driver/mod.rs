//! The outer epoch loop. Each epoch rolls out the newest cover policy,
//! merges the draws into the buffer, builds a bonus from the width of the
//! buffer, runs a policy update restarted from the cover distribution, and
//! appends the update's output mixture to the cover.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor_critic::{policy_update, KnownSet, Learner, Mode, PolicyUpdateConfig, UpdateVariant};
use crate::function_class::mlp::Mlp;
use crate::function_class::EncoderFn;
use crate::mdp::{env_reward, estimate_v, occupancy_from_start, Mdp, MixturePolicy, Policy, RewardFn, UniformPolicy};
use crate::neural_width::{normalized_bonus, train_width, NeuralWidth, Point, WidthTrainConfig};
use crate::rng::{split, split_n, Rng};
use crate::width::{threshold_bonus, zero_bonus, BonusFn, BonusSpec, Dataset, WidthOracle};
use crate::{Error, Result};

/// How the bonus enters the exploration reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    /// `r + b`.
    #[default]
    Sum,
    /// `max(r, b)`.
    Max,
}

/// Ordered epoch policies; index 0 is the uniform policy.
pub struct PolicyCover<S> {
    policies: Vec<Arc<dyn Policy<S>>>,
}

impl<S> Clone for PolicyCover<S> {
    fn clone(&self) -> Self {
        Self { policies: self.policies.clone() }
    }
}

impl<S: 'static> PolicyCover<S> {
    pub fn new(num_actions: usize) -> Self {
        Self { policies: vec![Arc::new(UniformPolicy { num_actions })] }
    }

    pub fn push(&mut self, policy: Arc<dyn Policy<S>>) {
        self.policies.push(policy);
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn policies(&self) -> &[Arc<dyn Policy<S>>] {
        &self.policies
    }

    pub fn newest(&self) -> &Arc<dyn Policy<S>> {
        self.policies.last().expect("cover is never empty")
    }

    /// `Unif(pi^2, ..., pi^{n})`, everything but the uniform policy.
    pub fn output(&self) -> Result<MixturePolicy<S>> {
        if self.policies.len() < 2 {
            return Err(Error::Empty("cover has no learned policy".into()));
        }
        Ok(MixturePolicy::new(self.policies[1..].to_vec()))
    }
}

/// Sampler for `Unif(d^{pi^1}_{s0}, ..., d^{pi^n}_{s0})`: draw a cover index
/// uniformly, then one occupancy draw under that policy.
pub fn build_cover_distribution<'a, M: Mdp>(
    mdp: &'a M,
    cover: &PolicyCover<M::State>,
) -> impl Fn(&mut Rng) -> (M::State, usize) + Send + Sync + 'a {
    let policies = cover.policies.clone();
    move |rng: &mut Rng| {
        let i = rng.gen_range(0..policies.len());
        occupancy_from_start(mdp, policies[i].as_ref(), rng)
    }
}

/// Append `k` draws of `d^{pi^n}_{s0}` for the newest cover policy and
/// return them.
pub fn advance_buffer<M: Mdp>(
    z: &mut Dataset<M::State>,
    mdp: &M,
    cover: &PolicyCover<M::State>,
    k: usize,
    parallel: bool,
    rng: &mut Rng,
) -> Vec<(M::State, usize)> {
    let pi = cover.newest().clone();
    let one = |mut r: Rng| occupancy_from_start(mdp, pi.as_ref(), &mut r);
    let streams = split_n(rng, k);
    let fresh: Vec<_> =
        if parallel { streams.into_par_iter().map(one).collect() } else { streams.into_iter().map(one).collect() };
    z.extend(fresh.iter().cloned());
    fresh
}

/// Source of the per-epoch width function.
pub enum WidthBackend<S> {
    /// Exact width oracle (tabular, finite or linear), grown incrementally
    /// with the buffer. Bonus is the threshold bonus at `beta`.
    Exact(Box<dyn WidthOracle<S>>),
    /// Paired-network width retrained from scratch on the buffer every
    /// epoch; the bonus is the normalized width with no threshold.
    Neural {
        net: Mlp,
        encoder: EncoderFn<S>,
        config: WidthTrainConfig,
        /// Draws one query pair for `Z_Q`.
        query_sampler: Arc<dyn Fn(&mut Rng) -> (S, usize) + Send + Sync>,
    },
    /// Bonus identically zero: the cover-restart baseline.
    Zero,
}

impl<S> WidthBackend<S> {
    pub fn name(&self) -> &'static str {
        match self {
            WidthBackend::Exact(_) => "exact",
            WidthBackend::Neural { .. } => "neural",
            WidthBackend::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EniacConfig {
    /// Epochs `N`.
    pub epochs: usize,
    /// Rollouts per epoch `K`.
    pub rollouts: usize,
    /// Width radius `eps`.
    pub epsilon: f64,
    /// Bonus threshold `beta`.
    pub beta: f64,
    pub variant: UpdateVariant,
    pub update: PolicyUpdateConfig,
    pub combiner: Combiner,
    pub seed: u64,
    /// Estimate the exploitation value every this many epochs (0 = never).
    pub eval_every: usize,
    /// Monte-Carlo draws per exploitation estimate.
    pub eval_rollouts: usize,
    pub parallel: bool,
}

impl Default for EniacConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            rollouts: 100,
            epsilon: 0.5,
            beta: 1.0,
            variant: UpdateVariant::SPI_SAMPLE,
            update: PolicyUpdateConfig::default(),
            combiner: Combiner::Sum,
            seed: 0,
            eval_every: 0,
            eval_rollouts: 500,
            parallel: true,
        }
    }
}

impl EniacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.rollouts == 0 {
            return Err(Error::Config("ENIAC needs N >= 1 epochs and K >= 1 rollouts".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("bonus threshold beta must be positive, got {}", self.beta)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("width radius must be finite and nonnegative, got {}", self.epsilon)));
        }
        self.variant.validate()?;
        self.update.validate()?;
        if self.eval_every > 0 && self.eval_rollouts == 0 {
            return Err(Error::Config("eval_rollouts must be positive when evaluating".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Bonus specification matching the variant. An infinite `beta` never
    /// fires.
    pub fn bonus_spec(&self, gamma: f64, num_actions: usize) -> Result<BonusSpec> {
        match self.variant.mode {
            Mode::Sample => BonusSpec::sample(self.beta, gamma, num_actions),
            Mode::Compute { alpha } => BonusSpec::compute(self.beta, gamma, num_actions, alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub buffer_size: usize,
    /// Fraction of buffer pairs with positive bonus.
    pub unknown_fraction: f64,
    /// Largest bonus seen on the buffer.
    pub max_bonus: f64,
    pub exploitation_value: Option<f64>,
    pub wallclock: f64,
}

pub struct EniacOutput<S> {
    /// `Unif(pi^2, ..., pi^{N+1})`.
    pub policy: MixturePolicy<S>,
    pub cover: PolicyCover<S>,
    pub buffer: Dataset<S>,
    pub records: Vec<EpochRecord>,
}

struct EpochBonus<S> {
    raw: BonusFn<S>,
    known: KnownSet<S>,
}

fn epoch_bonus<S: Clone + Send + Sync + 'static>(
    backend: &mut WidthBackend<S>,
    buffer: &Dataset<S>,
    fresh: &[(S, usize)],
    spec: &BonusSpec,
    rng: &mut Rng,
) -> Result<EpochBonus<S>> {
    let na = spec.num_actions;
    match backend {
        WidthBackend::Exact(oracle) => {
            for (s, a) in fresh {
                oracle.push(s, *a);
            }
            let raw = threshold_bonus(oracle.snapshot(), *spec);
            Ok(EpochBonus { known: KnownSet::from_bonus(raw.clone(), na), raw })
        }
        WidthBackend::Neural { net, encoder, config, query_sampler } => {
            let points: Vec<Point> = buffer.iter().map(|(s, a)| (encoder(s), a)).collect();
            let queries: Vec<(S, usize)> = (0..config.query_set_size).map(|_| query_sampler(rng)).collect();
            let encoded: Vec<Point> = queries.iter().map(|(s, a)| (encoder(s), *a)).collect();
            let pair = train_width(net, &points, &encoded, config, rng, &mut |_| {})?;
            let width = NeuralWidth::new(pair, encoder.clone()).width_fn();
            let raw = normalized_bonus(width.clone(), &queries);
            // the normalized bonus is never exactly zero, so membership in
            // the known set is still decided by the width threshold
            Ok(EpochBonus { known: KnownSet::from_width(width, spec.beta, na), raw })
        }
        WidthBackend::Zero => Ok(EpochBonus { raw: zero_bonus(), known: KnownSet::all_known() }),
    }
}

/// Exploitation estimate: one policy update under the raw reward with zero
/// bonus from the cover distribution, then the mean of `config.eval_rollouts`
/// value draws of its output mixture at the start state.
pub fn evaluate_exploitation<M: Mdp>(
    mdp: &M,
    cover: &PolicyCover<M::State>,
    learner: &Learner<M::State>,
    config: &EniacConfig,
    rng: &mut Rng,
) -> Result<(f64, MixturePolicy<M::State>)> {
    let rho = build_cover_distribution(mdp, cover);
    let reward = env_reward(mdp);
    let variant = UpdateVariant { algorithm: config.variant.algorithm, mode: Mode::Sample };
    let outcome = policy_update(
        mdp,
        &rho,
        &reward,
        zero_bonus().as_ref(),
        Some(KnownSet::all_known()),
        learner,
        &config.update,
        variant,
        rng,
    )?;
    let value = mean_value(mdp, &outcome.mixture, config.eval_rollouts.max(1), config.parallel, rng);
    Ok((value, outcome.mixture))
}

/// Mean of `n` raw-reward value draws at the start state.
pub fn mean_value<M: Mdp>(mdp: &M, policy: &dyn Policy<M::State>, n: usize, parallel: bool, rng: &mut Rng) -> f64 {
    let reward = env_reward(mdp);
    let one = |mut r: Rng| {
        let s0 = mdp.initial_state(&mut r);
        estimate_v(mdp, policy, &s0, &reward, &mut r)
    };
    let streams = split_n(rng, n);
    let draws: Vec<f64> =
        if parallel { streams.into_par_iter().map(one).collect() } else { streams.into_iter().map(one).collect() };
    draws.iter().sum::<f64>() / n as f64
}

/// Run `N` epochs. Every finished epoch is passed to `on_epoch` together
/// with the grown cover before the next begins, so records survive a later
/// failure. Returning `false` from `on_epoch` ends the run early.
pub fn run_eniac<M: Mdp>(
    mdp: &M,
    learner: &Learner<M::State>,
    mut backend: WidthBackend<M::State>,
    config: &EniacConfig,
    rng: &mut Rng,
    on_epoch: &mut dyn FnMut(&EpochRecord, &PolicyCover<M::State>) -> bool,
) -> Result<EniacOutput<M::State>> {
    config.validate()?;
    if config.variant.algorithm != learner.algorithm() {
        return Err(Error::Config(format!("variant {} does not match the learner", config.variant)));
    }
    let na = mdp.num_actions();
    let spec = config.bonus_spec(mdp.gamma(), na)?;
    let reward = env_reward(mdp);
    let mut cover = PolicyCover::new(na);
    let mut buffer = Dataset::new();
    let mut records = Vec::with_capacity(config.epochs);
    let mut update = config.update.clone();
    update.parallel = config.parallel;

    for n in 1..=config.epochs {
        let start = Instant::now();
        let wrap = |e: Error| Error::Epoch { epoch: n, source: Box::new(e) };
        let fresh = advance_buffer(&mut buffer, mdp, &cover, config.rollouts, config.parallel, rng);
        let mut brng = split(rng);
        let bonus = epoch_bonus(&mut backend, &buffer, &fresh, &spec, &mut brng).map_err(wrap)?;

        let rho = build_cover_distribution(mdp, &cover);
        let raw = bonus.raw.clone();
        // with max(r, b) the update sees reward r + (max(r, b) - r)
        let shifted = |s: &M::State, a: usize| {
            let r = mdp.reward(s, a);
            r.max(raw(s, a)) - r
        };
        let effective: &RewardFn<'_, M::State> = match config.combiner {
            Combiner::Sum => raw.as_ref(),
            Combiner::Max => &shifted,
        };
        let outcome = policy_update(
            mdp,
            &rho,
            &reward,
            effective,
            Some(bonus.known.clone()),
            learner,
            &update,
            config.variant,
            rng,
        )
        .map_err(wrap)?;

        let unknown = buffer.iter().filter(|(s, a)| (bonus.raw)(s, *a) > 0.0).count();
        let max_bonus = buffer.iter().map(|(s, a)| (bonus.raw)(s, a)).fold(0.0, f64::max);
        cover.push(Arc::new(outcome.mixture));

        let exploitation_value = if config.eval_every > 0 && n % config.eval_every == 0 {
            let mut erng = split(rng);
            Some(evaluate_exploitation(mdp, &cover, learner, config, &mut erng).map_err(wrap)?.0)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: n,
            buffer_size: buffer.len(),
            unknown_fraction: unknown as f64 / buffer.len() as f64,
            max_bonus,
            exploitation_value,
            wallclock: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {n}: |Z| = {}, unknown {:.3}, value {:?}",
            record.buffer_size,
            record.unknown_fraction,
            record.exploitation_value
        );
        let go_on = on_epoch(&record, &cover);
        records.push(record);
        if !go_on {
            break;
        }
    }

    Ok(EniacOutput { policy: cover.output()?, cover, buffer, records })
}
