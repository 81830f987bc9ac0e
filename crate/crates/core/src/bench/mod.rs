//! Benchmark environments, baselines and the experiment runner.
//!
//! A [`RunConfig`] names an environment, a critic family, an algorithm and
//! a seed list. [`run_experiment`] executes one run per seed, evaluates the
//! exploitation policy on a cadence and writes `metrics.csv`, `epochs.csv`
//! and a `manifest.toml` to the output directory.

pub mod envs;
pub mod ppo;
pub mod ring;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor_critic::{
    collect_critic_samples, npg_actor_step, spi_actor_step, Algorithm, InitPolicy, KnownSet, Learner, Mode, NpgPolicy,
    SpiPolicy,
};
use crate::driver::{evaluate_exploitation, run_eniac, EniacConfig, PolicyCover, WidthBackend};
use crate::function_class::mlp::Mlp;
use crate::function_class::{
    fit_critic_npg, fit_critic_spi, DifferentiableClass, EncoderFn, FitOptions, LinearClass, MlpClass,
    MlpFitConfig, TabularClass, TangentFeatureMap,
};
use crate::mdp::{
    env_reward, estimate_v, exact_value_dp, occupancy_from_start, optimal_q_dp, start_occupancy, Mdp, Policy, TabularMdp,
    TabularPolicy,
};
use crate::neural_width::WidthTrainConfig;
use crate::rng::{seeded, split_n, Rng};
use crate::width::{LinearWidth, TabularWidth, Tabulated};
use crate::{Error, Result};

pub use envs::{
    episode_return, lock_combination, make_combination_lock, make_gridworld, CountingMdp, McState, MountainCarConfig,
    MountainCarEnv,
};

const EVAL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockConfig {
    pub horizon: usize,
    pub delta: f64,
    pub gamma: f64,
    pub actions: usize,
    pub lock_seed: u64,
}

impl Default for LockConfig {
    fn default() -> Self {
        Self { horizon: 15, delta: 0.01, gamma: 0.97, actions: 2, lock_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub slip: f64,
    pub gamma: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { width: 5, height: 5, slip: 0.1, gamma: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    CombinationLock(LockConfig),
    Gridworld(GridConfig),
    MountainCar(MountainCarConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::CombinationLock(LockConfig::default())
    }
}

impl EnvConfig {
    pub fn tabular(&self) -> Result<Option<TabularMdp>> {
        match self {
            EnvConfig::CombinationLock(c) => {
                Ok(Some(make_combination_lock(c.horizon, c.delta, c.gamma, c.actions, c.lock_seed)?))
            }
            EnvConfig::Gridworld(c) => Ok(Some(make_gridworld(c.width, c.height, c.slip, c.gamma)?)),
            EnvConfig::MountainCar(_) => Ok(None),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::CombinationLock(_) => "combination_lock",
            EnvConfig::Gridworld(_) => "gridworld",
            EnvConfig::MountainCar(_) => "mountain_car",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmId {
    #[default]
    Eniac,
    ZeroBonus,
    VanillaPg,
    PpoRnd,
    PcPg,
}

impl AlgorithmId {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlgorithmId::Eniac => "eniac",
            AlgorithmId::ZeroBonus => "zero-bonus",
            AlgorithmId::VanillaPg => "vanilla-pg",
            AlgorithmId::PpoRnd => "ppo-rnd",
            AlgorithmId::PcPg => "pc-pg",
        }
    }

    /// Registered ids without an implementation.
    pub fn check_in_scope(&self) -> Result<()> {
        match self {
            AlgorithmId::PpoRnd | AlgorithmId::PcPg => {
                Err(Error::Unsupported(format!("baseline {} is out of scope", self.as_str())))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for AlgorithmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eniac" => Ok(AlgorithmId::Eniac),
            "zero-bonus" => Ok(AlgorithmId::ZeroBonus),
            "vanilla-pg" => Ok(AlgorithmId::VanillaPg),
            "ppo-rnd" => Ok(AlgorithmId::PpoRnd),
            "pc-pg" => Ok(AlgorithmId::PcPg),
            other => Err(Error::Config(format!("unknown algorithm id {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    #[default]
    Tabular,
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub kind: CriticKind,
    /// Critic sup bound `W`; defaults to `(R_max + bonus) / (1 - gamma)`.
    pub bound: Option<f64>,
    /// Coefficient radius `B` of the NPG tangent class.
    pub npg_bound: f64,
    /// Radial bins per state dimension (continuous states, linear critic).
    pub bins: usize,
    pub bin_width: f64,
    pub hidden: Vec<usize>,
    pub fit: MlpFitConfig,
    /// Hidden sizes of the width networks.
    pub width_hidden: Vec<usize>,
    pub width_train: WidthTrainConfig,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            kind: CriticKind::Tabular,
            bound: None,
            npg_bound: 10.0,
            bins: 7,
            bin_width: 0.3,
            hidden: vec![64, 64],
            fit: MlpFitConfig::default(),
            width_hidden: vec![64, 64],
            width_train: WidthTrainConfig::default(),
        }
    }
}

/// Per-seed success test for the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceConfig {
    /// Absolute evaluation threshold.
    pub threshold: Option<f64>,
    /// Threshold as a fraction of the optimal value (tabular envs only).
    pub optimum_fraction: Option<f64>,
    /// Stop a seed at its first evaluation above the threshold.
    pub stop: bool,
    /// Seeds that must succeed for the run to pass.
    pub min_successes: usize,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self { threshold: None, optimum_fraction: None, stop: false, min_successes: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: AlgorithmId,
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    pub critic: CriticConfig,
    pub eniac: EniacConfig,
    pub acceptance: AcceptanceConfig,
    /// Clipped-ratio training settings used with `--experiment`.
    pub experiment: ppo::PpoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: AlgorithmId::Eniac,
            seeds: vec![0, 1, 2, 3, 4],
            env: EnvConfig::default(),
            critic: CriticConfig::default(),
            eniac: EniacConfig::default(),
            acceptance: AcceptanceConfig::default(),
            experiment: ppo::PpoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.algorithm.check_in_scope()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.eniac.validate()?;
        if self.acceptance.min_successes > self.seeds.len() {
            return Err(Error::Config("min_successes exceeds the number of seeds".into()));
        }
        if matches!(self.env, EnvConfig::MountainCar(_)) && self.critic.kind == CriticKind::Tabular {
            return Err(Error::Config("mountain car needs a linear or mlp critic".into()));
        }
        if self.critic.kind == CriticKind::Mlp && self.eniac.variant.algorithm == Algorithm::Npg {
            return Err(Error::Config("NPG with an mlp critic is not supported; use SPI or a linear critic".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Training trajectories consumed so far.
    pub episode: u64,
    /// Training transitions consumed so far.
    pub env_steps: u64,
    pub mean_return: f64,
    pub epochs_used: usize,
    pub seed: u64,
}

/// Epoch record without wallclock, for reproducible CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub seed: u64,
    pub epoch: usize,
    pub buffer_size: usize,
    pub unknown_fraction: f64,
    pub max_bonus: f64,
    pub rollouts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_value: f64,
    pub best_value: f64,
    pub succeeded: bool,
    pub stopped_early: bool,
    pub episodes: u64,
    pub env_steps: u64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics_path: PathBuf,
    pub epochs_path: PathBuf,
    pub seeds: Vec<SeedSummary>,
    /// Resolved acceptance threshold, if any.
    pub threshold: Option<f64>,
    /// Optimal start value for tabular environments.
    pub optimum: Option<f64>,
}

impl RunSummary {
    pub fn successes(&self) -> usize {
        self.seeds.iter().filter(|s| s.succeeded).count()
    }

    pub fn median_final(&self) -> f64 {
        median(self.seeds.iter().map(|s| s.final_value).collect())
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Mean of `episodes` raw-reward value draws at the start state.
pub fn evaluate_policy<M: Mdp>(mdp: &M, policy: &dyn Policy<M::State>, episodes: usize, rng: &mut Rng) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let reward = env_reward(mdp);
    let draws: Vec<f64> = split_n(rng, episodes)
        .into_par_iter()
        .map(|mut r| {
            let s0 = mdp.initial_state(&mut r);
            estimate_v(mdp, policy, &s0, &reward, &mut r)
        })
        .collect();
    Ok(draws.iter().sum::<f64>() / episodes as f64)
}

/// Mean undiscounted return of `episodes` mountain-car episodes.
pub fn evaluate_episodic(env: &MountainCarEnv, policy: &dyn Policy<McState>, episodes: usize, rng: &mut Rng) -> f64 {
    let draws: Vec<f64> =
        split_n(rng, episodes).into_par_iter().map(|mut r| episode_return(env, policy, &mut r).0).collect();
    draws.iter().sum::<f64>() / episodes.max(1) as f64
}

/// A Markov policy with the same start-state occupancy (and hence value) as
/// `policy`, which may be a trajectory-level mixture.
pub fn markov_policy(mdp: &TabularMdp, policy: &dyn Policy<usize>) -> Result<TabularPolicy> {
    let d = start_occupancy(mdp, policy, 1e-12)?;
    let na = mdp.num_actions();
    let probs = d
        .iter()
        .map(|row| {
            let mass: f64 = row.iter().sum();
            if mass > 1e-300 {
                row.iter().map(|x| x / mass).collect()
            } else {
                vec![1.0 / na as f64; na]
            }
        })
        .collect();
    Ok(TabularPolicy { probs })
}

/// Default critic sup bound `(R_max + bonus) / (1 - gamma)`.
pub fn default_critic_bound(reward_max: f64, bonus_magnitude: f64, gamma: f64) -> f64 {
    (reward_max + bonus_magnitude) / (1.0 - gamma)
}

struct Setup<S> {
    learner: Learner<S>,
    backend: Box<dyn Fn() -> WidthBackend<S> + Send + Sync>,
}

fn tabular_setup(mdp: &TabularMdp, cfg: &RunConfig) -> Result<Setup<usize>> {
    let (ns, na, gamma) = (mdp.num_states(), mdp.num_actions(), mdp.gamma());
    let magnitude = cfg.eniac.bonus_spec(gamma, na)?.magnitude();
    let w = cfg.critic.bound.unwrap_or_else(|| default_critic_bound(mdp.reward_bounds().1, magnitude, gamma));
    let eps = cfg.eniac.epsilon;
    let zero = cfg.algorithm == AlgorithmId::ZeroBonus;
    match (cfg.eniac.variant.algorithm, cfg.critic.kind) {
        (Algorithm::Spi, CriticKind::Tabular) => Ok(Setup {
            learner: Learner::Spi { class: Arc::new(TabularClass::new(ns, na, w)) },
            backend: Box::new(move || {
                if zero {
                    WidthBackend::Zero
                } else {
                    WidthBackend::Exact(Box::new(TabularWidth::new(ns, na, w, eps)))
                }
            }),
        }),
        (Algorithm::Spi, CriticKind::Linear) => {
            let class = LinearClass::one_hot(ns, na, w * ((ns * na) as f64).sqrt());
            let width_class = class.clone();
            Ok(Setup {
                learner: Learner::Spi { class: Arc::new(class) },
                backend: Box::new(move || {
                    if zero {
                        WidthBackend::Zero
                    } else {
                        WidthBackend::Exact(Box::new(Tabulated::new(LinearWidth::from_class(&width_class, eps, None), ns, na)))
                    }
                }),
            })
        }
        (Algorithm::Npg, CriticKind::Tabular | CriticKind::Linear) => {
            let b = cfg.critic.npg_bound;
            let class: Arc<dyn DifferentiableClass<usize>> = Arc::new(LinearClass::one_hot(ns, na, b));
            let map = TangentFeatureMap::new(class.clone(), class.uniform_params(), b);
            Ok(Setup {
                learner: Learner::Npg { class, bound: b, grad_bound: 1.0, hessian_bound: 0.0, value_bound: w },
                backend: Box::new(move || {
                    if zero {
                        WidthBackend::Zero
                    } else {
                        WidthBackend::Exact(Box::new(Tabulated::new(LinearWidth::from_tangent(&map, eps, None), ns, na)))
                    }
                }),
            })
        }
        (_, CriticKind::Mlp) => {
            let class = MlpClass::one_hot(ns, &cfg.critic.hidden, na, w).with_fit_config(cfg.critic.fit.clone());
            let encoder: EncoderFn<usize> = Arc::new(move |s: &usize| {
                let mut v = vec![0.0; ns];
                v[*s] = 1.0;
                v
            });
            let net = Mlp::with_hidden(ns, &cfg.critic.width_hidden, na);
            let train = cfg.critic.width_train.clone();
            Ok(Setup {
                learner: Learner::Spi { class: Arc::new(class) },
                backend: Box::new(move || {
                    if zero {
                        return WidthBackend::Zero;
                    }
                    WidthBackend::Neural {
                        net: net.clone(),
                        encoder: encoder.clone(),
                        config: train.clone(),
                        query_sampler: Arc::new(move |r: &mut Rng| {
                            use rand::Rng as _;
                            (r.gen_range(0..ns), r.gen_range(0..na))
                        }),
                    }
                }),
            })
        }
    }
}

/// Grid of radial-bin centers over the encoded position/velocity square.
fn mountain_car_centers(bins: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> =
        (0..bins).map(|i| if bins == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (bins - 1) as f64 }).collect();
    let mut centers = Vec::with_capacity(bins * bins);
    for &p in &axis {
        for &v in &axis {
            centers.push(vec![p, v]);
        }
    }
    centers
}

fn mountain_car_setup(env: &MountainCarEnv, cfg: &RunConfig) -> Result<Setup<McState>> {
    let (na, gamma) = (env.num_actions(), env.gamma());
    let horizon = env.config().horizon;
    let magnitude = cfg.eniac.bonus_spec(gamma, na)?.magnitude();
    let w = cfg.critic.bound.unwrap_or_else(|| default_critic_bound(env.reward_bounds().1, magnitude, gamma));
    let eps = cfg.eniac.epsilon;
    let zero = cfg.algorithm == AlgorithmId::ZeroBonus;
    let encoder: EncoderFn<McState> = Arc::new(move |s: &McState| MountainCarEnv::encode(s, horizon));
    match cfg.critic.kind {
        CriticKind::Tabular => Err(Error::Config("mountain car needs a linear or mlp critic".into())),
        CriticKind::Linear => {
            let centers = mountain_car_centers(cfg.critic.bins);
            let k = centers.len();
            let bins = crate::function_class::radial_bin_features(centers, cfg.critic.bin_width, na);
            let enc = encoder.clone();
            let features: crate::function_class::FeatureFn<McState> = Arc::new(move |s: &McState, a: usize| {
                let x = enc(s);
                bins(&vec![x[0], x[1]], a)
            });
            let b = match cfg.eniac.variant.algorithm {
                Algorithm::Spi => w * (k as f64).sqrt(),
                Algorithm::Npg => cfg.critic.npg_bound,
            };
            let class = LinearClass::new(features, k * na, na, b, 1.0);
            match cfg.eniac.variant.algorithm {
                Algorithm::Spi => {
                    let width_class = class.clone();
                    Ok(Setup {
                        learner: Learner::Spi { class: Arc::new(class) },
                        backend: Box::new(move || {
                            if zero {
                                WidthBackend::Zero
                            } else {
                                WidthBackend::Exact(Box::new(LinearWidth::from_class(&width_class, eps, None)))
                            }
                        }),
                    })
                }
                Algorithm::Npg => {
                    let class: Arc<dyn DifferentiableClass<McState>> = Arc::new(class);
                    let map = TangentFeatureMap::new(class.clone(), class.uniform_params(), b);
                    Ok(Setup {
                        learner: Learner::Npg { class, bound: b, grad_bound: 1.0, hessian_bound: 0.0, value_bound: w },
                        backend: Box::new(move || {
                            if zero {
                                WidthBackend::Zero
                            } else {
                                WidthBackend::Exact(Box::new(LinearWidth::from_tangent(&map, eps, None)))
                            }
                        }),
                    })
                }
            }
        }
        CriticKind::Mlp => {
            let class = MlpClass::new(encoder.clone(), 3, &cfg.critic.hidden, na, w).with_fit_config(cfg.critic.fit.clone());
            let net = Mlp::with_hidden(3, &cfg.critic.width_hidden, na);
            let train = cfg.critic.width_train.clone();
            let env = env.clone();
            Ok(Setup {
                learner: Learner::Spi { class: Arc::new(class) },
                backend: Box::new(move || {
                    if zero {
                        return WidthBackend::Zero;
                    }
                    let env = env.clone();
                    WidthBackend::Neural {
                        net: net.clone(),
                        encoder: encoder.clone(),
                        config: train.clone(),
                        query_sampler: Arc::new(move |r: &mut Rng| random_mc_pair(&env, r)),
                    }
                }),
            })
        }
    }
}

/// Uniform draw over the position/velocity box, time and actions.
pub fn random_mc_pair(env: &MountainCarEnv, rng: &mut Rng) -> (McState, usize) {
    use rand::Rng as _;
    let s = McState {
        position: rng.gen_range(envs::MC_MIN_POSITION..envs::MC_MAX_POSITION),
        velocity: rng.gen_range(-envs::MC_MAX_SPEED..envs::MC_MAX_SPEED),
        t: rng.gen_range(0..env.config().horizon),
        done: false,
    };
    (s, rng.gen_range(0..env.num_actions()))
}

struct SeedOutput<S> {
    rows: Vec<MetricsRow>,
    epochs: Vec<EpochRow>,
    summary: SeedSummary,
    /// Last evaluated exploitation policy (cover runs only).
    policy: Option<Arc<dyn Policy<S>>>,
}

/// Evaluates an exploitation policy; returns the value to report.
type Evaluator<'a, S> = dyn Fn(&dyn Policy<S>, &mut Rng) -> f64 + Sync + 'a;

fn run_seed<M: Mdp>(
    env: &M,
    setup: &Setup<M::State>,
    cfg: &RunConfig,
    seed: u64,
    threshold: Option<f64>,
    evaluate: &Evaluator<'_, M::State>,
) -> Result<SeedOutput<M::State>> {
    let counting = CountingMdp::new(env);
    let mut rng = seeded(seed);
    let mut erng = seeded(seed ^ EVAL_SALT);
    let mut eniac = cfg.eniac.clone();
    eniac.seed = seed;
    eniac.eval_every = 0;
    let cadence = cfg.eniac.eval_every.max(1);
    let epochs = cfg.eniac.epochs;
    let mut rows = Vec::new();
    let mut epoch_rows = Vec::new();
    let mut failure = None;
    let mut stopped = false;
    let mut last_policy = None;

    let report = |epoch: usize, policy: &dyn Policy<M::State>, erng: &mut Rng, rows: &mut Vec<MetricsRow>| {
        let value = evaluate(policy, erng);
        rows.push(MetricsRow {
            episode: counting.rollouts(),
            env_steps: counting.steps(),
            mean_return: value,
            epochs_used: epoch,
            seed,
        });
        value
    };

    match cfg.algorithm {
        AlgorithmId::Eniac | AlgorithmId::ZeroBonus => {
            let result = run_eniac(&counting, &setup.learner, (setup.backend)(), &eniac, &mut rng, &mut |rec, cover| {
                epoch_rows.push(EpochRow {
                    seed,
                    epoch: rec.epoch,
                    buffer_size: rec.buffer_size,
                    unknown_fraction: rec.unknown_fraction,
                    max_bonus: rec.max_bonus,
                    rollouts: counting.rollouts(),
                });
                if rec.epoch % cadence != 0 && rec.epoch != epochs {
                    return true;
                }
                match exploit(env, cover, &setup.learner, &eniac, &mut erng) {
                    Ok(policy) => {
                        let value = report(rec.epoch, policy.as_ref(), &mut erng, &mut rows);
                        last_policy = Some(policy);
                        if cfg.acceptance.stop && threshold.is_some_and(|t| value > t) {
                            stopped = true;
                            return false;
                        }
                        true
                    }
                    Err(e) => {
                        failure = Some(e);
                        false
                    }
                }
            });
            result?;
        }
        AlgorithmId::VanillaPg => {
            vanilla_pg(&counting, &setup.learner, &eniac, &mut rng, &mut |epoch, policy| {
                if epoch % cadence != 0 && epoch != epochs {
                    return true;
                }
                let value = report(epoch, policy, &mut erng, &mut rows);
                if cfg.acceptance.stop && threshold.is_some_and(|t| value > t) {
                    stopped = true;
                    return false;
                }
                true
            })?;
        }
        other => other.check_in_scope()?,
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let final_value = rows.last().map(|r| r.mean_return).unwrap_or(f64::NAN);
    let best_value = rows.iter().map(|r| r.mean_return).fold(f64::NEG_INFINITY, f64::max);
    let succeeded = match threshold {
        Some(t) if cfg.acceptance.stop => best_value > t,
        Some(t) => final_value >= t,
        None => true,
    };
    let summary = SeedSummary {
        seed,
        final_value,
        best_value,
        succeeded,
        stopped_early: stopped,
        episodes: counting.rollouts(),
        env_steps: counting.steps(),
    };
    Ok(SeedOutput { rows, epochs: epoch_rows, summary, policy: last_policy })
}

fn exploit<M: Mdp>(
    env: &M,
    cover: &PolicyCover<M::State>,
    learner: &Learner<M::State>,
    cfg: &EniacConfig,
    rng: &mut Rng,
) -> Result<Arc<dyn Policy<M::State>>> {
    let (_, mixture) = evaluate_exploitation(env, cover, learner, &EniacConfig { eval_rollouts: 1, ..cfg.clone() }, rng)?;
    Ok(Arc::new(mixture))
}

enum OnPolicy<S> {
    Spi(SpiPolicy<S>),
    Npg(NpgPolicy<S>),
}

impl<S: Send + Sync + 'static> OnPolicy<S> {
    fn as_policy(&self) -> &dyn Policy<S> {
        match self {
            OnPolicy::Spi(p) => p,
            OnPolicy::Npg(p) => p,
        }
    }
}

/// No-cover baseline: `N` epochs of `T` on-policy iterations each, with
/// critic samples drawn from the current iterate's occupancy at the start
/// state and no bonus. The policy carries over between epochs.
pub fn vanilla_pg<M: Mdp>(
    mdp: &M,
    learner: &Learner<M::State>,
    cfg: &EniacConfig,
    rng: &mut Rng,
    on_epoch: &mut dyn FnMut(usize, &dyn Policy<M::State>) -> bool,
) -> Result<()> {
    cfg.validate()?;
    let na = mdp.num_actions();
    let reward = env_reward(mdp);
    let zero = |_: &M::State, _: usize| 0.0;
    let init = InitPolicy::new(Some(KnownSet::all_known()), na);
    let t_total = cfg.epochs * cfg.update.iterations;
    let mut pi = match learner {
        Learner::Spi { class } => OnPolicy::Spi(SpiPolicy::new(class.clone(), init, Mode::Sample)),
        Learner::Npg { class, .. } => OnPolicy::Npg(NpgPolicy::new(class.clone(), class.uniform_params(), init, Mode::Sample)),
    };
    let eta = match learner {
        Learner::Spi { class } => {
            cfg.update.eta.unwrap_or_else(|| crate::actor_critic::default_spi_eta(na, class.sup_bound(), t_total))
        }
        Learner::Npg { bound, grad_bound, hessian_bound, .. } => cfg.update.eta.unwrap_or_else(|| {
            crate::actor_critic::default_npg_eta(na, mdp.gamma(), *bound, *grad_bound, *hessian_bound, t_total)
        }),
    };
    for epoch in 1..=cfg.epochs {
        for t in 0..cfg.update.iterations {
            let current = pi.as_policy();
            let rho = |r: &mut Rng| occupancy_from_start(mdp, current, r);
            let samples = collect_critic_samples(
                mdp,
                &rho,
                current,
                &reward,
                &zero,
                cfg.update.samples,
                learner.algorithm(),
                cfg.parallel,
                rng,
            );
            let wrap = |e: Error| Error::Epoch { epoch, source: Box::new(Error::Iteration { iteration: t, source: Box::new(e) }) };
            pi = match (&pi, learner) {
                (OnPolicy::Spi(p), Learner::Spi { class }) => {
                    let fit = fit_critic_spi(class.as_ref(), &samples, &FitOptions::default()).map_err(wrap)?;
                    OnPolicy::Spi(spi_actor_step(p, fit.params, eta))
                }
                (OnPolicy::Npg(p), Learner::Npg { class, bound, .. }) => {
                    let map = TangentFeatureMap::new(class.clone(), p.theta().to_vec(), *bound);
                    let fit = fit_critic_npg(&map, &samples).map_err(wrap)?;
                    OnPolicy::Npg(npg_actor_step(p, &fit.params, eta).map_err(wrap)?)
                }
                _ => unreachable!("policy and learner are built together"),
            };
        }
        if !on_epoch(epoch, pi.as_policy()) {
            break;
        }
    }
    Ok(())
}

/// Run every seed of `cfg`, writing CSVs and a manifest under `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("manifest.toml"), manifest(cfg))?;
    let mut outputs = Vec::with_capacity(cfg.seeds.len());
    let (threshold, optimum) = match &cfg.env {
        EnvConfig::MountainCar(mc) => {
            let env = MountainCarEnv::new(mc.clone())?;
            let setup = mountain_car_setup(&env, cfg)?;
            let episodes = cfg.eniac.eval_rollouts;
            let eval = |p: &dyn Policy<McState>, r: &mut Rng| evaluate_episodic(&env, p, episodes, r);
            let threshold = cfg.acceptance.threshold;
            for &seed in &cfg.seeds {
                let out = run_seed(&env, &setup, cfg, seed, threshold, &eval)?;
                outputs.push((out.rows, out.epochs, out.summary));
            }
            (threshold, None)
        }
        other => {
            let mdp = other.tabular()?.expect("tabular environment");
            let setup = tabular_setup(&mdp, cfg)?;
            let v_star = optimal_q_dp(&mdp, &env_reward(&mdp), 1e-10)?.v[mdp.start()];
            let threshold = cfg.acceptance.threshold.or(cfg.acceptance.optimum_fraction.map(|f| f * v_star));
            // exact value of the mixture, so tabular curves carry no evaluation noise
            let reward = env_reward(&mdp);
            let eval = |p: &dyn Policy<usize>, _: &mut Rng| {
                exact_value_dp(&mdp, p, &reward, mdp.start(), 1e-9).expect("tolerance is positive")
            };
            for &seed in &cfg.seeds {
                let out = run_seed(&mdp, &setup, cfg, seed, threshold, &eval)?;
                if let Some(p) = &out.policy {
                    let path = out_dir.join(format!("policy_seed{seed}.json"));
                    let json = serde_json::to_string(&markov_policy(&mdp, p.as_ref())?)
                        .map_err(|e| Error::Parse(e.to_string()))?;
                    fs::write(path, json)?;
                }
                outputs.push((out.rows, out.epochs, out.summary));
            }
            (threshold, Some(v_star))
        }
    };
    let metrics_path = out_dir.join("metrics.csv");
    let epochs_path = out_dir.join("epochs.csv");
    write_csv(&metrics_path, &METRICS_HEADER, outputs.iter().flat_map(|o| o.0.iter()))?;
    write_csv(&epochs_path, &EPOCHS_HEADER, outputs.iter().flat_map(|o| o.1.iter()))?;
    let seeds = outputs.into_iter().map(|o| o.2).collect();
    Ok(RunSummary { metrics_path, epochs_path, seeds, threshold, optimum })
}

fn manifest(cfg: &RunConfig) -> String {
    format!("# eniac {}\n{}", env!("CARGO_PKG_VERSION"), cfg.to_toml())
}

pub const METRICS_HEADER: [&str; 5] = ["episode", "env_steps", "mean_return", "epochs_used", "seed"];
pub const EPOCHS_HEADER: [&str; 6] = ["seed", "epoch", "buffer_size", "unknown_fraction", "max_bonus", "rollouts"];

/// Write `header` and then `rows`, so an empty run still has a header.
pub fn write_csv<'a, T: Serialize + 'a>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
