//! Experiment mode on mountain car: clipped-ratio actor-critic training
//! (Adam, GAE, epsilon-greedy exploration) inside the policy-cover loop,
//! with the paired-network width as the exploration bonus.

use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::envs::{CountingMdp, McState, MountainCarEnv};
use super::{evaluate_episodic, random_mc_pair, write_csv, AlgorithmId, MetricsRow, RunConfig, SeedSummary, METRICS_HEADER};
use crate::driver::Combiner;
use crate::function_class::mlp::{clip_global_norm, Mlp};
use crate::function_class::softmax;
use crate::mdp::{occupancy_from_start, Mdp, Policy};
use crate::neural_width::{normalized_bonus, train_width, NeuralWidth, Point, WidthTrainConfig};
use crate::rng::{sample_categorical, seeded, split, Rng};
use crate::width::BonusFn;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub ratio_clip: f64,
    pub minibatch: usize,
    pub update_epochs: usize,
    pub epsilon_greedy: f64,
    pub max_grad_norm: f64,
    /// Hidden sizes of the actor and critic networks.
    pub hidden: Vec<usize>,
    /// Transitions collected per update.
    pub rollout_steps: usize,
    /// Cover epochs.
    pub epochs: usize,
    /// Updates per cover epoch.
    pub updates_per_epoch: usize,
    /// States added to the width buffer per epoch.
    pub buffer_per_epoch: usize,
    /// Probability an episode starts with a roll-in by a cover policy.
    pub rollin_prob: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub max_env_steps: u64,
    pub stop_threshold: f64,
    pub width_hidden: Vec<usize>,
    pub width: WidthTrainConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            ratio_clip: 0.2,
            minibatch: 160,
            update_epochs: 5,
            epsilon_greedy: 0.05,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            rollout_steps: 2000,
            epochs: 30,
            updates_per_epoch: 50,
            buffer_per_epoch: 1000,
            rollin_prob: 0.5,
            eval_every: 5,
            eval_episodes: 20,
            max_env_steps: 3_000_000,
            stop_threshold: 93.0,
            width_hidden: vec![64, 64],
            width: WidthTrainConfig::default(),
        }
    }
}

impl PpoConfig {
    /// Six hidden layers of 64 units with the matching width settings.
    pub fn six_layer() -> Self {
        Self { hidden: vec![64; 6], width_hidden: vec![64; 6], width: WidthTrainConfig::six_layer(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.ratio_clip > 0.0) {
            return Err(Error::Config("learning rate and ratio clip must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) || !(0.0..1.0).contains(&self.epsilon_greedy) {
            return Err(Error::Config("gae_lambda must lie in [0, 1] and epsilon_greedy in [0, 1)".into()));
        }
        if self.minibatch == 0 || self.update_epochs == 0 || self.rollout_steps == 0 || self.epochs == 0 {
            return Err(Error::Config("batch sizes, epochs and rollout length must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        self.width.validate()
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Descent step along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Softmax policy over the action grid from an actor network.
#[derive(Clone)]
pub struct ActorPolicy {
    net: Mlp,
    params: Arc<Vec<f64>>,
    horizon: usize,
    epsilon: f64,
}

impl ActorPolicy {
    fn probs(&self, s: &McState) -> Vec<f64> {
        softmax(&self.net.forward(&self.params, &MountainCarEnv::encode(s, self.horizon)))
    }

    /// The same network without exploration noise.
    pub fn greedy_free(&self) -> Self {
        Self { epsilon: 0.0, ..self.clone() }
    }
}

impl Policy<McState> for ActorPolicy {
    fn action_probabilities(&self, s: &McState) -> Vec<f64> {
        let p = self.probs(s);
        let u = self.epsilon / p.len() as f64;
        p.into_iter().map(|x| (1.0 - self.epsilon) * x + u).collect()
    }
}

struct Step {
    x: Vec<f64>,
    action: usize,
    logp: f64,
    reward: f64,
    value: f64,
    done: bool,
}

struct Learner {
    actor: Mlp,
    critic: Mlp,
    theta: Vec<f64>,
    phi: Vec<f64>,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl Learner {
    fn new(input: usize, na: usize, cfg: &PpoConfig, rng: &mut Rng) -> Self {
        let actor = Mlp::with_hidden(input, &cfg.hidden, na);
        let critic = Mlp::with_hidden(input, &cfg.hidden, 1);
        let mut theta = actor.init(rng);
        actor.zero_output_layer(&mut theta);
        let phi = critic.init(rng);
        let (na_p, nc_p) = (theta.len(), phi.len());
        Self {
            actor,
            critic,
            theta,
            phi,
            actor_opt: Adam::new(na_p, cfg.learning_rate),
            critic_opt: Adam::new(nc_p, cfg.learning_rate),
        }
    }

    fn policy(&self, horizon: usize, epsilon: f64) -> ActorPolicy {
        ActorPolicy { net: self.actor.clone(), params: Arc::new(self.theta.clone()), horizon, epsilon }
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.critic.forward(&self.phi, x)[0]
    }

    fn update(&mut self, steps: &[Step], gamma: f64, cfg: &PpoConfig, rng: &mut Rng) {
        let n = steps.len();
        let mut adv = vec![0.0; n];
        let mut gae = 0.0;
        for t in (0..n).rev() {
            let next_v = if steps[t].done || t + 1 == n { 0.0 } else { steps[t + 1].value };
            let delta = steps[t].reward + gamma * next_v - steps[t].value;
            gae = if steps[t].done { delta } else { delta + gamma * cfg.gae_lambda * gae };
            adv[t] = gae;
        }
        let returns: Vec<f64> = adv.iter().zip(steps).map(|(a, s)| a + s.value).collect();
        let mean = adv.iter().sum::<f64>() / n as f64;
        let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-8);
        let adv: Vec<f64> = adv.iter().map(|a| (a - mean) / sd).collect();

        let mut order: Vec<usize> = (0..n).collect();
        let mut g_actor = vec![0.0; self.theta.len()];
        let mut g_critic = vec![0.0; self.phi.len()];
        for _ in 0..cfg.update_epochs {
            for i in (1..n).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            for batch in order.chunks(cfg.minibatch) {
                g_actor.iter_mut().for_each(|g| *g = 0.0);
                g_critic.iter_mut().for_each(|g| *g = 0.0);
                let m = batch.len() as f64;
                for &i in batch {
                    let st = &steps[i];
                    let trace = self.actor.forward_trace(&self.theta, &st.x);
                    let p = softmax(trace.output());
                    let logp = p[st.action].max(1e-300).ln();
                    let ratio = (logp - st.logp).exp();
                    let a = adv[i];
                    let clipped = (ratio > 1.0 + cfg.ratio_clip && a > 0.0) || (ratio < 1.0 - cfg.ratio_clip && a < 0.0);
                    // d(-surrogate)/d logits
                    let mut dlogits = vec![0.0; p.len()];
                    if !clipped {
                        for (k, d) in dlogits.iter_mut().enumerate() {
                            let ind = if k == st.action { 1.0 } else { 0.0 };
                            *d -= ratio * a * (ind - p[k]) / m;
                        }
                    }
                    // entropy bonus: d(-c H)/d logit_k = c p_k (log p_k + H)
                    let h: f64 = -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
                    for (k, d) in dlogits.iter_mut().enumerate() {
                        let lp = p[k].max(1e-300).ln();
                        *d += cfg.entropy_coef * p[k] * (lp + h) / m;
                    }
                    self.actor.backward(&self.theta, &trace, &dlogits, &mut g_actor);

                    let vt = self.critic.forward_trace(&self.phi, &st.x);
                    let dv = 2.0 * cfg.value_coef * (vt.output()[0] - returns[i]) / m;
                    self.critic.backward(&self.phi, &vt, &[dv], &mut g_critic);
                }
                clip_global_norm(&mut g_actor, cfg.max_grad_norm);
                clip_global_norm(&mut g_critic, cfg.max_grad_norm);
                self.actor_opt.step(&mut self.theta, &g_actor);
                self.critic_opt.step(&mut self.phi, &g_critic);
            }
        }
    }
}

/// Per-seed experiment-mode run. Rows are appended to `rows`.
pub fn run_ppo_seed(
    env: &MountainCarEnv,
    cfg: &PpoConfig,
    algorithm: AlgorithmId,
    combiner: Combiner,
    seed: u64,
    rows: &mut Vec<MetricsRow>,
) -> Result<SeedSummary> {
    algorithm.check_in_scope()?;
    cfg.validate()?;
    let counting = CountingMdp::new(env);
    let horizon = env.config().horizon;
    let na = env.num_actions();
    let gamma = env.gamma();
    let mut rng = seeded(seed);
    let mut erng = seeded(seed ^ super::EVAL_SALT);
    let mut learner = Learner::new(3, na, cfg, &mut rng);
    let use_cover = algorithm != AlgorithmId::VanillaPg;
    let use_bonus = algorithm == AlgorithmId::Eniac;
    let mut cover: Vec<Arc<dyn Policy<McState>>> =
        vec![Arc::new(crate::mdp::UniformPolicy { num_actions: na })];
    let mut buffer: Vec<(McState, usize)> = Vec::new();
    let encoder: crate::function_class::EncoderFn<McState> = Arc::new(move |s: &McState| MountainCarEnv::encode(s, horizon));
    let width_net = Mlp::with_hidden(3, &cfg.width_hidden, na);
    let mut updates = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut last = f64::NAN;
    let mut stopped = false;

    'epochs: for epoch in 1..=cfg.epochs {
        let bonus: BonusFn<McState> = if use_bonus {
            let newest = cover.last().expect("cover nonempty").clone();
            for _ in 0..cfg.buffer_per_epoch {
                buffer.push(occupancy_from_start(&counting, newest.as_ref(), &mut rng));
            }
            let points: Vec<Point> = buffer.iter().map(|(s, a)| (encoder(s), *a)).collect();
            let queries: Vec<(McState, usize)> =
                (0..cfg.width.query_set_size).map(|_| random_mc_pair(env, &mut rng)).collect();
            let encoded: Vec<Point> = queries.iter().map(|(s, a)| (encoder(s), *a)).collect();
            let mut wrng = split(&mut rng);
            let pair = train_width(&width_net, &points, &encoded, &cfg.width, &mut wrng, &mut |_| {})
                .map_err(|e| Error::Epoch { epoch, source: Box::new(e) })?;
            normalized_bonus(NeuralWidth::new(pair, encoder.clone()).width_fn(), &queries)
        } else {
            Arc::new(|_: &McState, _| 0.0)
        };
        let shaped = |s: &McState, a: usize| {
            let r = env.reward(s, a);
            match combiner {
                Combiner::Max => r.max(bonus(s, a)),
                Combiner::Sum => r + bonus(s, a),
            }
        };

        for _ in 0..cfg.updates_per_epoch {
            let mut steps: Vec<Step> = Vec::with_capacity(cfg.rollout_steps + horizon);
            while steps.len() < cfg.rollout_steps {
                let mut r = split(&mut rng);
                counting.on_rollout();
                let mut s = counting.initial_state(&mut r);
                if use_cover && r.gen::<f64>() < cfg.rollin_prob {
                    let rollin = cover[r.gen_range(0..cover.len())].clone();
                    let k = r.gen_range(0..horizon);
                    let pi = crate::mdp::resolve(rollin.as_ref(), &mut r);
                    for _ in 0..k {
                        if s.done {
                            break;
                        }
                        let a = pi.act(&s, &mut r);
                        s = counting.step(&s, a, &mut r);
                    }
                    if s.done {
                        continue;
                    }
                }
                while !s.done {
                    let x = MountainCarEnv::encode(&s, horizon);
                    let p = softmax(&learner.actor.forward(&learner.theta, &x));
                    let a = if r.gen::<f64>() < cfg.epsilon_greedy { r.gen_range(0..na) } else { sample_categorical(&p, &mut r) };
                    let value = learner.value(&x);
                    let reward = shaped(&s, a);
                    let next = counting.step(&s, a, &mut r);
                    steps.push(Step { x, action: a, logp: p[a].max(1e-300).ln(), reward, value, done: next.done });
                    s = next;
                }
            }
            learner.update(&steps, gamma, cfg, &mut rng);
            updates += 1;

            if updates % cfg.eval_every.max(1) == 0 {
                let policy = learner.policy(horizon, 0.0);
                last = evaluate_episodic(env, &policy, cfg.eval_episodes, &mut erng);
                best = best.max(last);
                rows.push(MetricsRow {
                    episode: counting.rollouts(),
                    env_steps: counting.steps(),
                    mean_return: last,
                    epochs_used: epoch,
                    seed,
                });
                log::info!("seed {seed} epoch {epoch} update {updates}: return {last:.2} at {} steps", counting.steps());
                if last > cfg.stop_threshold {
                    stopped = true;
                    break 'epochs;
                }
            }
            if counting.steps() >= cfg.max_env_steps {
                break 'epochs;
            }
        }
        cover.push(Arc::new(learner.policy(horizon, cfg.epsilon_greedy)));
    }

    Ok(SeedSummary {
        seed,
        final_value: last,
        best_value: best,
        succeeded: stopped,
        stopped_early: stopped,
        episodes: counting.rollouts(),
        env_steps: counting.steps(),
    })
}

/// Experiment mode for every seed of `run`; only mountain car is supported.
pub fn run_ppo_experiment(run: &RunConfig, out_dir: &Path) -> Result<Vec<SeedSummary>> {
    let super::EnvConfig::MountainCar(mc) = &run.env else {
        return Err(Error::Config("experiment mode runs on mountain car only".into()));
    };
    let env = MountainCarEnv::new(mc.clone())?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("manifest.toml"), format!("# experiment mode\n{}", run.to_toml()))?;
    let mut rows = Vec::new();
    let mut out = Vec::new();
    for &seed in &run.seeds {
        out.push(run_ppo_seed(&env, &run.experiment, run.algorithm, run.eniac.combiner, seed, &mut rows)?);
    }
    write_csv(&out_dir.join("metrics.csv"), &METRICS_HEADER, rows.iter())?;
    Ok(out)
}
