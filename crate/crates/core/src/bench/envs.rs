use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::mdp::{Mdp, TabularMdp};
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

/// Chain of `h` cells with one correct action per cell. The last cell is
/// absorbing and pays 1 per step; any wrong action pays `delta` once and
/// drops into an absorbing zero-reward sink (state `h`).
pub fn make_combination_lock(h: usize, delta: f64, gamma: f64, num_actions: usize, lock_seed: u64) -> Result<TabularMdp> {
    if h < 2 {
        return Err(Error::Config(format!("combination lock needs at least 2 cells, got {h}")));
    }
    if !(0.0..=0.1).contains(&delta) {
        return Err(Error::Config(format!("decoy reward must lie in [0, 0.1], got {delta}")));
    }
    if num_actions < 2 {
        return Err(Error::Config("combination lock needs at least 2 actions".into()));
    }
    let correct = lock_combination(h, num_actions, lock_seed);
    let sink = h;
    let mut next = vec![vec![sink; num_actions]; h + 1];
    let mut rewards = vec![vec![0.0; num_actions]; h + 1];
    for i in 0..h - 1 {
        for a in 0..num_actions {
            if a == correct[i] {
                next[i][a] = i + 1;
            } else {
                rewards[i][a] = delta;
            }
        }
    }
    next[h - 1] = vec![h - 1; num_actions];
    rewards[h - 1] = vec![1.0; num_actions];
    TabularMdp::deterministic(&next, rewards, gamma, 0)
}

/// The correct action of each non-final cell.
pub fn lock_combination(h: usize, num_actions: usize, lock_seed: u64) -> Vec<usize> {
    let mut rng = seeded(lock_seed);
    (0..h.saturating_sub(1)).map(|_| rng.gen_range(0..num_actions)).collect()
}

/// `w x h` grid with moves up, down, left, right. With probability `slip`
/// the move is replaced by a uniformly random one. The far corner is
/// absorbing and pays 1 per step; everything else pays 0.
pub fn make_gridworld(w: usize, h: usize, slip: f64, gamma: f64) -> Result<TabularMdp> {
    if w == 0 || h == 0 || w * h < 2 {
        return Err(Error::Config("gridworld needs at least two cells".into()));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(Error::Config(format!("slip probability must lie in [0, 1], got {slip}")));
    }
    let n = w * h;
    let goal = n - 1;
    let moves: [(i64, i64); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];
    let target = |s: usize, m: usize| {
        let (x, y) = ((s % w) as i64, (s / w) as i64);
        let (nx, ny) = (x + moves[m].0, y + moves[m].1);
        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
            s
        } else {
            ny as usize * w + nx as usize
        }
    };
    let mut transitions = vec![vec![vec![0.0; n]; 4]; n];
    let mut rewards = vec![vec![0.0; 4]; n];
    for s in 0..n {
        for a in 0..4 {
            let row = &mut transitions[s][a];
            if s == goal {
                row[goal] = 1.0;
                continue;
            }
            row[target(s, a)] += 1.0 - slip;
            for m in 0..4 {
                row[target(s, m)] += slip / 4.0;
            }
        }
    }
    rewards[goal] = vec![1.0; 4];
    TabularMdp::new(transitions, rewards, gamma, 0)
}

pub const MC_MIN_POSITION: f64 = -1.2;
pub const MC_MAX_POSITION: f64 = 0.6;
pub const MC_MAX_SPEED: f64 = 0.07;
pub const MC_GOAL_POSITION: f64 = 0.45;
pub const MC_POWER: f64 = 0.0015;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McState {
    pub position: f64,
    pub velocity: f64,
    /// Steps taken in the current episode.
    pub t: usize,
    /// Goal reached or horizon exhausted; the state is absorbing.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MountainCarConfig {
    pub action_grid: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub goal_reward: f64,
    /// Per-step cost `action_cost * a^2`.
    pub action_cost: f64,
}

impl Default for MountainCarConfig {
    fn default() -> Self {
        Self { action_grid: 7, horizon: 100, gamma: 0.99, goal_reward: 100.0, action_cost: 0.1 }
    }
}

/// Continuous mountain car with the force discretised to an action grid on
/// `[-1, 1]`. Episodes end at the goal or after `horizon` steps by moving
/// to an absorbing zero-reward state.
#[derive(Debug, Clone)]
pub struct MountainCarEnv {
    config: MountainCarConfig,
    forces: Vec<f64>,
}

impl MountainCarEnv {
    pub fn new(config: MountainCarConfig) -> Result<Self> {
        if config.action_grid < 2 {
            return Err(Error::Config(format!("mountain car needs an action grid of at least 2, got {}", config.action_grid)));
        }
        if config.horizon == 0 {
            return Err(Error::Config("mountain car horizon must be positive".into()));
        }
        if !(config.gamma > 0.0 && config.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", config.gamma)));
        }
        let n = config.action_grid;
        let forces = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
        Ok(Self { config, forces })
    }

    pub fn config(&self) -> &MountainCarConfig {
        &self.config
    }

    pub fn force(&self, a: usize) -> f64 {
        self.forces[a]
    }

    /// Action index closest to zero force.
    pub fn idle_action(&self) -> usize {
        (0..self.forces.len()).min_by(|&i, &j| self.forces[i].abs().total_cmp(&self.forces[j].abs())).unwrap_or(0)
    }

    /// One step of the physics, ignoring episode bookkeeping.
    pub fn physics(position: f64, velocity: f64, force: f64) -> (f64, f64) {
        let force = force.clamp(-1.0, 1.0);
        let mut v = velocity + force * MC_POWER - 0.0025 * (3.0 * position).cos();
        v = v.clamp(-MC_MAX_SPEED, MC_MAX_SPEED);
        let mut p = position + v;
        p = p.clamp(MC_MIN_POSITION, MC_MAX_POSITION);
        if p == MC_MIN_POSITION && v < 0.0 {
            v = 0.0;
        }
        (p, v)
    }

    pub fn reaches_goal(&self, s: &McState, a: usize) -> bool {
        !s.done && Self::physics(s.position, s.velocity, self.forces[a]).0 >= MC_GOAL_POSITION
    }

    /// Position and velocity scaled to roughly `[-1, 1]`, plus the time
    /// fraction.
    pub fn encode(s: &McState, horizon: usize) -> Vec<f64> {
        let p = 2.0 * (s.position - MC_MIN_POSITION) / (MC_MAX_POSITION - MC_MIN_POSITION) - 1.0;
        let v = s.velocity / MC_MAX_SPEED;
        let t = if s.done { 1.0 } else { s.t as f64 / horizon as f64 };
        vec![p, v, t]
    }
}

impl Mdp for MountainCarEnv {
    type State = McState;

    fn num_actions(&self) -> usize {
        self.forces.len()
    }

    fn gamma(&self) -> f64 {
        self.config.gamma
    }

    fn initial_state(&self, rng: &mut Rng) -> McState {
        McState { position: rng.gen_range(-0.6..-0.4), velocity: 0.0, t: 0, done: false }
    }

    fn step(&self, s: &McState, a: usize, _rng: &mut Rng) -> McState {
        if s.done {
            return *s;
        }
        let (position, velocity) = Self::physics(s.position, s.velocity, self.forces[a]);
        let t = s.t + 1;
        let done = position >= MC_GOAL_POSITION || t >= self.config.horizon;
        McState { position, velocity, t, done }
    }

    fn reward(&self, s: &McState, a: usize) -> f64 {
        if s.done {
            return 0.0;
        }
        let f = self.forces[a];
        let goal = if self.reaches_goal(s, a) { self.config.goal_reward } else { 0.0 };
        goal - self.config.action_cost * f * f
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (-self.config.action_cost, self.config.goal_reward)
    }
}

/// Episodic undiscounted return of one mountain-car episode.
pub fn episode_return(env: &MountainCarEnv, policy: &dyn crate::mdp::Policy<McState>, rng: &mut Rng) -> (f64, usize) {
    let pi = crate::mdp::resolve(policy, rng);
    let mut s = env.initial_state(rng);
    let mut total = 0.0;
    let mut steps = 0;
    while !s.done {
        let a = pi.act(&s, rng);
        total += env.reward(&s, a);
        s = env.step(&s, a, rng);
        steps += 1;
    }
    (total, steps)
}

/// Wraps an MDP and counts trajectories and transitions.
pub struct CountingMdp<M> {
    inner: M,
    rollouts: AtomicU64,
    steps: AtomicU64,
}

impl<M: Mdp> CountingMdp<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, rollouts: AtomicU64::new(0), steps: AtomicU64::new(0) }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn rollouts(&self) -> u64 {
        self.rollouts.load(Ordering::Relaxed)
    }

    pub fn steps(&self) -> u64 {
        self.steps.load(Ordering::Relaxed)
    }
}

impl<M: Mdp> Mdp for CountingMdp<M> {
    type State = M::State;

    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    fn initial_state(&self, rng: &mut Rng) -> M::State {
        self.inner.initial_state(rng)
    }

    fn step(&self, s: &M::State, a: usize, rng: &mut Rng) -> M::State {
        self.steps.fetch_add(1, Ordering::Relaxed);
        self.inner.step(s, a, rng)
    }

    fn reward(&self, s: &M::State, a: usize) -> f64 {
        self.inner.reward(s, a)
    }

    fn reward_bounds(&self) -> (f64, f64) {
        self.inner.reward_bounds()
    }

    fn on_rollout(&self) {
        self.rollouts.fetch_add(1, Ordering::Relaxed);
        self.inner.on_rollout();
    }
}
