use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;

use super::{resolve, Mdp, Policy, RewardFn};
use crate::rng::Rng;

static TRUNCATED: AtomicU64 = AtomicU64::new(0);

/// Number of rollouts cut off by the step cap since process start.
pub fn truncated_rollouts() -> u64 {
    TRUNCATED.load(Ordering::Relaxed)
}

/// Outcome of one geometric-horizon trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    /// Undiscounted reward sum over the visited pairs.
    pub total: f64,
    /// Steps taken after the starting pair (the stopping index `t`).
    pub steps: usize,
    pub truncated: bool,
}

fn step_cap(gamma: f64) -> usize {
    (50.0 / (1.0 - gamma)).ceil() as usize
}

/// Walk from `(s, a)` under an already-resolved policy, flipping a
/// Bernoulli(1 - gamma) coin after each visited pair. Calls `visit` on every
/// pair and returns the stopping pair.
fn walk<M: Mdp>(
    mdp: &M,
    policy: &dyn Policy<M::State>,
    mut s: M::State,
    mut a: usize,
    rng: &mut Rng,
    mut visit: impl FnMut(&M::State, usize),
) -> (M::State, usize, usize, bool) {
    let gamma = mdp.gamma();
    let cap = step_cap(gamma);
    let mut t = 0;
    loop {
        visit(&s, a);
        if rng.gen::<f64>() < 1.0 - gamma {
            return (s, a, t, false);
        }
        if t >= cap {
            TRUNCATED.fetch_add(1, Ordering::Relaxed);
            return (s, a, t, true);
        }
        s = mdp.step(&s, a, rng);
        a = policy.act(&s, rng);
        t += 1;
    }
}

/// Reward sum of one trajectory started at `(s, a)`; the policy is resolved
/// (mixture component drawn) once at the start.
pub fn rollout_from<M: Mdp>(
    mdp: &M,
    policy: &dyn Policy<M::State>,
    s: &M::State,
    a: usize,
    reward: &RewardFn<'_, M::State>,
    rng: &mut Rng,
) -> Rollout {
    mdp.on_rollout();
    let pi = resolve(policy, rng);
    let mut total = 0.0;
    let (_, _, steps, truncated) = walk(mdp, pi, s.clone(), a, rng, |s, a| total += reward(s, a));
    Rollout { total, steps, truncated }
}

/// Unbiased estimate of `Q^pi(s, a; reward)`.
pub fn estimate_q<M: Mdp>(
    mdp: &M,
    policy: &dyn Policy<M::State>,
    s: &M::State,
    a: usize,
    reward: &RewardFn<'_, M::State>,
    rng: &mut Rng,
) -> f64 {
    rollout_from(mdp, policy, s, a, reward, rng).total
}

/// Unbiased estimate of `V^pi(s; reward)`; the first action is drawn from
/// the (resolved) policy.
pub fn estimate_v<M: Mdp>(
    mdp: &M,
    policy: &dyn Policy<M::State>,
    s: &M::State,
    reward: &RewardFn<'_, M::State>,
    rng: &mut Rng,
) -> f64 {
    mdp.on_rollout();
    let pi = resolve(policy, rng);
    let a = pi.act(s, rng);
    let mut total = 0.0;
    walk(mdp, pi, s.clone(), a, rng, |s, a| total += reward(s, a));
    total
}

/// One Q draw minus one independent V draw.
pub fn estimate_advantage<M: Mdp>(
    mdp: &M,
    policy: &dyn Policy<M::State>,
    s: &M::State,
    a: usize,
    reward: &RewardFn<'_, M::State>,
    rng: &mut Rng,
) -> f64 {
    let q = estimate_q(mdp, policy, s, a, reward, rng);
    let v = estimate_v(mdp, policy, s, reward, rng);
    q - v
}

/// Draw from `d^pi_nu`: sample `(s0, a0)` from `init`, run the policy and
/// return the pair at the geometric stopping time, with its step index.
pub fn sample_occupancy<M: Mdp>(
    mdp: &M,
    policy: &dyn Policy<M::State>,
    init: &mut dyn FnMut(&mut Rng) -> (M::State, usize),
    rng: &mut Rng,
) -> (M::State, usize, usize) {
    mdp.on_rollout();
    let pi = resolve(policy, rng);
    let (s0, a0) = init(rng);
    let (s, a, t, _) = walk(mdp, pi, s0, a0, rng, |_, _| {});
    (s, a, t)
}

/// Draw from `d^pi_{s0}` with `s0` from the MDP's initial-state law and
/// `a0 ~ pi(s0)` under the same resolved component.
pub fn occupancy_from_start<M: Mdp>(mdp: &M, policy: &dyn Policy<M::State>, rng: &mut Rng) -> (M::State, usize) {
    mdp.on_rollout();
    let pi = resolve(policy, rng);
    let s0 = mdp.initial_state(rng);
    let a0 = pi.act(&s0, rng);
    let (s, a, _, _) = walk(mdp, pi, s0, a0, rng, |_, _| {});
    (s, a)
}
