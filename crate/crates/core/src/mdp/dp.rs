use super::{Mdp, Policy, RewardFn, TabularMdp};
use crate::{Error, Result};

const MAX_SWEEPS: usize = 1_000_000;

/// Action values of a fixed policy with derived state values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

impl QTable {
    pub fn advantage(&self, s: usize, a: usize) -> f64 {
        self.q[s][a] - self.v[s]
    }
}

/// Fixed point of `T^pi Q = r + gamma P^pi Q` by value iteration, stopping
/// once a sweep moves no entry by more than `tol` (which bounds the
/// Bellman residual of the returned table by `gamma * tol`).
///
/// Mixture policies are rejected: their trajectory-level value is not the
/// value of any single Markov policy. Use [`exact_value_dp`] for those.
pub fn exact_q_dp(mdp: &TabularMdp, policy: &dyn Policy<usize>, reward: &RewardFn<'_, usize>, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if policy.components().is_some() {
        return Err(Error::Unsupported("exact_q_dp needs a Markov policy, not a mixture".into()));
    }
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let gamma = mdp.gamma();
    let pi: Vec<Vec<f64>> = (0..n).map(|s| policy.action_probabilities(&s)).collect();
    let r: Vec<Vec<f64>> = (0..n).map(|s| (0..na).map(|a| reward(&s, a)).collect()).collect();
    let succ: Vec<Vec<Vec<(usize, f64)>>> = (0..n)
        .map(|s| {
            (0..na)
                .map(|a| {
                    mdp.transition(s, a)
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(j, &p)| (j, p))
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut q = vec![vec![0.0; na]; n];
    let mut v = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        for s in 0..n {
            v[s] = pi[s].iter().zip(&q[s]).map(|(p, x)| p * x).sum();
        }
        let mut delta: f64 = 0.0;
        for s in 0..n {
            for a in 0..na {
                let next: f64 = succ[s][a].iter().map(|&(j, p)| p * v[j]).sum();
                let updated = r[s][a] + gamma * next;
                delta = delta.max((updated - q[s][a]).abs());
                q[s][a] = updated;
            }
        }
        if delta <= tol {
            for s in 0..n {
                v[s] = pi[s].iter().zip(&q[s]).map(|(p, x)| p * x).sum();
            }
            return Ok(QTable { q, v });
        }
    }
    Err(Error::NonFinite("value iteration did not converge".into()))
}

/// Value of `policy` at state `s` under `reward`; mixtures evaluate to the
/// mean of their components' values.
pub fn exact_value_dp(
    mdp: &TabularMdp,
    policy: &dyn Policy<usize>,
    reward: &RewardFn<'_, usize>,
    s: usize,
    tol: f64,
) -> Result<f64> {
    match policy.components() {
        Some(parts) => {
            let mut total = 0.0;
            for p in parts {
                total += exact_value_dp(mdp, p.as_ref(), reward, s, tol)?;
            }
            Ok(total / parts.len() as f64)
        }
        None => Ok(exact_q_dp(mdp, policy, reward, tol)?.v[s]),
    }
}

/// Discounted state-action occupancy `d^pi_nu` for an initial state-action
/// distribution `nu[s][a]`, solved by fixed-point iteration of
/// `d = (1 - gamma) nu + gamma (P^pi)^T d`.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &dyn Policy<usize>, nu: &[Vec<f64>], tol: f64) -> Result<Vec<Vec<f64>>> {
    let n = mdp.num_states();
    let na = mdp.num_actions();
    if let Some(parts) = policy.components() {
        let mut acc = vec![vec![0.0; na]; n];
        for p in parts {
            let d = exact_occupancy(mdp, p.as_ref(), nu, tol)?;
            for s in 0..n {
                for a in 0..na {
                    acc[s][a] += d[s][a] / parts.len() as f64;
                }
            }
        }
        return Ok(acc);
    }
    let gamma = mdp.gamma();
    let pi: Vec<Vec<f64>> = (0..n).map(|s| policy.action_probabilities(&s)).collect();
    let mut d: Vec<Vec<f64>> = nu.iter().map(|row| row.iter().map(|x| (1.0 - gamma) * x).collect()).collect();
    for _ in 0..MAX_SWEEPS {
        let mut state_mass = vec![0.0; n];
        for s in 0..n {
            for a in 0..na {
                if d[s][a] != 0.0 {
                    for (j, &p) in mdp.transition(s, a).iter().enumerate() {
                        state_mass[j] += d[s][a] * p;
                    }
                }
            }
        }
        let mut delta: f64 = 0.0;
        let mut next = vec![vec![0.0; na]; n];
        for s in 0..n {
            for a in 0..na {
                next[s][a] = (1.0 - gamma) * nu[s][a] + gamma * state_mass[s] * pi[s][a];
                delta = delta.max((next[s][a] - d[s][a]).abs());
            }
        }
        d = next;
        if delta <= tol {
            return Ok(d);
        }
    }
    Err(Error::NonFinite("occupancy iteration did not converge".into()))
}

/// Optimal action values `Q*` by value iteration.
pub fn optimal_q_dp(mdp: &TabularMdp, reward: &RewardFn<'_, usize>, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let gamma = mdp.gamma();
    let mut q = vec![vec![0.0; na]; n];
    let mut v = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            for a in 0..na {
                let next: f64 = mdp.transition(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                let updated = reward(&s, a) + gamma * next;
                delta = delta.max((updated - q[s][a]).abs());
                q[s][a] = updated;
            }
        }
        for s in 0..n {
            v[s] = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        if delta <= tol {
            return Ok(QTable { q, v });
        }
    }
    Err(Error::NonFinite("value iteration did not converge".into()))
}

/// `d^pi_{s0}`: the occupancy started at the MDP's start state with the
/// first action drawn from the policy. Mixture components each draw their
/// own first action.
pub fn start_occupancy(mdp: &TabularMdp, policy: &dyn Policy<usize>, tol: f64) -> Result<Vec<Vec<f64>>> {
    let n = mdp.num_states();
    let na = mdp.num_actions();
    if let Some(parts) = policy.components() {
        let mut acc = vec![vec![0.0; na]; n];
        for p in parts {
            let d = start_occupancy(mdp, p.as_ref(), tol)?;
            for s in 0..n {
                for a in 0..na {
                    acc[s][a] += d[s][a] / parts.len() as f64;
                }
            }
        }
        return Ok(acc);
    }
    let mut nu = vec![vec![0.0; na]; n];
    nu[mdp.start()] = policy.action_probabilities(&mdp.start());
    exact_occupancy(mdp, policy, &nu, tol)
}
