use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Mdp;
use crate::rng::Rng;
use crate::{Error, Result};

const ROW_TOL: f64 = 1e-9;

/// Finite MDP with an explicit transition tensor `P[s][a][s']`.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    initial_state: usize,
    // per (s, a): nonzero successors with cumulative probabilities
    successors: Vec<Vec<Vec<(usize, f64)>>>,
}

/// On-disk form of a [`TabularMdp`] (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdpFile {
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub initial_state: usize,
    /// `rewards[s][a]`
    pub rewards: Vec<Vec<f64>>,
    /// `transitions[s][a][s']`
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl TabularMdp {
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
        initial_state: usize,
    ) -> Result<Self> {
        let num_states = transitions.len();
        if num_states == 0 {
            return Err(Error::InvalidMdp("no states".into()));
        }
        let num_actions = transitions[0].len();
        if num_actions == 0 {
            return Err(Error::InvalidMdp("no actions".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside (0, 1)")));
        }
        if initial_state >= num_states {
            return Err(Error::InvalidMdp(format!("initial state {initial_state} out of range")));
        }
        if rewards.len() != num_states {
            return Err(Error::InvalidMdp("reward table has wrong number of states".into()));
        }
        let mut successors = Vec::with_capacity(num_states);
        for s in 0..num_states {
            if transitions[s].len() != num_actions || rewards[s].len() != num_actions {
                return Err(Error::InvalidMdp(format!("state {s} does not list {num_actions} actions")));
            }
            let mut per_action = Vec::with_capacity(num_actions);
            for a in 0..num_actions {
                let r = rewards[s][a];
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidMdp(format!("reward r[{s}][{a}] = {r} outside [0, 1]")));
                }
                let row = &transitions[s][a];
                if row.len() != num_states {
                    return Err(Error::InvalidMdp(format!("row P[{s}][{a}] has length {}", row.len())));
                }
                if row.iter().any(|&p| !(p >= 0.0)) {
                    return Err(Error::InvalidMdp(format!("row P[{s}][{a}] has a negative entry")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_TOL {
                    return Err(Error::InvalidMdp(format!("row P[{s}][{a}] sums to {total}")));
                }
                let mut acc = 0.0;
                let succ = row
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(j, &p)| {
                        acc += p;
                        (j, acc)
                    })
                    .collect();
                per_action.push(succ);
            }
            successors.push(per_action);
        }
        Ok(Self { num_states, num_actions, transitions, rewards, gamma, initial_state, successors })
    }

    /// Deterministic MDP from a successor table `next[s][a]`.
    pub fn deterministic(next: &[Vec<usize>], rewards: Vec<Vec<f64>>, gamma: f64, initial_state: usize) -> Result<Self> {
        let n = next.len();
        let transitions = next
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&t| {
                        let mut p = vec![0.0; n];
                        if t < n {
                            p[t] = 1.0;
                        }
                        p
                    })
                    .collect()
            })
            .collect();
        Self::new(transitions, rewards, gamma, initial_state)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        &self.transitions[s][a]
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn start(&self) -> usize {
        self.initial_state
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.transitions.clone(), self.rewards.clone(), gamma, self.initial_state)
    }

    pub fn to_file(&self) -> TabularMdpFile {
        TabularMdpFile {
            states: self.num_states,
            actions: self.num_actions,
            gamma: self.gamma,
            initial_state: self.initial_state,
            rewards: self.rewards.clone(),
            transitions: self.transitions.clone(),
        }
    }

    pub fn from_file(file: TabularMdpFile) -> Result<Self> {
        if file.transitions.len() != file.states {
            return Err(Error::InvalidMdp(format!(
                "declared {} states but {} transition blocks",
                file.states,
                file.transitions.len()
            )));
        }
        if file.transitions.first().map_or(0, |r| r.len()) != file.actions {
            return Err(Error::InvalidMdp(format!("declared {} actions", file.actions)));
        }
        Self::new(file.transitions, file.rewards, file.gamma, file.initial_state)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("tabular MDP serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TabularMdpFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

impl Mdp for TabularMdp {
    type State = usize;

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn initial_state(&self, _rng: &mut Rng) -> usize {
        self.initial_state
    }

    fn step(&self, s: &usize, a: usize, rng: &mut Rng) -> usize {
        let succ = &self.successors[*s][a];
        if succ.len() == 1 {
            return succ[0].0;
        }
        let u: f64 = rng.gen::<f64>() * succ.last().map_or(1.0, |x| x.1);
        succ.iter().find(|&&(_, c)| u < c).unwrap_or(succ.last().expect("nonempty row")).0
    }

    fn reward(&self, s: &usize, a: usize) -> f64 {
        self.rewards[*s][a]
    }
}
