use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::WidthFn;
use crate::{Error, Result};

/// Bonus as a function of a state-action pair.
pub type BonusFn<S> = Arc<dyn Fn(&S, usize) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BonusVariant {
    /// `1{w >= beta} / (1 - gamma)`.
    Sample,
    /// `1{w >= beta} |A| / ((1 - gamma) alpha)`.
    Compute { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonusSpec {
    pub beta: f64,
    pub variant: BonusVariant,
    pub gamma: f64,
    pub num_actions: usize,
}

impl BonusSpec {
    pub fn sample(beta: f64, gamma: f64, num_actions: usize) -> Result<Self> {
        Self { beta, variant: BonusVariant::Sample, gamma, num_actions }.validated()
    }

    pub fn compute(beta: f64, gamma: f64, num_actions: usize, alpha: f64) -> Result<Self> {
        Self { beta, variant: BonusVariant::Compute { alpha }, gamma, num_actions }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("bonus threshold beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.num_actions == 0 {
            return Err(Error::Config("bonus needs at least one action".into()));
        }
        if let BonusVariant::Compute { alpha } = self.variant {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!("mix alpha must lie in (0, 1), got {alpha}")));
            }
        }
        Ok(self)
    }

    /// The bonus paid where the width reaches the threshold.
    pub fn magnitude(&self) -> f64 {
        let base = 1.0 / (1.0 - self.gamma);
        match self.variant {
            BonusVariant::Sample => base,
            BonusVariant::Compute { alpha } => base * self.num_actions as f64 / alpha,
        }
    }
}

pub fn bonus(width: f64, spec: &BonusSpec) -> f64 {
    if width >= spec.beta {
        spec.magnitude()
    } else {
        0.0
    }
}

/// Threshold bonus built on a frozen width function.
pub fn threshold_bonus<S: 'static>(width: WidthFn<S>, spec: BonusSpec) -> BonusFn<S> {
    Arc::new(move |s: &S, a: usize| bonus(width(s, a), &spec))
}

pub fn zero_bonus<S: 'static>() -> BonusFn<S> {
    Arc::new(|_: &S, _| 0.0)
}

/// `beta = eps (1 - gamma) / 2` for a target accuracy `eps`.
pub fn default_beta(target_accuracy: f64, gamma: f64) -> f64 {
    target_accuracy * (1.0 - gamma) / 2.0
}

/// Membership of a state in the known set `{(s, a) : b(s, a) = 0}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KnownStatus {
    FullyKnown,
    /// Actions with positive bonus, in increasing order.
    Unknown(Vec<usize>),
}

impl KnownStatus {
    pub fn is_known(&self) -> bool {
        matches!(self, KnownStatus::FullyKnown)
    }
}

/// Classify `s` by thresholding widths at `beta`, consistent with [`bonus`].
pub fn known_set_query<S>(width: &dyn Fn(&S, usize) -> f64, beta: f64, num_actions: usize, s: &S) -> KnownStatus {
    let unknown: Vec<usize> = (0..num_actions).filter(|&a| width(s, a) >= beta).collect();
    if unknown.is_empty() {
        KnownStatus::FullyKnown
    } else {
        KnownStatus::Unknown(unknown)
    }
}

/// Classify `s` directly from a bonus function.
pub fn known_from_bonus<S>(bonus: &dyn Fn(&S, usize) -> f64, num_actions: usize, s: &S) -> KnownStatus {
    let unknown: Vec<usize> = (0..num_actions).filter(|&a| bonus(s, a) != 0.0).collect();
    if unknown.is_empty() {
        KnownStatus::FullyKnown
    } else {
        KnownStatus::Unknown(unknown)
    }
}
