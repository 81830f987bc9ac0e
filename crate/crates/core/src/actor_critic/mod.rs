//! The inner policy-update loop: collect bonus-offset critic targets from
//! the cover distribution, fit a critic, take a multiplicative-weights
//! (SPI) or natural-gradient (NPG) actor step, and return the uniform
//! mixture of the iterates.
//!
//! Policies come in two flavours. SAMPLE gates the update with the known
//! set: at states with an unknown action the policy stays at its initial
//! law (uniform over the unknown actions). COMPUTE updates everywhere and
//! mixes in `alpha` of uniform exploration.

mod policy;
mod update;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use policy::{InitPolicy, KnownSet, NpgPolicy, SpiPolicy};
pub use update::{
    collect_critic_samples, default_npg_eta, default_spi_eta, npg_actor_step, policy_update, spi_actor_step,
    CoverSampler, IterationDiagnostics, Learner, PolicyUpdateConfig, UpdateOutcome,
};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Spi,
    Npg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Mode {
    Sample,
    Compute { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateVariant {
    pub algorithm: Algorithm,
    #[serde(flatten)]
    pub mode: Mode,
}

impl UpdateVariant {
    pub const SPI_SAMPLE: Self = Self { algorithm: Algorithm::Spi, mode: Mode::Sample };
    pub const NPG_SAMPLE: Self = Self { algorithm: Algorithm::Npg, mode: Mode::Sample };

    pub fn spi_compute(alpha: f64) -> Self {
        Self { algorithm: Algorithm::Spi, mode: Mode::Compute { alpha } }
    }

    pub fn npg_compute(alpha: f64) -> Self {
        Self { algorithm: Algorithm::Npg, mode: Mode::Compute { alpha } }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.mode {
            Mode::Sample => None,
            Mode::Compute { alpha } => Some(alpha),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Mode::Compute { alpha } = self.mode {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!("mix alpha must lie in (0, 1), got {alpha}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for UpdateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let alg = match self.algorithm {
            Algorithm::Spi => "SPI",
            Algorithm::Npg => "NPG",
        };
        match self.mode {
            Mode::Sample => write!(f, "{alg}-SAMPLE"),
            Mode::Compute { alpha } => write!(f, "{alg}-COMPUTE(alpha={alpha})"),
        }
    }
}

/// Per-state rule selecting the initial policy for one epoch.
pub fn init_policy<S: 'static>(variant: &UpdateVariant, known: Option<KnownSet<S>>, num_actions: usize) -> Result<InitPolicy<S>> {
    variant.validate()?;
    match variant.mode {
        Mode::Sample => {
            let known = known.ok_or_else(|| Error::Config("SAMPLE variants need a known set".into()))?;
            Ok(InitPolicy::new(Some(known), num_actions))
        }
        Mode::Compute { .. } => Ok(InitPolicy::new(None, num_actions)),
    }
}

pub(crate) type Shared<S> = Arc<dyn crate::mdp::Policy<S>>;
