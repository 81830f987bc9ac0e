//! Policy-cover actor-critic exploration with width-function bonuses.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: environments, geometric-horizon Monte-Carlo estimators, the
//!   discounted-occupancy sampler and an exact dynamic-programming oracle.
//! - [`function_class`]: critic families (tabular, finite, linear, MLP),
//!   least-squares fitting, softmax policies and tangent features.
//! - [`width`]: width functions over function-difference classes, bonuses,
//!   known-set queries and an eluder-dimension estimator.
//! - [`neural_width`]: the paired-network width heuristic for MLP critics.
//! - [`actor_critic`]: the inner policy-update loop (SPI and NPG, sample and
//!   compute variants).
//! - [`driver`]: the outer epoch loop maintaining the policy cover.
//! - [`bench`]: benchmark environments, baselines and the experiment runner.

pub mod actor_critic;
pub mod bench;
pub mod driver;
pub mod error;
pub mod function_class;
pub mod linalg;
pub mod mdp;
pub mod neural_width;
pub mod rng;
pub mod width;

pub use error::{Error, Result};
pub use rng::Rng;
