//! Width functions of function-difference classes, threshold bonuses, the
//! known-set predicate and an eluder-dimension estimator.
//!
//! The width at `(s, a)` against a dataset `Z` and radius `eps` is
//! `sup { f(s,a) - f'(s,a) : f, f' in F, |f - f'|_Z <= eps }`. The
//! difference class is closed under negation, so this equals the symmetric
//! `sup |f - f'|` computed here.

mod bonus;
mod dataset;
mod eluder;
mod finite;
mod linear;

use std::sync::Arc;

pub use bonus::{
    bonus, default_beta, known_from_bonus, known_set_query, threshold_bonus, zero_bonus, BonusFn, BonusSpec,
    BonusVariant, KnownStatus,
};
pub use dataset::Dataset;
pub use eluder::{eluder_dimension, eluder_with_oracle, exceeds_radius, is_independent, EluderMode, EluderResult};
pub use finite::{width_finite, FiniteWidth, TabularWidth};
pub use linear::{default_ridge, width_linear, GramAccumulator, LinearWidth};

/// A frozen width function `(s, a) -> w`.
pub type WidthFn<S> = Arc<dyn Fn(&S, usize) -> f64 + Send + Sync>;

/// Incremental width computation against an append-only dataset.
///
/// Queries read the current dataset; [`WidthOracle::snapshot`] freezes it
/// so an epoch can keep using the same width function while the buffer
/// grows.
pub trait WidthOracle<S>: Send + Sync {
    fn epsilon(&self) -> f64;
    /// Number of pairs observed so far.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn push(&mut self, s: &S, a: usize);
    fn width(&self, s: &S, a: usize) -> f64;
    fn snapshot(&self) -> WidthFn<S>;

    fn extend(&mut self, z: &Dataset<S>) {
        for (s, a) in z.iter() {
            self.push(s, a);
        }
    }
}

/// Memoises an oracle over a finite `S x A`: each snapshot evaluates every
/// cell once, so per-step bonus queries during an epoch are table lookups.
#[derive(Debug, Clone)]
pub struct Tabulated<O> {
    inner: O,
    num_states: usize,
    num_actions: usize,
}

impl<O: WidthOracle<usize>> Tabulated<O> {
    pub fn new(inner: O, num_states: usize, num_actions: usize) -> Self {
        Self { inner, num_states, num_actions }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: WidthOracle<usize>> WidthOracle<usize> for Tabulated<O> {
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    fn len(&self) -> usize {
        self.inner.len()
    }

    fn push(&mut self, s: &usize, a: usize) {
        self.inner.push(s, a);
    }

    fn width(&self, s: &usize, a: usize) -> f64 {
        self.inner.width(s, a)
    }

    fn snapshot(&self) -> WidthFn<usize> {
        let na = self.num_actions;
        let f = self.inner.snapshot();
        let table: Vec<f64> = (0..self.num_states * na).map(|c| f(&(c / na), c % na)).collect();
        Arc::new(move |s: &usize, a: usize| table[s * na + a])
    }
}
