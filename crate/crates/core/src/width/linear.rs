use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use super::{Dataset, WidthFn, WidthOracle};
use crate::function_class::{FeatureFn, LinearClass, TangentFeatureMap};
use crate::linalg::{norm, PsdEigen, RANK_TOL};

const RECOMPUTE_EVERY: usize = 512;

/// `G = sum_{x in Z} phi(x) phi(x)^T`, updated by rank-one additions and
/// rebuilt from the stored rows every 512 appends to bound drift.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    dim: usize,
    gram: Vec<f64>,
    rows: Vec<Vec<f64>>,
    since_rebuild: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { dim, gram: vec![0.0; dim * dim], rows: Vec::new(), since_rebuild: 0 }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, phi: Vec<f64>) {
        assert_eq!(phi.len(), self.dim, "feature dimension");
        add_outer(&mut self.gram, &phi);
        self.rows.push(phi);
        self.since_rebuild += 1;
        if self.since_rebuild >= RECOMPUTE_EVERY {
            self.rebuild();
        }
    }

    pub fn rebuild(&mut self) {
        self.gram.iter_mut().for_each(|g| *g = 0.0);
        for r in &self.rows {
            add_outer(&mut self.gram, r);
        }
        self.since_rebuild = 0;
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.gram)
    }
}

fn add_outer(gram: &mut [f64], phi: &[f64]) {
    let d = phi.len();
    for i in 0..d {
        if phi[i] == 0.0 {
            continue;
        }
        for j in 0..d {
            gram[i * d + j] += phi[i] * phi[j];
        }
    }
}

/// Frozen solver for the width bound at one Gram matrix.
#[derive(Debug, Clone)]
struct Solver {
    eig: PsdEigen,
    lambda: f64,
    bound: f64,
    epsilon: f64,
}

impl Solver {
    fn new(gram: DMatrix<f64>, lambda: f64, bound: f64, epsilon: f64) -> Self {
        Self { eig: PsdEigen::new(gram), lambda, bound, epsilon }
    }

    fn width(&self, phi: &[f64]) -> f64 {
        let cap = 2.0 * self.bound * norm(phi);
        let c = self.eig.coordinates(phi);
        if self.lambda > 0.0 {
            return cap.min(self.ridge_bound(&c, self.lambda));
        }
        // Every ridge lambda' > 0 gives a valid bound that only shrinks as G
        // grows, so their infimum is both certified and monotone in the data.
        // Its lambda' -> 0 end is the pseudo-inverse value when the query
        // lies in the span of G (or eps = 0).
        let tol = RANK_TOL * self.eig.max_value().max(1.0);
        let mut q = 0.0;
        let mut off = 0.0;
        for (ck, &v) in c.iter().zip(&self.eig.values) {
            if v > tol {
                q += ck * ck / v;
            } else {
                off += ck * ck;
            }
        }
        let at_zero = if off > 0.0 && self.epsilon > 0.0 {
            f64::INFINITY
        } else {
            self.epsilon * q.sqrt() + 2.0 * self.bound * off.sqrt()
        };
        cap.min(at_zero).min(self.min_ridge_bound(&c))
    }

    fn ridge_bound(&self, c: &[f64], lambda: f64) -> f64 {
        let q: f64 = c.iter().zip(&self.eig.values).map(|(ck, v)| ck * ck / (v + lambda)).sum();
        let scale = (self.epsilon.powi(2) + 4.0 * self.bound.powi(2) * lambda).sqrt();
        scale * q.sqrt()
    }

    /// Minimum of the ridge bound over `lambda'`: a log-spaced scan, then
    /// golden-section refinement around the best grid point.
    fn min_ridge_bound(&self, c: &[f64]) -> f64 {
        const PER_DECADE: f64 = 20.0;
        let natural = self.epsilon.powi(2) / (4.0 * self.bound.powi(2));
        let top = self.eig.max_value().max(natural).max(f64::MIN_POSITIVE).log10() + 8.0;
        let bottom = top - 24.0;
        let steps = ((top - bottom) * PER_DECADE) as usize;
        let h = |x: f64| self.ridge_bound(c, 10f64.powf(x));
        let (mut best_i, mut best) = (0, f64::INFINITY);
        for i in 0..=steps {
            let v = h(bottom + i as f64 / PER_DECADE);
            if v < best {
                best = v;
                best_i = i;
            }
        }
        let mut lo = bottom + best_i.saturating_sub(1) as f64 / PER_DECADE;
        let mut hi = bottom + (best_i + 1).min(steps) as f64 / PER_DECADE;
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        let (mut f1, mut f2) = (h(x1), h(x2));
        for _ in 0..60 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = h(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = h(x2);
            }
        }
        best.min(f1).min(f2)
    }
}

/// Certified upper bound on the width of `{(u - u') . phi : |u|, |u'| <= B}`
/// under `|(u - u') . phi|_Z <= eps`:
///
/// `min(2B|phi|, sqrt(eps^2 + 4B^2 lambda) sqrt(phi^T (G + lambda I)^{-1} phi))`.
///
/// With `lambda = 0` the bound is the infimum of that expression over all
/// ridges, which keeps it valid and monotone when `G` is singular; for
/// nonsingular `G` with the norm cap inactive it is the exact width.
pub struct LinearWidth<S> {
    features: FeatureFn<S>,
    bound: f64,
    epsilon: f64,
    lambda: f64,
    acc: GramAccumulator,
    solver: OnceLock<Arc<Solver>>,
}

impl<S> Clone for LinearWidth<S> {
    fn clone(&self) -> Self {
        Self {
            features: self.features.clone(),
            bound: self.bound,
            epsilon: self.epsilon,
            lambda: self.lambda,
            acc: self.acc.clone(),
            solver: self.solver.clone(),
        }
    }
}

/// Ridge `eps^2 / (4 B^2)`.
pub fn default_ridge(epsilon: f64, bound: f64) -> f64 {
    epsilon * epsilon / (4.0 * bound * bound)
}

impl<S> LinearWidth<S> {
    /// `lambda = None` picks [`default_ridge`].
    pub fn new(features: FeatureFn<S>, dim: usize, bound: f64, epsilon: f64, lambda: Option<f64>) -> Self {
        let lambda = lambda.unwrap_or_else(|| default_ridge(epsilon, bound));
        assert!(lambda >= 0.0, "ridge must be nonnegative");
        Self { features, bound, epsilon, lambda, acc: GramAccumulator::new(dim), solver: OnceLock::new() }
    }

    pub fn from_class(class: &LinearClass<S>, epsilon: f64, lambda: Option<f64>) -> Self {
        Self::new(class.feature_fn(), class.dim(), class.bound(), epsilon, lambda)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gram(&self) -> &GramAccumulator {
        &self.acc
    }

    fn solver(&self) -> Arc<Solver> {
        self.solver
            .get_or_init(|| Arc::new(Solver::new(self.acc.matrix(), self.lambda, self.bound, self.epsilon)))
            .clone()
    }
}

impl<S: Send + Sync + 'static> LinearWidth<S> {
    /// Width over the tangent class `{u . g_theta : |u| <= B}` at the map's
    /// base point.
    pub fn from_tangent(map: &TangentFeatureMap<S>, epsilon: f64, lambda: Option<f64>) -> Self {
        let m = map.clone();
        let features: FeatureFn<S> = Arc::new(move |s: &S, a: usize| m.features(s, a));
        Self::new(features, map.dim(), map.bound, epsilon, lambda)
    }
}

impl<S: Send + Sync + 'static> WidthOracle<S> for LinearWidth<S> {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn len(&self) -> usize {
        self.acc.len()
    }

    fn push(&mut self, s: &S, a: usize) {
        self.acc.push((self.features)(s, a));
        self.solver = OnceLock::new();
    }

    fn width(&self, s: &S, a: usize) -> f64 {
        self.solver().width(&(self.features)(s, a))
    }

    fn snapshot(&self) -> WidthFn<S> {
        let solver = self.solver();
        let features = self.features.clone();
        Arc::new(move |s: &S, a: usize| solver.width(&features(s, a)))
    }
}

/// One-shot linear width against `z`, building the Gram matrix from scratch.
#[allow(clippy::too_many_arguments)]
pub fn width_linear<S>(
    features: &dyn Fn(&S, usize) -> Vec<f64>,
    dim: usize,
    bound: f64,
    z: &Dataset<S>,
    epsilon: f64,
    lambda: f64,
    s: &S,
    a: usize,
) -> f64 {
    let mut gram = vec![0.0; dim * dim];
    for (zs, za) in z.iter() {
        add_outer(&mut gram, &features(zs, za));
    }
    Solver::new(DMatrix::from_row_slice(dim, dim, &gram), lambda, bound, epsilon).width(&features(s, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> impl Fn(&usize, usize) -> Vec<f64> {
        |s: &usize, _| {
            let mut v = vec![0.0; 2];
            v[*s] = 1.0;
            v
        }
    }

    #[test]
    fn empty_dataset_hits_norm_cap() {
        let f = unit();
        assert!((width_linear(&f, 2, 1.0, &Dataset::new(), 0.1, 0.0, &0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn observed_direction_shrinks_to_epsilon() {
        let f = unit();
        let z = Dataset::from_pairs(vec![(0usize, 0)]);
        assert!((width_linear(&f, 2, 1.0, &z, 0.1, 0.0, &0, 0) - 0.1).abs() < 1e-12);
        assert!((width_linear(&f, 2, 1.0, &z, 0.1, 0.0, &1, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn incremental_matches_one_shot() {
        let phi: FeatureFn<usize> = Arc::new(|s: &usize, a: usize| vec![1.0, *s as f64 * 0.1, a as f64 - 0.5]);
        let mut w = LinearWidth::new(phi.clone(), 3, 2.0, 0.3, None);
        let mut z = Dataset::new();
        for i in 0..1100usize {
            w.push(&(i % 7), i % 2);
            z.push(i % 7, i % 2);
        }
        let lam = w.lambda();
        for s in 0..7 {
            let a = width_linear(phi.as_ref(), 3, 2.0, &z, 0.3, lam, &s, 1);
            assert!((w.width(&s, 1) - a).abs() < 1e-9 * a.max(1.0));
            assert_eq!(w.width(&s, 1), w.snapshot()(&s, 1));
        }
    }
}
