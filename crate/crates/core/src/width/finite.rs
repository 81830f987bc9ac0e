use std::sync::Arc;

use super::{Dataset, WidthFn, WidthOracle};
use crate::function_class::{FiniteClass, FunctionClass};

/// Exact width over the difference class of an explicit list of tables.
///
/// Keeps `|f_i - f_j|_Z^2` for every pair, updated on append.
#[derive(Debug, Clone)]
pub struct FiniteWidth {
    tables: Arc<Vec<Vec<f64>>>,
    num_actions: usize,
    epsilon: f64,
    sq: Vec<f64>,
    len: usize,
}

impl FiniteWidth {
    /// `tables[k][s * num_actions + a]`.
    pub fn new(tables: Vec<Vec<f64>>, num_actions: usize, epsilon: f64) -> Self {
        let k = tables.len();
        Self { tables: Arc::new(tables), num_actions, epsilon, sq: vec![0.0; k * k], len: 0 }
    }

    pub fn from_class(class: &FiniteClass, epsilon: f64) -> Self {
        Self::new(class.tables().to_vec(), FunctionClass::<usize>::num_actions(class), epsilon)
    }

    fn feasible_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.tables.len();
        let e2 = self.epsilon * self.epsilon;
        (0..k)
            .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
            .filter(|&(i, j)| self.sq[i * k + j] <= e2)
            .collect()
    }
}

fn pair_width(tables: &[Vec<f64>], pairs: &[(usize, usize)], cell: usize) -> f64 {
    pairs.iter().map(|&(i, j)| (tables[i][cell] - tables[j][cell]).abs()).fold(0.0, f64::max)
}

impl WidthOracle<usize> for FiniteWidth {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn len(&self) -> usize {
        self.len
    }

    fn push(&mut self, s: &usize, a: usize) {
        let k = self.tables.len();
        let cell = s * self.num_actions + a;
        for i in 0..k {
            for j in (i + 1)..k {
                let d = self.tables[i][cell] - self.tables[j][cell];
                self.sq[i * k + j] += d * d;
            }
        }
        self.len += 1;
    }

    fn width(&self, s: &usize, a: usize) -> f64 {
        pair_width(&self.tables, &self.feasible_pairs(), s * self.num_actions + a)
    }

    fn snapshot(&self) -> WidthFn<usize> {
        let tables = self.tables.clone();
        let pairs = self.feasible_pairs();
        let na = self.num_actions;
        Arc::new(move |s: &usize, a: usize| pair_width(&tables, &pairs, s * na + a))
    }
}

/// Exact width of a finite class against `z`, by enumerating all pairs.
pub fn width_finite(class: &FiniteClass, z: &Dataset<usize>, epsilon: f64, s: usize, a: usize) -> f64 {
    let na = FunctionClass::<usize>::num_actions(class);
    let tables = class.tables();
    let mut best: f64 = 0.0;
    for f in tables {
        for g in tables {
            let d = z.norm(|s, a| f[s * na + a] - g[s * na + a]);
            if d <= epsilon {
                best = best.max(f[s * na + a] - g[s * na + a]);
            }
        }
    }
    best
}

/// Exact width of the box class `[-W, W]^{S x A}`: cells decouple, so the
/// largest difference at a cell visited `c` times is `min(2W, eps / sqrt(c))`.
#[derive(Debug, Clone)]
pub struct TabularWidth {
    counts: Vec<u64>,
    num_actions: usize,
    bound: f64,
    epsilon: f64,
    len: usize,
}

impl TabularWidth {
    pub fn new(num_states: usize, num_actions: usize, bound: f64, epsilon: f64) -> Self {
        Self { counts: vec![0; num_states * num_actions], num_actions, bound, epsilon, len: 0 }
    }

    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.num_actions + a]
    }
}

fn cell_width(count: u64, bound: f64, epsilon: f64) -> f64 {
    if count == 0 {
        2.0 * bound
    } else {
        (epsilon / (count as f64).sqrt()).min(2.0 * bound)
    }
}

impl WidthOracle<usize> for TabularWidth {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn len(&self) -> usize {
        self.len
    }

    fn push(&mut self, s: &usize, a: usize) {
        self.counts[s * self.num_actions + a] += 1;
        self.len += 1;
    }

    fn width(&self, s: &usize, a: usize) -> f64 {
        cell_width(self.count(*s, a), self.bound, self.epsilon)
    }

    fn snapshot(&self) -> WidthFn<usize> {
        let table: Vec<f64> = self.counts.iter().map(|&c| cell_width(c, self.bound, self.epsilon)).collect();
        let na = self.num_actions;
        Arc::new(move |s: &usize, a: usize| table[s * na + a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_on_two() -> FiniteClass {
        // two single-action states; member 0 is constant
        FiniteClass::new(2, 1, vec![vec![0.0, 0.0], vec![0.3, 1.0], vec![1.0, 0.2]]).unwrap()
    }

    #[test]
    fn single_function_has_zero_width() {
        let c = FiniteClass::new(1, 2, vec![vec![1.0, 1.0]]).unwrap();
        let w = FiniteWidth::from_class(&c, 0.1);
        assert_eq!(w.width(&0, 1), 0.0);
    }

    #[test]
    fn empty_dataset_gives_max_spread() {
        let c = three_on_two();
        let w = FiniteWidth::from_class(&c, 0.5);
        assert!((w.width(&1, 0) - 1.0).abs() < 1e-15);
        assert!((width_finite(&c, &Dataset::new(), 0.5, 1, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_enumeration() {
        // Z = {point 0}: |f0-f1| = 0.3 ok, |f0-f2| = 1.0 no, |f1-f2| = 0.7 no
        let c = three_on_two();
        let mut w = FiniteWidth::from_class(&c, 0.5);
        w.push(&0, 0);
        let z = Dataset::from_pairs(vec![(0, 0)]);
        assert!((w.width(&1, 0) - 1.0).abs() < 1e-15);
        assert!((w.width(&0, 0) - 0.3).abs() < 1e-15);
        assert_eq!(w.width(&1, 0), width_finite(&c, &z, 0.5, 1, 0));
        assert_eq!(w.snapshot()(&0, 0), width_finite(&c, &z, 0.5, 0, 0));
    }

    #[test]
    fn tabular_width_formula() {
        let mut w = TabularWidth::new(2, 2, 1.0, 0.5);
        assert_eq!(w.width(&0, 0), 2.0);
        for _ in 0..4 {
            w.push(&0, 0);
        }
        assert!((w.width(&0, 0) - 0.25).abs() < 1e-15);
        assert_eq!(w.width(&1, 1), 2.0);
    }
}
