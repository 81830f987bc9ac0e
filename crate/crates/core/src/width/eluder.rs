use std::collections::HashMap;

use super::{Dataset, WidthOracle};

/// Relative slack absorbing round-off when comparing a width to `eps`.
const SLACK: f64 = 1e-9;

/// `width > eps`, up to round-off.
pub fn exceeds_radius(width: f64, epsilon: f64) -> bool {
    width > epsilon * (1.0 + SLACK) + f64::EPSILON
}

/// Whether `(s, a)` is `eps`-independent of `z`: the width of the class
/// after observing `z` exceeds `eps`. `fresh` is an oracle with an empty
/// dataset; it is cloned, not modified.
pub fn is_independent<S, O: WidthOracle<S> + Clone>(fresh: &O, z: &Dataset<S>, s: &S, a: usize) -> bool {
    let mut o = fresh.clone();
    for (zs, za) in z.iter() {
        o.push(zs, za);
    }
    exceeds_radius(o.width(s, a), o.epsilon())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EluderMode {
    /// Search over used-point subsets, giving up after `budget` subsets.
    Exact { budget: usize },
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EluderResult {
    pub length: usize,
    /// Domain indices of a witnessing sequence.
    pub sequence: Vec<usize>,
    /// True when the exact search ran out of budget and the greedy length
    /// was returned instead.
    pub fell_back: bool,
}

/// Longest sequence over `0..n` in which every element is independent of
/// its predecessors. `independent(prefix, x)` decides one step and may only
/// depend on the set of points in `prefix`.
///
/// Repeating a point never helps (a point is always dependent on a set
/// containing it), so the exact search runs over subsets.
pub fn eluder_dimension(n: usize, independent: &dyn Fn(&[usize], usize) -> bool, mode: EluderMode) -> EluderResult {
    match mode {
        EluderMode::Greedy => greedy(n, independent),
        EluderMode::Exact { budget } => {
            if n > 63 {
                return EluderResult { fell_back: true, ..greedy(n, independent) };
            }
            let mut search = Search { n, independent, memo: HashMap::new(), budget, exhausted: false };
            let mut prefix = Vec::new();
            let length = search.longest(0, &mut prefix);
            if search.exhausted {
                return EluderResult { fell_back: true, ..greedy(n, independent) };
            }
            let sequence = search.witness();
            debug_assert_eq!(sequence.len(), length);
            EluderResult { length, sequence, fell_back: false }
        }
    }
}

/// Extend one sequence with the lowest-index independent point until none
/// remains; a lower bound on the exact length.
fn greedy(n: usize, independent: &dyn Fn(&[usize], usize) -> bool) -> EluderResult {
    let mut seq: Vec<usize> = Vec::new();
    loop {
        let next = (0..n).find(|x| !seq.contains(x) && independent(&seq, *x));
        match next {
            Some(x) => seq.push(x),
            None => break,
        }
    }
    EluderResult { length: seq.len(), sequence: seq, fell_back: false }
}

struct Search<'a> {
    n: usize,
    independent: &'a dyn Fn(&[usize], usize) -> bool,
    /// used-set mask -> (longest continuation, first point of it)
    memo: HashMap<u64, (usize, Option<usize>)>,
    budget: usize,
    exhausted: bool,
}

impl Search<'_> {
    fn longest(&mut self, mask: u64, prefix: &mut Vec<usize>) -> usize {
        if let Some(&(len, _)) = self.memo.get(&mask) {
            return len;
        }
        if self.exhausted || self.memo.len() >= self.budget {
            self.exhausted = true;
            return 0;
        }
        let mut best = (0, None);
        for x in 0..self.n {
            if mask & (1 << x) != 0 || !(self.independent)(prefix, x) {
                continue;
            }
            prefix.push(x);
            let len = 1 + self.longest(mask | (1 << x), prefix);
            prefix.pop();
            if len > best.0 {
                best = (len, Some(x));
            }
            if self.exhausted {
                return 0;
            }
        }
        self.memo.insert(mask, best);
        best.0
    }

    fn witness(&self) -> Vec<usize> {
        let mut mask = 0u64;
        let mut seq = Vec::new();
        while let Some(&(_, Some(x))) = self.memo.get(&mask) {
            seq.push(x);
            mask |= 1 << x;
        }
        seq
    }
}

/// Eluder length of the class behind `fresh` over `domain`.
pub fn eluder_with_oracle<S, O: WidthOracle<S> + Clone>(fresh: &O, domain: &[(S, usize)], mode: EluderMode) -> EluderResult {
    let indep = |prefix: &[usize], x: usize| {
        let mut o = fresh.clone();
        for &p in prefix {
            o.push(&domain[p].0, domain[p].1);
        }
        exceeds_radius(o.width(&domain[x].0, domain[x].1), o.epsilon())
    };
    eluder_dimension(domain.len(), &indep, mode)
}
