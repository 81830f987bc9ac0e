use std::sync::Arc;

use super::Mode;
use crate::function_class::{softmax, DifferentiableClass, FunctionClass};
use crate::mdp::Policy;
use crate::width::{known_from_bonus, known_set_query, BonusFn, KnownStatus, WidthFn};

/// Known-set membership query, `s -> FullyKnown | Unknown(actions)`.
pub struct KnownSet<S> {
    query: Arc<dyn Fn(&S) -> KnownStatus + Send + Sync>,
}

impl<S> Clone for KnownSet<S> {
    fn clone(&self) -> Self {
        Self { query: self.query.clone() }
    }
}

impl<S: 'static> KnownSet<S> {
    pub fn from_fn(query: impl Fn(&S) -> KnownStatus + Send + Sync + 'static) -> Self {
        Self { query: Arc::new(query) }
    }

    /// Pairs with zero bonus are known.
    pub fn from_bonus(bonus: BonusFn<S>, num_actions: usize) -> Self {
        Self::from_fn(move |s| known_from_bonus(bonus.as_ref(), num_actions, s))
    }

    /// Pairs with width below `beta` are known.
    pub fn from_width(width: WidthFn<S>, beta: f64, num_actions: usize) -> Self {
        Self::from_fn(move |s| known_set_query(width.as_ref(), beta, num_actions, s))
    }

    pub fn all_known() -> Self {
        Self::from_fn(|_| KnownStatus::FullyKnown)
    }

    pub fn status(&self, s: &S) -> KnownStatus {
        (self.query)(s)
    }
}

/// Initial policy of an epoch: uniform over all actions at known states
/// (or everywhere, without a known set) and uniform over the unknown actions
/// elsewhere.
pub struct InitPolicy<S> {
    known: Option<KnownSet<S>>,
    num_actions: usize,
}

impl<S> Clone for InitPolicy<S> {
    fn clone(&self) -> Self {
        Self { known: self.known.clone(), num_actions: self.num_actions }
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn uniform_over(actions: &[usize], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    let w = 1.0 / actions.len() as f64;
    for &a in actions {
        p[a] = w;
    }
    p
}

impl<S: 'static> InitPolicy<S> {
    pub fn new(known: Option<KnownSet<S>>, num_actions: usize) -> Self {
        Self { known, num_actions }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn known(&self) -> Option<&KnownSet<S>> {
        self.known.as_ref()
    }

    /// `None` at fully known states (the update applies there), otherwise
    /// the fixed initial law.
    fn gated(&self, s: &S) -> Option<Vec<f64>> {
        match self.known.as_ref().map(|k| k.status(s)) {
            Some(KnownStatus::Unknown(actions)) => Some(uniform_over(&actions, self.num_actions)),
            _ => None,
        }
    }
}

impl<S: Send + Sync + 'static> Policy<S> for InitPolicy<S> {
    fn action_probabilities(&self, s: &S) -> Vec<f64> {
        self.gated(s).unwrap_or_else(|| uniform(self.num_actions))
    }
}

fn mix_uniform(mut p: Vec<f64>, alpha: f64) -> Vec<f64> {
    let u = alpha / p.len() as f64;
    p.iter_mut().for_each(|x| *x = (1.0 - alpha) * *x + u);
    p
}

struct Link {
    params: Vec<f64>,
    eta: f64,
    prev: Option<Arc<Link>>,
}

/// Multiplicative-weights policy `pi_t ∝ pi_0 exp(sum_i eta_i f_i)`.
///
/// Critics are stored as a shared persistent list, so the `T` iterates of
/// one update cost `O(T)` memory in total. Additive classes also keep the
/// running parameter sum and evaluate a single critic.
pub struct SpiPolicy<S> {
    class: Arc<dyn FunctionClass<S>>,
    init: InitPolicy<S>,
    mode: Mode,
    chain: Option<Arc<Link>>,
    summed: Option<Arc<Vec<f64>>>,
    steps: usize,
}

impl<S> Clone for SpiPolicy<S> {
    fn clone(&self) -> Self {
        Self {
            class: self.class.clone(),
            init: self.init.clone(),
            mode: self.mode,
            chain: self.chain.clone(),
            summed: self.summed.clone(),
            steps: self.steps,
        }
    }
}

impl<S: Send + Sync + 'static> SpiPolicy<S> {
    pub fn new(class: Arc<dyn FunctionClass<S>>, init: InitPolicy<S>, mode: Mode) -> Self {
        Self { class, init, mode, chain: None, summed: None, steps: 0 }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// A new policy with `(params, eta)` appended.
    pub fn step(&self, params: Vec<f64>, eta: f64) -> Self {
        let summed = if self.class.additive() {
            let mut acc = self.summed.as_deref().cloned().unwrap_or_else(|| vec![0.0; params.len()]);
            for (a, p) in acc.iter_mut().zip(&params) {
                *a += eta * p;
            }
            Some(Arc::new(acc))
        } else {
            None
        };
        let chain = Some(Arc::new(Link { params, eta, prev: self.chain.clone() }));
        Self { chain, summed, steps: self.steps + 1, ..self.clone() }
    }

    /// `sum_i eta_i f_i(s, .)`.
    pub fn logits(&self, s: &S) -> Vec<f64> {
        let na = self.init.num_actions();
        if let Some(sum) = &self.summed {
            return self.class.evaluate_all(sum, s);
        }
        let mut acc = vec![0.0; na];
        let mut link = self.chain.as_deref();
        while let Some(l) = link {
            for (x, v) in acc.iter_mut().zip(self.class.evaluate_all(&l.params, s)) {
                *x += l.eta * v;
            }
            link = l.prev.as_deref();
        }
        acc
    }
}

impl<S: Send + Sync + 'static> Policy<S> for SpiPolicy<S> {
    fn action_probabilities(&self, s: &S) -> Vec<f64> {
        match self.mode {
            Mode::Sample => self.init.gated(s).unwrap_or_else(|| softmax(&self.logits(s))),
            Mode::Compute { alpha } => mix_uniform(softmax(&self.logits(s)), alpha),
        }
    }
}

/// Softmax policy of `f_theta`, gated (SAMPLE) or mixed (COMPUTE).
pub struct NpgPolicy<S> {
    class: Arc<dyn DifferentiableClass<S>>,
    theta: Arc<Vec<f64>>,
    init: InitPolicy<S>,
    mode: Mode,
}

impl<S> Clone for NpgPolicy<S> {
    fn clone(&self) -> Self {
        Self { class: self.class.clone(), theta: self.theta.clone(), init: self.init.clone(), mode: self.mode }
    }
}

impl<S: Send + Sync + 'static> NpgPolicy<S> {
    pub fn new(class: Arc<dyn DifferentiableClass<S>>, theta: Vec<f64>, init: InitPolicy<S>, mode: Mode) -> Self {
        Self { class, theta: Arc::new(theta), init, mode }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn class(&self) -> &Arc<dyn DifferentiableClass<S>> {
        &self.class
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        Self { theta: Arc::new(theta), ..self.clone() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl<S: Send + Sync + 'static> Policy<S> for NpgPolicy<S> {
    fn action_probabilities(&self, s: &S) -> Vec<f64> {
        let soft = || softmax(&self.class.evaluate_all(&self.theta, s));
        match self.mode {
            Mode::Sample => self.init.gated(s).unwrap_or_else(soft),
            Mode::Compute { alpha } => mix_uniform(soft(), alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_class::TabularClass;

    fn unknown(actions: Vec<usize>) -> KnownSet<usize> {
        KnownSet::from_fn(move |_| KnownStatus::Unknown(actions.clone()))
    }

    #[test]
    fn init_policy_cases() {
        let all = InitPolicy::new(Some(KnownSet::all_known()), 4);
        assert_eq!(all.action_probabilities(&0), vec![0.25; 4]);
        let one = InitPolicy::new(Some(unknown(vec![2])), 4);
        assert_eq!(one.action_probabilities(&0), vec![0.0, 0.0, 1.0, 0.0]);
        let two = InitPolicy::new(Some(unknown(vec![0, 2])), 4);
        assert_eq!(two.action_probabilities(&0), vec![0.5, 0.0, 0.5, 0.0]);
        let compute = InitPolicy::<usize>::new(None, 3);
        assert_eq!(compute.action_probabilities(&0), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn spi_step_known_state() {
        let class: Arc<dyn FunctionClass<usize>> = Arc::new(TabularClass::new(1, 2, 10.0));
        let pi = SpiPolicy::new(class, InitPolicy::new(Some(KnownSet::all_known()), 2), Mode::Sample);
        let next = pi.step(vec![1.0, 0.0], 0.5);
        let p = next.action_probabilities(&0);
        assert!((p[0] - 0.6225).abs() < 1e-4 && (p[1] - 0.3775).abs() < 1e-4);
    }

    #[test]
    fn spi_unknown_state_stays_at_init() {
        let class: Arc<dyn FunctionClass<usize>> = Arc::new(TabularClass::new(1, 3, 10.0));
        let pi = SpiPolicy::new(class, InitPolicy::new(Some(unknown(vec![1])), 3), Mode::Sample);
        let next = pi.step(vec![5.0, 0.0, -1.0], 1.0).step(vec![2.0, 1.0, 0.0], 1.0);
        assert_eq!(next.action_probabilities(&0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn compute_floor() {
        let class: Arc<dyn FunctionClass<usize>> = Arc::new(TabularClass::new(1, 4, 100.0));
        let pi = SpiPolicy::new(class, InitPolicy::new(None, 4), Mode::Compute { alpha: 0.2 });
        let next = pi.step(vec![50.0, 0.0, 0.0, 0.0], 1.0);
        let p = next.action_probabilities(&0);
        assert!(p.iter().all(|&x| x >= 0.05 - 1e-12));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
