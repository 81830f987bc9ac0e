use super::{mean_squared_residual, ClassKind, Fit, FitOptions, FunctionClass, Sample};
use crate::Result;

/// All tables `f : S x A -> [-W, W]` over a finite state set.
///
/// Least squares decouples per cell, so the exact fit is the clamped cell
/// mean; cells without samples fit to zero.
#[derive(Debug, Clone)]
pub struct TabularClass {
    num_states: usize,
    num_actions: usize,
    bound: f64,
}

impl TabularClass {
    pub fn new(num_states: usize, num_actions: usize, bound: f64) -> Self {
        Self { num_states, num_actions, bound }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }
}

impl FunctionClass<usize> for TabularClass {
    fn kind(&self) -> ClassKind {
        ClassKind::Tabular
    }

    fn num_params(&self) -> usize {
        self.num_states * self.num_actions
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn sup_bound(&self) -> f64 {
        self.bound
    }

    fn shape(&self) -> Vec<usize> {
        vec![self.num_states, self.num_actions]
    }

    fn evaluate(&self, params: &[f64], s: &usize, a: usize) -> f64 {
        params[self.index(*s, a)]
    }

    fn fit_with(&self, samples: &[Sample<usize>], _opts: &FitOptions<'_>) -> Result<Fit> {
        let n = self.num_params();
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        for x in samples {
            let i = self.index(x.state, x.action);
            sum[i] += x.target;
            count[i] += 1;
        }
        let params: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(&t, &c)| if c == 0 { 0.0 } else { (t / c as f64).clamp(-self.bound, self.bound) })
            .collect();
        let loss = mean_squared_residual(samples, |s, a| params[self.index(*s, a)]);
        Ok(Fit { params, loss })
    }

    fn uniform_params(&self) -> Vec<f64> {
        vec![0.0; self.num_params()]
    }

    fn additive(&self) -> bool {
        true
    }
}
