use super::{mean_squared_residual, ClassKind, Fit, FitOptions, FunctionClass, Sample};
use crate::{Error, Result};

/// An explicit list of tables over a finite `S x A`. The parameter vector
/// is the single index `[k]` of the selected table.
#[derive(Debug, Clone)]
pub struct FiniteClass {
    num_states: usize,
    num_actions: usize,
    tables: Vec<Vec<f64>>,
    uniform_index: usize,
}

impl FiniteClass {
    /// `tables[k][s * num_actions + a]`. At least one table must be constant
    /// across actions at every state.
    pub fn new(num_states: usize, num_actions: usize, tables: Vec<Vec<f64>>) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::Empty("finite class needs at least one function".into()));
        }
        let cells = num_states * num_actions;
        if let Some(t) = tables.iter().find(|t| t.len() != cells) {
            return Err(Error::DimensionMismatch { expected: cells, got: t.len() });
        }
        if tables.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("finite class table entry".into()));
        }
        let uniform_index = tables
            .iter()
            .position(|t| {
                (0..num_states).all(|s| {
                    let row = &t[s * num_actions..(s + 1) * num_actions];
                    row.iter().all(|&x| x == row[0])
                })
            })
            .ok_or_else(|| Error::Config("finite class has no action-constant member".into()))?;
        Ok(Self { num_states, num_actions, tables, uniform_index })
    }

    /// Same, appending the all-zero table when no action-constant member exists.
    pub fn with_uniform(num_states: usize, num_actions: usize, mut tables: Vec<Vec<f64>>) -> Result<Self> {
        match Self::new(num_states, num_actions, tables.clone()) {
            Err(Error::Config(_)) => {
                tables.push(vec![0.0; num_states * num_actions]);
                Self::new(num_states, num_actions, tables)
            }
            other => other,
        }
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    pub fn table(&self, k: usize) -> &[f64] {
        &self.tables[k]
    }

    pub fn value(&self, k: usize, s: usize, a: usize) -> f64 {
        self.tables[k][s * self.num_actions + a]
    }
}

impl FunctionClass<usize> for FiniteClass {
    fn kind(&self) -> ClassKind {
        ClassKind::Finite
    }

    fn num_params(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn sup_bound(&self) -> f64 {
        self.tables.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn shape(&self) -> Vec<usize> {
        vec![self.tables.len(), self.num_states, self.num_actions]
    }

    fn evaluate(&self, params: &[f64], s: &usize, a: usize) -> f64 {
        self.value(params[0] as usize, *s, a)
    }

    /// Exhaustive search; ties go to the lowest index.
    fn fit_with(&self, samples: &[Sample<usize>], _opts: &FitOptions<'_>) -> Result<Fit> {
        let mut best = (0usize, f64::INFINITY);
        for k in 0..self.tables.len() {
            let loss = mean_squared_residual(samples, |s, a| self.value(k, *s, a));
            if loss < best.1 {
                best = (k, loss);
            }
        }
        Ok(Fit { params: vec![best.0 as f64], loss: best.1 })
    }

    fn uniform_params(&self) -> Vec<f64> {
        vec![self.uniform_index as f64]
    }
}
