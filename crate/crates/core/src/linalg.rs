//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Relative threshold below which singular values / eigenvalues count as zero.
pub const RANK_TOL: f64 = 1e-10;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale `v` onto the Euclidean ball of radius `bound` if it lies outside.
pub fn project_to_ball(v: &mut [f64], bound: f64) {
    let n = norm(v);
    if n > bound && n > 0.0 {
        let s = bound / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Result of a least-squares solve.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub coefficients: Vec<f64>,
    /// Mean squared residual of the returned coefficients.
    pub mean_squared_residual: f64,
    /// Whether the norm constraint was active.
    pub constrained: bool,
}

/// Minimise `sum_i (y_i - x_i . u)^2` subject to `|u|_2 <= bound`.
///
/// The unconstrained minimum-norm solution is returned when feasible;
/// otherwise the constrained optimum `u(mu) = (X'X + mu I)^+ X'y` with
/// `|u(mu)| = bound` is located by bisection on the multiplier.
pub fn ball_constrained_lstsq(rows: &[Vec<f64>], targets: &[f64], bound: f64) -> Result<LstsqSolution> {
    if rows.is_empty() {
        return Err(Error::Empty("least-squares samples".into()));
    }
    if rows.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: rows.len(), got: targets.len() });
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("regression target {t}")));
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: r.len() });
    }
    let m = rows.len();
    let x = DMatrix::from_fn(m, d, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(targets);

    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd u");
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * RANK_TOL * (m.max(d) as f64);
    let uty = u.transpose() * &y;

    let coeffs_for = |mu: f64| -> DVector<f64> {
        let mut z = DVector::zeros(sigma.len());
        for k in 0..sigma.len() {
            let s = sigma[k];
            if s > cutoff {
                z[k] = s * uty[k] / (s * s + mu);
            }
        }
        v_t.transpose() * z
    };

    let mut sol = coeffs_for(0.0);
    let mut constrained = false;
    if sol.norm() > bound {
        constrained = true;
        if bound <= 0.0 {
            sol = DVector::zeros(d);
        } else {
            let (mut lo, mut hi) = (0.0_f64, smax * smax + 1.0);
            while coeffs_for(hi).norm() > bound {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if coeffs_for(mid).norm() > bound {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi.max(1.0) {
                    break;
                }
            }
            sol = coeffs_for(hi);
            // Bisection lands inside the ball; clean up rounding on the boundary.
            let n = sol.norm();
            if n > bound {
                sol *= bound / n;
            }
        }
    }

    let resid = &y - &x * &sol;
    Ok(LstsqSolution {
        coefficients: sol.iter().cloned().collect(),
        mean_squared_residual: resid.norm_squared() / m as f64,
        constrained,
    })
}

/// Eigendecomposition of a symmetric PSD matrix with tiny negative
/// eigenvalues clipped to zero.
#[derive(Debug, Clone)]
pub struct PsdEigen {
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: DMatrix<f64>,
}

impl PsdEigen {
    pub fn new(m: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(m);
        let values = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        Self { values, vectors: eig.eigenvectors }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Coordinates of `v` in the eigenbasis.
    pub fn coordinates(&self, v: &[f64]) -> Vec<f64> {
        let d = v.len();
        (0..self.values.len())
            .map(|k| (0..d).map(|i| self.vectors[(i, k)] * v[i]).sum())
            .collect()
    }
}
