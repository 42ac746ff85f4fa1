use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::support_points::{sq_dist, PointSet};

/// Loss for the RBF kernel machine.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelLoss {
    /// Kernel ridge regression, solved in closed form.
    #[default]
    Squared,
    /// Support vector regression without bias term.
    EpsilonInsensitive { epsilon: f64, c: f64, max_iter: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    pub(crate) gamma: f64,
    pub(crate) dual: Vec<f64>,
    pub(crate) support: PointSet,
}

#[inline]
pub(crate) fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

pub(crate) fn gram(gamma: f64, pts: &PointSet) -> DMatrix<f64> {
    let n = pts.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = rbf(gamma, pts.row(i), pts.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

pub(crate) fn fit_kernel(
    x: &DMatrix<f64>,
    y: &[f64],
    gamma: f64,
    lambda: f64,
    loss: KernelLoss,
) -> Result<KernelModel> {
    let support = PointSet::from_matrix(x)?;
    let mut q = gram(gamma, &support);
    for i in 0..q.nrows() {
        q[(i, i)] += lambda;
    }
    let dual = match loss {
        KernelLoss::Squared => {
            let chol = q.cholesky().ok_or_else(|| {
                Error::SingularSystem("kernel matrix plus ridge is not positive definite".into())
            })?;
            chol.solve(&DVector::from_column_slice(y)).as_slice().to_vec()
        }
        KernelLoss::EpsilonInsensitive {
            epsilon,
            c,
            max_iter,
        } => svr_dual(&q, y, epsilon, c, max_iter)?,
    };
    Ok(KernelModel {
        gamma,
        dual,
        support,
    })
}

/// Coordinate descent on the box-constrained SVR dual
/// `min ½βᵀQβ − yᵀβ + ε‖β‖₁` subject to `|βᵢ| ≤ C`, with `β = α − α*`.
fn svr_dual(q: &DMatrix<f64>, y: &[f64], eps: f64, c: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = y.len();
    let mut beta = vec![0.0; n];
    let mut qb = vec![0.0; n];
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        let mut max_change = 0.0f64;
        for i in 0..n {
            let qii = q[(i, i)];
            let rest = qb[i] - qii * beta[i];
            let z = y[i] - rest;
            let shrunk = if z > eps {
                z - eps
            } else if z < -eps {
                z + eps
            } else {
                0.0
            };
            let new = (shrunk / qii).clamp(-c, c);
            let delta = new - beta[i];
            if delta != 0.0 {
                for (j, v) in qb.iter_mut().enumerate() {
                    *v += q[(j, i)] * delta;
                }
                beta[i] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        last_change = max_change;
        if max_change < 1e-8 {
            return Ok(beta);
        }
    }
    Err(Error::NonConvergence {
        learner: "svr",
        iterations: max_iter,
        last_change,
    })
}

impl KernelModel {
    pub(crate) fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let pts = PointSet::from_matrix(x)?;
        Ok(pts
            .rows()
            .map(|r| {
                self.support
                    .rows()
                    .zip(&self.dual)
                    .map(|(s, a)| a * rbf(self.gamma, r, s))
                    .sum()
            })
            .collect())
    }

    pub fn dual_coefficients(&self) -> &[f64] {
        &self.dual
    }
}
