use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column means of `x` and the centered copy.
pub(crate) fn center_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (xc, means)
}

fn center(y: &[f64]) -> (Vec<f64>, f64) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    (y.iter().map(|v| v - mean).collect(), mean)
}

/// Smallest-to-largest squared pivot ratio below which an unpenalized
/// Gram matrix is treated as rank deficient.
const RANK_TOL: f64 = 1e-12;

fn spd_solve(a: DMatrix<f64>, b: DVector<f64>, check_rank: bool) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("normal equations are not positive definite".into()))?;
    if check_rank {
        let diag = chol.l_dirty().diagonal();
        let max = diag.max();
        let min = diag.min();
        if !(min * min > RANK_TOL * max * max) {
            return Err(Error::SingularSystem("design is rank deficient".into()));
        }
    }
    Ok(chol.solve(&b))
}

/// Ridge regression with an unpenalized intercept:
/// minimizes `‖y − b − Xβ‖² + λ‖β‖²`. Returns `(β, b)`.
pub(crate) fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let (xc, means) = center_columns(x);
    let (yc, y_mean) = center(y);
    let yc = DVector::from_vec(yc);
    let (n, p) = xc.shape();
    let unpenalized = lambda == 0.0;
    let beta = if p <= n {
        let mut gram = xc.tr_mul(&xc);
        for i in 0..p {
            gram[(i, i)] += lambda;
        }
        spd_solve(gram, xc.tr_mul(&yc), unpenalized)?
    } else {
        if unpenalized {
            return Err(Error::SingularSystem(format!(
                "unpenalized ridge with p = {p} > n = {n}"
            )));
        }
        // Dual form: β = X̃ᵀ(X̃X̃ᵀ + λI)⁻¹ỹ.
        let mut gram = &xc * xc.transpose();
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let a = spd_solve(gram, yc, false)?;
        xc.tr_mul(&a)
    };
    let intercept = y_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok((beta.as_slice().to_vec(), intercept))
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

pub(crate) struct LassoFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

/// Cyclic coordinate descent on `(1/(2n))‖y − b − Xβ‖² + λ‖β‖₁`, intercept
/// unpenalized. Stops once a full sweep moves no coefficient by more than
/// `tol` (measured on the scale `β_j·‖x̃_j‖/√n`).
pub(crate) fn fit_lasso(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LassoFit> {
    let (xc, means) = center_columns(x);
    let (mut resid, y_mean) = center(y);
    let (n, p) = xc.shape();
    let nf = n as f64;
    let norms: Vec<f64> = xc.column_iter().map(|c| c.norm_squared() / nf).collect();
    let mut coef = vec![0.0; p];

    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        let mut max_change = 0.0f64;
        for j in 0..p {
            if norms[j] <= 0.0 {
                continue;
            }
            let col = xc.column(j);
            let dot: f64 = col.iter().zip(&resid).map(|(a, r)| a * r).sum();
            let old = coef[j];
            let new = soft_threshold(dot / nf + norms[j] * old, lambda) / norms[j];
            let delta = new - old;
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(col.iter()) {
                    *r -= a * delta;
                }
                coef[j] = new;
                max_change = max_change.max(delta.abs() * norms[j].sqrt());
            }
        }
        last_change = max_change;
        if max_change < tol {
            let intercept = y_mean - coef.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
            return Ok(LassoFit { coef, intercept });
        }
    }
    Err(Error::NonConvergence {
        learner: "lasso",
        iterations: max_iter,
        last_change,
    })
}
