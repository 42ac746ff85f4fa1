#![allow(dead_code)]

use dml_spss::data::Dataset;
use dml_spss::dml::{NuisanceFit, ScoreKind};
use dml_spss::rng::seeded;
use dml_spss::support_points::FoldPlan;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded(seed);
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `2/(nm)ΣΣ‖a−b‖ − 1/n²ΣΣ‖a−a'‖ − 1/m²ΣΣ‖b−b'‖` by plain double loops.
pub fn energy_direct(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += euclid(x, y);
        }
    }
    let mut aa = 0.0;
    for x in a {
        for y in a {
            aa += euclid(x, y);
        }
    }
    let mut bb = 0.0;
    for x in b {
        for y in b {
            bb += euclid(x, y);
        }
    }
    2.0 * cross / (n * m) - aa / (n * n) - bb / (m * m)
}

/// Ridge through the augmented normal equations `[1 X]ᵀ[1 X] + diag(0, λI)`.
pub fn ridge_normal_equations(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let (n, p) = x.shape();
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let mut g = a.transpose() * &a;
    for j in 1..=p {
        g[(j, j)] += lambda;
    }
    let rhs = a.transpose() * DVector::from_column_slice(y);
    let sol = g.lu().solve(&rhs).expect("nonsingular");
    (sol.rows(1, p).iter().copied().collect(), sol[0])
}

fn centered(x: &DMatrix<f64>, y: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut xc = x.clone();
    for mut c in xc.column_iter_mut() {
        let m = c.sum() / n;
        c.add_scalar_mut(-m);
    }
    let ym = y.iter().sum::<f64>() / n;
    (xc, y.iter().map(|v| v - ym).collect())
}

/// `max_j |x̃_jᵀỹ|/n`: the smallest penalty at which the lasso is all zero.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let (xc, yc) = centered(x, y);
    let n = x.nrows() as f64;
    xc.column_iter()
        .map(|c| c.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

/// Largest violation of the lasso stationarity conditions at `(coef, intercept)`.
pub fn lasso_kkt_violation(x: &DMatrix<f64>, y: &[f64], lambda: f64, coef: &[f64], intercept: f64) -> f64 {
    let n = x.nrows() as f64;
    let resid: Vec<f64> = (0..x.nrows())
        .map(|i| y[i] - intercept - (0..x.ncols()).map(|j| x[(i, j)] * coef[j]).sum::<f64>())
        .collect();
    let mut worst = (resid.iter().sum::<f64>() / n).abs();
    for j in 0..x.ncols() {
        let g = x.column(j).iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n;
        let v = if coef[j] != 0.0 {
            (g - lambda * coef[j].signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// `(K + λI)⁻¹y` for the RBF kernel by LU.
pub fn kernel_dual_direct(x: &DMatrix<f64>, y: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let r = rows(x);
    let n = r.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        (-gamma * r[i].iter().zip(&r[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
            + if i == j { lambda } else { 0.0 }
    });
    k.lu().solve(&DVector::from_column_slice(y)).expect("nonsingular").iter().copied().collect()
}

/// Scores recomputed from scratch, returning per fold `(ψᵃ, ψ)` at `beta`.
pub fn scores_direct(
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
    beta: f64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    plan.folds()
        .iter()
        .zip(nuis)
        .map(|(fold, nf)| {
            let mut a = Vec::new();
            let mut psi = Vec::new();
            for (pos, &i) in fold.iter().enumerate() {
                let (y, t, m) = (d.y()[i], d.t()[i], nf.m_hat[pos]);
                let (pa, pb) = match kind {
                    ScoreKind::PartiallingOut => {
                        let l = nf.ell_hat[pos];
                        (-(t - m) * (t - m), (y - l) * (t - m))
                    }
                    ScoreKind::IvType => {
                        let g = nf.g_hat.as_ref().unwrap()[pos];
                        (-t * (t - m), (y - g) * (t - m))
                    }
                };
                a.push(pa);
                psi.push(pa * beta + pb);
            }
            (a, psi)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `σ̂²` and `Ĵ₀` by the scalar sandwich formula, written independently.
pub fn variance_direct(
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
    beta: f64,
) -> (f64, f64) {
    let s = scores_direct(d, plan, nuis, kind, beta);
    let k = s.len() as f64;
    let j = s.iter().map(|(a, _)| mean(a)).sum::<f64>() / k;
    let m2 = s
        .iter()
        .map(|(_, p)| mean(&p.iter().map(|v| v * v).collect::<Vec<_>>()))
        .sum::<f64>()
        / k;
    (m2 / (j * j), j)
}

/// Random nuisances and a random fold plan over a random dataset.
pub fn random_dml_instance(n: usize, k: usize, seed: u64) -> (Dataset, FoldPlan, Vec<NuisanceFit>) {
    let x = gaussian_matrix(n, 2, seed);
    let t = gaussian_vec(n, seed ^ 1);
    let y: Vec<f64> = gaussian_vec(n, seed ^ 2).iter().zip(&t).map(|(e, t)| 0.5 * t + e).collect();
    let d = Dataset::new(y, t, x).unwrap();
    let plan = dml_spss::support_points::random_kfold(n, k, seed ^ 3).unwrap();
    let noise = gaussian_vec(3 * n, seed ^ 4);
    let nuis = plan
        .folds()
        .iter()
        .enumerate()
        .map(|(f, fold)| NuisanceFit {
            fold_id: f,
            m_hat: fold.iter().map(|&i| 0.3 * noise[i]).collect(),
            ell_hat: fold.iter().map(|&i| 0.3 * noise[n + i]).collect(),
            g_hat: Some(fold.iter().map(|&i| 0.3 * noise[2 * n + i]).collect()),
        })
        .collect();
    (d, plan, nuis)
}

/// Intersection of the diagonals of a convex quadrilateral, its geometric median.
pub fn quad_median(p: [[f64; 2]; 4]) -> [f64; 2] {
    let ([ax, ay], [cx, cy]) = (p[0], p[2]);
    let ([bx, by], [dx, dy]) = (p[1], p[3]);
    let (r, s) = ([cx - ax, cy - ay], [dx - bx, dy - by]);
    let denom = r[0] * s[1] - r[1] * s[0];
    let u = ((bx - ax) * s[1] - (by - ay) * s[0]) / denom;
    [ax + u * r[0], ay + u * r[1]]
}
