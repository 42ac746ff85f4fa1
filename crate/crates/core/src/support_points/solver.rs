use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::energy::{dist, sq_dist, PointSet};
use crate::error::{Error, Result};
use crate::rng;

/// How the initial support points are chosen among the data rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SpInit {
    #[default]
    RandomRows,
    KMeansPlusPlusRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpConfig {
    pub n_points: usize,
    pub max_iter: usize,
    /// Relative change of the objective below which iteration stops.
    pub tol: f64,
    pub seed: u64,
    pub init: SpInit,
    /// Distances below this are dropped from the update weights.
    pub zero_dist_eps: f64,
    /// Whether the outcome column joins the splitting cloud.
    pub include_outcome: bool,
}

impl Default for SpConfig {
    fn default() -> Self {
        SpConfig {
            n_points: 1,
            max_iter: 200,
            tol: 1e-8,
            seed: 0,
            init: SpInit::RandomRows,
            zero_dist_eps: 1e-10,
            include_outcome: true,
        }
    }
}

impl SpConfig {
    pub fn with_points(&self, n_points: usize) -> SpConfig {
        SpConfig {
            n_points,
            ..self.clone()
        }
    }

    pub(crate) fn validate(&self, cloud_size: usize) -> Result<()> {
        if self.n_points == 0 || self.n_points > cloud_size {
            return Err(Error::InvalidConfig(format!(
                "n_points = {} must lie in [1, {cloud_size}]",
                self.n_points
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol = {} must be > 0", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.zero_dist_eps > 0.0) {
            return Err(Error::InvalidConfig("zero_dist_eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpResult {
    pub points: PointSet,
    /// Objective at the initialization followed by one value per accepted update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Row indices used as the starting configuration.
pub fn initial_rows(full: &PointSet, cfg: &SpConfig) -> Vec<usize> {
    let mut rng = rng::seeded(cfg.seed);
    match cfg.init {
        SpInit::RandomRows => index::sample(&mut rng, full.len(), cfg.n_points).into_vec(),
        SpInit::KMeansPlusPlusRows => kmeanspp_rows(full, cfg.n_points, &mut rng),
    }
}

fn kmeanspp_rows(full: &PointSet, k: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let n = full.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = full.rows().map(|r| sq_dist(r, full.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if target < w {
                        pick = Some(i);
                        break;
                    }
                    target -= w;
                }
            }
            // Rounding can exhaust the loop; fall back to the last positive weight.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            // All remaining rows duplicate a chosen one.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        let c = full.row(next);
        for (i, r) in full.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, c));
        }
    }
    chosen
}

/// One pass over the current points: the objective value there and the
/// majorization-minimization proposal for every point.
fn mm_pass(points: &[f64], n: usize, full: &PointSet, eps: f64) -> (f64, Vec<f64>) {
    let d = full.dim();
    let big_n = full.len();
    let repulsion = big_n as f64 / n as f64;

    struct PointUpdate {
        next: Vec<f64>,
        data_dist: f64,
        pair_dist: f64,
    }

    let updates: Vec<PointUpdate> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &points[i * d..(i + 1) * d];
            let mut weight = 0.0;
            let mut attract = vec![0.0; d];
            let mut data_dist = 0.0;
            for ym in full.rows() {
                let r = dist(xi, ym);
                data_dist += r;
                if r >= eps {
                    let w = 1.0 / r;
                    weight += w;
                    for (a, &y) in attract.iter_mut().zip(ym) {
                        *a += w * y;
                    }
                }
            }
            let mut push = vec![0.0; d];
            let mut pair_dist = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let xj = &points[j * d..(j + 1) * d];
                let r = dist(xi, xj);
                pair_dist += r;
                if r >= eps {
                    for ((p, &a), &b) in push.iter_mut().zip(xi).zip(xj) {
                        *p += (a - b) / r;
                    }
                }
            }
            let next = if weight > 0.0 {
                attract
                    .iter()
                    .zip(&push)
                    .map(|(a, p)| (a + repulsion * p) / weight)
                    .collect()
            } else {
                xi.to_vec()
            };
            PointUpdate {
                next,
                data_dist,
                pair_dist,
            }
        })
        .collect();

    let mut data_total = 0.0;
    let mut pair_total = 0.0;
    let mut next = Vec::with_capacity(n * d);
    for u in updates {
        data_total += u.data_dist;
        pair_total += u.pair_dist;
        next.extend_from_slice(&u.next);
    }
    let nf = n as f64;
    let objective = 2.0 * data_total / (nf * big_n as f64) - pair_total / (nf * nf);
    (objective, next)
}

const MAX_HALVINGS: usize = 12;

/// Minimizes the support-points criterion against `full` by
/// majorization-minimization, starting from rows picked per `cfg.init`.
pub fn compute_support_points(full: &PointSet, cfg: &SpConfig) -> Result<SpResult> {
    if full.is_empty() {
        return Err(Error::InvalidConfig("empty point cloud".into()));
    }
    cfg.validate(full.len())?;
    let start = full.select(&initial_rows(full, cfg));
    minimize_from(full, start, cfg)
}

/// Runs the solver from an explicit starting configuration.
pub fn compute_support_points_from(
    full: &PointSet,
    start: PointSet,
    cfg: &SpConfig,
) -> Result<SpResult> {
    if start.dim() != full.dim() {
        return Err(Error::DimensionMismatch(format!(
            "start has dimension {}, cloud has {}",
            start.dim(),
            full.dim()
        )));
    }
    cfg.with_points(start.len()).validate(full.len())?;
    minimize_from(full, start, cfg)
}

fn minimize_from(full: &PointSet, start: PointSet, cfg: &SpConfig) -> Result<SpResult> {
    let n = start.len();
    let d = full.dim();
    let eps = cfg.zero_dist_eps;
    let mut current = start.as_slice().to_vec();
    let (mut f, mut proposal) = mm_pass(&current, n, full, eps);
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        let mut candidate = proposal;
        let (mut f_cand, mut next_prop) = mm_pass(&candidate, n, full, eps);
        // Dropped zero-distance terms void the majorization for that step;
        // backtrack toward the current points until the objective does not rise.
        let mut halvings = 0;
        while f_cand > f && halvings < MAX_HALVINGS {
            for (c, &x) in candidate.iter_mut().zip(&current) {
                *c = x + 0.5 * (*c - x);
            }
            let pass = mm_pass(&candidate, n, full, eps);
            f_cand = pass.0;
            next_prop = pass.1;
            halvings += 1;
        }
        if f_cand > f {
            converged = true;
            break;
        }
        iterations += 1;
        let rel = (f - f_cand) / f.abs().max(f64::MIN_POSITIVE);
        current = candidate;
        f = f_cand;
        proposal = next_prop;
        trace.push(f);
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(SpResult {
        points: PointSet::from_row_major(current, d)?,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Assigns each support point, in order, to its nearest row of `full` not yet
/// taken. Ties go to the lowest row index.
pub fn snap_to_rows(points: &PointSet, full: &PointSet) -> Result<Vec<usize>> {
    if points.dim() != full.dim() {
        return Err(Error::DimensionMismatch(format!(
            "points have dimension {}, cloud has {}",
            points.dim(),
            full.dim()
        )));
    }
    if points.len() > full.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot snap {} points onto {} rows",
            points.len(),
            full.len()
        )));
    }
    let mut taken = vec![false; full.len()];
    let mut out = Vec::with_capacity(points.len());
    for p in points.rows() {
        let mut best: Option<(usize, f64)> = None;
        for (j, r) in full.rows().enumerate() {
            if taken[j] {
                continue;
            }
            let dj = sq_dist(p, r);
            if best.is_none_or(|(_, bd)| dj < bd) {
                best = Some((j, dj));
            }
        }
        let (j, _) = best.expect("fewer points than rows");
        taken[j] = true;
        out.push(j);
    }
    Ok(out)
}
