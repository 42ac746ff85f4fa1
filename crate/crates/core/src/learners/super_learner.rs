use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, mean_squared_error, select, FittedModel, FittedParams, LearnerSpec, Predictor, Regressor};
use crate::data::standardize;
use crate::error::{Error, Result};
use crate::support_points::{random_kfold, spss_kfold_cloud, FoldPlan, PointSet, SpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Refit the candidate with the smallest cross-validated risk.
    #[default]
    Selector,
    /// Blend refits with simplex weights fitted to the cross-validated predictions.
    ConvexWeights,
}

/// How the validation blocks are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvBlocks {
    #[default]
    Random,
    /// Support-points folds on the standardized `(x, y)` cloud.
    SupportPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperLearnerSpec {
    pub candidates: Vec<LearnerSpec>,
    pub v_blocks: usize,
    pub mode: EnsembleMode,
    pub seed: u64,
    pub blocks: CvBlocks,
}

impl Default for SuperLearnerSpec {
    fn default() -> Self {
        SuperLearnerSpec {
            candidates: Vec::new(),
            v_blocks: 5,
            mode: EnsembleMode::Selector,
            seed: 0,
            blocks: CvBlocks::Random,
        }
    }
}

/// Cross-validation outcome of a super learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRiskReport {
    /// Mean validation MSE per candidate; infinite where the candidate failed to fit.
    pub risks: Vec<f64>,
    /// Candidate with the smallest risk, lowest index on ties.
    pub chosen: usize,
    pub weights: Vec<f64>,
}

fn block_plan(x: &DMatrix<f64>, y: &[f64], v_blocks: usize, blocks: CvBlocks, seed: u64) -> Result<FoldPlan> {
    let n = y.len();
    if v_blocks < 2 || v_blocks > n {
        return Err(Error::InvalidConfig(format!(
            "super learner needs 2 <= v_blocks <= n, got {v_blocks} for n = {n}"
        )));
    }
    match blocks {
        CvBlocks::Random => random_kfold(n, v_blocks, seed),
        CvBlocks::SupportPoints => {
            let joint = DMatrix::from_fn(n, x.ncols() + 1, |i, j| {
                if j < x.ncols() {
                    x[(i, j)]
                } else {
                    y[i]
                }
            });
            let (z, _) = standardize(&joint)?;
            let cfg = SpConfig {
                seed,
                ..SpConfig::default()
            };
            spss_kfold_cloud(&PointSet::from_matrix(&z)?, v_blocks, &cfg)
        }
    }
}

/// Out-of-block predictions of one candidate, in row order.
fn cross_validated(
    learner: &dyn Regressor,
    x: &DMatrix<f64>,
    y: &[f64],
    plan: &FoldPlan,
) -> Result<(f64, Vec<f64>)> {
    let mut preds = vec![0.0; y.len()];
    let mut risk = 0.0;
    for k in 0..plan.k() {
        let (train, valid) = (plan.complement(k), plan.fold(k));
        let model = learner.fit_predictor(&x.select_rows(&train), &select(y, &train))?;
        let p = model.predict(&x.select_rows(valid))?;
        risk += mean_squared_error(&p, &select(y, valid));
        for (&i, v) in valid.iter().zip(p) {
            preds[i] = v;
        }
    }
    Ok((risk / plan.k() as f64, preds))
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

const WEIGHT_TOL: f64 = 1e-8;
const WEIGHT_MAX_ITER: usize = 100_000;

/// Projected gradient on `min (1/(2n))‖y − Zw‖²` over the simplex, started
/// at the vertex `start`, so the result never fits worse than that candidate.
fn simplex_weights(z: &DMatrix<f64>, y: &[f64], start: usize) -> Vec<f64> {
    let m = z.ncols();
    let nf = y.len() as f64;
    let gram = z.tr_mul(z) / nf;
    let zy = z.tr_mul(&DVector::from_column_slice(y)) / nf;
    let lipschitz = gram.clone().symmetric_eigenvalues().max();
    let mut w = vec![0.0; m];
    w[start] = 1.0;
    if !(lipschitz > 0.0) {
        return w;
    }
    for _ in 0..WEIGHT_MAX_ITER {
        let wv = DVector::from_column_slice(&w);
        let grad = &gram * &wv - &zy;
        let step: Vec<f64> = w
            .iter()
            .zip(grad.iter())
            .map(|(wi, g)| wi - g / lipschitz)
            .collect();
        let next = project_simplex(&step);
        let change = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < WEIGHT_TOL {
            break;
        }
    }
    w
}

/// Cross-validates every candidate on shared blocks and derives the
/// selector choice and ensemble weights. No final refit happens here.
pub fn stack(
    candidates: &[&dyn Regressor],
    x: &DMatrix<f64>,
    y: &[f64],
    v_blocks: usize,
    mode: EnsembleMode,
    blocks: CvBlocks,
    seed: u64,
) -> Result<CvRiskReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidSpec("no candidates".into()));
    }
    let plan = block_plan(x, y, v_blocks, blocks, seed)?;
    let outcomes: Vec<Result<(f64, Vec<f64>)>> = candidates
        .par_iter()
        .map(|c| cross_validated(*c, x, y, &plan))
        .collect();

    let risks: Vec<f64> = outcomes
        .iter()
        .map(|o| o.as_ref().map_or(f64::INFINITY, |(r, _)| *r))
        .collect();
    let mut chosen = None;
    for (i, &r) in risks.iter().enumerate() {
        if r.is_finite() && chosen.is_none_or(|c: usize| r < risks[c]) {
            chosen = Some(i);
        }
    }
    let Some(chosen) = chosen else {
        // Every candidate failed; surface the first failure.
        let first = outcomes.into_iter().find_map(Result::err);
        return Err(first.unwrap_or_else(|| Error::InvalidSpec("no usable candidate".into())));
    };

    let weights = match mode {
        EnsembleMode::Selector => {
            let mut w = vec![0.0; candidates.len()];
            w[chosen] = 1.0;
            w
        }
        EnsembleMode::ConvexWeights => {
            let usable: Vec<usize> = (0..candidates.len()).filter(|&i| risks[i].is_finite()).collect();
            let z = DMatrix::from_fn(y.len(), usable.len(), |i, j| {
                outcomes[usable[j]].as_ref().expect("usable candidate").1[i]
            });
            let start = usable.iter().position(|&i| i == chosen).expect("chosen is usable");
            let local = simplex_weights(&z, y, start);
            let mut w = vec![0.0; candidates.len()];
            for (j, &i) in usable.iter().enumerate() {
                w[i] = local[j];
            }
            w
        }
    };
    Ok(CvRiskReport {
        risks,
        chosen,
        weights,
    })
}

pub(crate) fn fit_super_learner(
    sl: &SuperLearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
) -> Result<FittedParams> {
    let cands: Vec<&dyn Regressor> = sl.candidates.iter().map(|c| c as &dyn Regressor).collect();
    let report = stack(&cands, x, y, sl.v_blocks, sl.mode, sl.blocks, sl.seed)?;
    let members = report
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| Ok((w, fit(&sl.candidates[i], x, y)?)))
        .collect::<Result<Vec<(f64, FittedModel)>>>()?;
    Ok(FittedParams::Ensemble { report, members })
}

/// Super learner over arbitrary [`Regressor`]s.
pub struct StackedEnsemble {
    pub report: CvRiskReport,
    members: Vec<(f64, Box<dyn Predictor>)>,
}

impl Predictor for StackedEnsemble {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; x.nrows()];
        for (w, m) in &self.members {
            for (a, v) in acc.iter_mut().zip(m.predict(x)?) {
                *a += w * v;
            }
        }
        Ok(acc)
    }
}

pub fn fit_stacked(
    candidates: &[&dyn Regressor],
    x: &DMatrix<f64>,
    y: &[f64],
    v_blocks: usize,
    mode: EnsembleMode,
    seed: u64,
) -> Result<StackedEnsemble> {
    let report = stack(candidates, x, y, v_blocks, mode, CvBlocks::Random, seed)?;
    let mut members = Vec::new();
    for (i, &w) in report.weights.iter().enumerate() {
        if w > 0.0 {
            members.push((w, candidates[i].fit_predictor(x, y)?));
        }
    }
    Ok(StackedEnsemble { report, members })
}
