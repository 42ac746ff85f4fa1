//! Cross-fitted double machine learning for the partially linear model
//! `Y = Tβ₀ + g₀(X) + U`, `T = m₀(X) + V`.
//!
//! Both supported scores are linear in β, `ψ = ψᵃβ + ψᵇ`, so every estimator
//! reduces to ratios of fold means of `ψᵃ` and `ψᵇ`:
//!
//! * DML1 solves the moment condition fold by fold and averages the K roots.
//! * DML2 solves the fold-averaged moment condition once.
//!
//! The variance is `σ̂² = Ĵ₀⁻² · (1/K)Σₖ Eₙ,ₖ[ψ²]` with `Ĵ₀ = (1/K)Σₖ Eₙ,ₖ[ψᵃ]`,
//! evaluated at the reported β, and the interval is `β ± z₁₋α/₂ σ̂/√N`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::{select, Regressor};
use crate::support_points::FoldPlan;

/// Threshold on |mean ψᵃ| and |Ĵ₀| below which the treatment carries no
/// residual variation.
pub const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `ψ = (Y − ℓ(X) − β(T − m(X)))(T − m(X))` with `ℓ = E[Y|X]`.
    #[default]
    PartiallingOut,
    /// `ψ = (Y − g(X) − βT)(T − m(X))`.
    IvType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmlAlgorithm {
    Dml1,
    #[default]
    Dml2,
}

/// Out-of-fold nuisance predictions for the rows of one fold, in fold order.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub fold_id: usize,
    /// Predictions of `E[T|X]`.
    pub m_hat: Vec<f64>,
    /// Predictions of `E[Y|X]`.
    pub ell_hat: Vec<f64>,
    /// `ℓ̂ − β̂·m̂` with a preliminary partialling-out β̂; set for [`ScoreKind::IvType`].
    pub g_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub psi_a: Vec<f64>,
    pub psi_b: Vec<f64>,
    pub psi: Vec<f64>,
}

/// Evaluates the score decomposition row by row.
pub fn score_components(
    y: &[f64],
    t: &[f64],
    nuis: &NuisanceFit,
    kind: ScoreKind,
    beta: f64,
) -> Result<Scores> {
    let n = y.len();
    let outcome = match kind {
        ScoreKind::PartiallingOut => &nuis.ell_hat,
        ScoreKind::IvType => nuis.g_hat.as_ref().ok_or_else(|| {
            Error::DimensionMismatch("IV-type score needs g_hat predictions".into())
        })?,
    };
    if t.len() != n || nuis.m_hat.len() != n || outcome.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "score inputs disagree in length: y {n}, t {}, m_hat {}, outcome nuisance {}",
            t.len(),
            nuis.m_hat.len(),
            outcome.len()
        )));
    }
    let mut s = Scores {
        psi_a: Vec::with_capacity(n),
        psi_b: Vec::with_capacity(n),
        psi: Vec::with_capacity(n),
    };
    for i in 0..n {
        let t_res = t[i] - nuis.m_hat[i];
        let (a, b) = match kind {
            ScoreKind::PartiallingOut => (-t_res * t_res, (y[i] - outcome[i]) * t_res),
            ScoreKind::IvType => (-t[i] * t_res, (y[i] - outcome[i]) * t_res),
        };
        s.psi_a.push(a);
        s.psi_b.push(b);
        s.psi.push(a * beta + b);
    }
    Ok(s)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_nuisances(d: &Dataset, plan: &FoldPlan, nuis: &[NuisanceFit]) -> Result<()> {
    if plan.n() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "fold plan covers {} rows, dataset has {}",
            plan.n(),
            d.n()
        )));
    }
    if nuis.len() != plan.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} nuisance fits for {} folds",
            nuis.len(),
            plan.k()
        )));
    }
    Ok(())
}

/// Scores of every fold, in fold order.
fn fold_scores(
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
    beta: f64,
) -> Result<Vec<Scores>> {
    check_nuisances(d, plan, nuis)?;
    plan.folds()
        .iter()
        .zip(nuis)
        .map(|(fold, nf)| score_components(&select(d.y(), fold), &select(d.t(), fold), nf, kind, beta))
        .collect()
}

/// Fits the nuisance regressions on each fold's complement and predicts on the
/// fold. For the IV-type score, `ĝ = ℓ̂ − β̂·m̂` where β̂ is the partialling-out
/// DML2 estimate on the same folds.
pub fn fit_nuisances_crossfit(
    d: &Dataset,
    plan: &FoldPlan,
    learner_m: &dyn Regressor,
    learner_ell: &dyn Regressor,
    kind: ScoreKind,
) -> Result<Vec<NuisanceFit>> {
    if plan.n() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "fold plan covers {} rows, dataset has {}",
            plan.n(),
            d.n()
        )));
    }
    for k in 0..plan.k() {
        let complement = d.n() - plan.fold(k).len();
        if complement < 2 {
            return Err(Error::FoldTooSmall { fold: k, complement });
        }
    }
    let mut fits = (0..plan.k())
        .into_par_iter()
        .map(|k| {
            let train = plan.complement(k);
            let eval = plan.fold(k);
            let x_train = d.x().select_rows(&train);
            let x_eval = d.x().select_rows(eval);
            let m = learner_m.fit_predictor(&x_train, &select(d.t(), &train))?;
            let ell = learner_ell.fit_predictor(&x_train, &select(d.y(), &train))?;
            Ok(NuisanceFit {
                fold_id: k,
                m_hat: m.predict(&x_eval)?,
                ell_hat: ell.predict(&x_eval)?,
                g_hat: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if kind == ScoreKind::IvType {
        let prelim = dml2_beta(d, plan, &fits, ScoreKind::PartiallingOut)?;
        for f in &mut fits {
            f.g_hat = Some(
                f.ell_hat
                    .iter()
                    .zip(&f.m_hat)
                    .map(|(l, m)| l - prelim * m)
                    .collect(),
            );
        }
    }
    Ok(fits)
}

/// Two-sided normal interval half-width multiplier `Φ⁻¹(1 − α/2)`.
pub fn normal_quantile_multiplier(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(1.0 - alpha / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// `β ± Φ⁻¹(1 − α/2)·√(σ̂²/N)`.
pub fn confidence_interval(beta: f64, sigma2_hat: f64, n_total: usize, alpha: f64) -> Result<(f64, f64)> {
    let z = normal_quantile_multiplier(alpha)?;
    if !(sigma2_hat >= 0.0) {
        return Err(Error::InvalidConfig(format!("variance {sigma2_hat} must be >= 0")));
    }
    if n_total == 0 {
        return Err(Error::InvalidConfig("interval needs n_total >= 1".into()));
    }
    let half = z * (sigma2_hat / n_total as f64).sqrt();
    Ok((beta - half, beta + half))
}

/// `(σ̂², Ĵ₀)` with scores evaluated at `est_beta`.
pub fn variance_estimate(
    est_beta: f64,
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
) -> Result<(f64, f64)> {
    let scores = fold_scores(d, plan, nuis, kind, est_beta)?;
    let k = scores.len() as f64;
    let j_hat = scores.iter().map(|s| mean(&s.psi_a)).sum::<f64>() / k;
    if !(j_hat.abs() > DEGENERACY_TOL) {
        return Err(Error::DegenerateJacobian(j_hat));
    }
    let second_moment = scores
        .iter()
        .map(|s| s.psi.iter().map(|v| v * v).sum::<f64>() / s.psi.len() as f64)
        .sum::<f64>()
        / k;
    Ok((second_moment / (j_hat * j_hat), j_hat))
}

/// Point estimate, sandwich variance and interval for one fold plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmlEstimate {
    pub beta: f64,
    pub sigma_hat: f64,
    /// `σ̂/√N`.
    pub se: f64,
    pub n_total: usize,
    pub k: usize,
    pub algorithm: DmlAlgorithm,
    pub score: ScoreKind,
    /// Fold-wise roots; DML1 only.
    pub per_fold_beta: Option<Vec<f64>>,
    pub ci: ConfidenceInterval,
    pub j_hat: f64,
}

#[allow(clippy::too_many_arguments)]
fn finish(
    beta: f64,
    per_fold_beta: Option<Vec<f64>>,
    algorithm: DmlAlgorithm,
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
    alpha: f64,
) -> Result<DmlEstimate> {
    let (sigma2, j_hat) = variance_estimate(beta, d, plan, nuis, kind)?;
    let (lo, hi) = confidence_interval(beta, sigma2, d.n(), alpha)?;
    let sigma_hat = sigma2.sqrt();
    Ok(DmlEstimate {
        beta,
        sigma_hat,
        se: sigma_hat / (d.n() as f64).sqrt(),
        n_total: d.n(),
        k: plan.k(),
        algorithm,
        score: kind,
        per_fold_beta,
        ci: ConfidenceInterval { lo, hi, alpha },
        j_hat,
    })
}

fn fold_means(d: &Dataset, plan: &FoldPlan, nuis: &[NuisanceFit], kind: ScoreKind) -> Result<Vec<(f64, f64)>> {
    Ok(fold_scores(d, plan, nuis, kind, 0.0)?
        .iter()
        .map(|s| (mean(&s.psi_a), mean(&s.psi_b)))
        .collect())
}

fn dml2_beta(d: &Dataset, plan: &FoldPlan, nuis: &[NuisanceFit], kind: ScoreKind) -> Result<f64> {
    let means = fold_means(d, plan, nuis, kind)?;
    let sum_a: f64 = means.iter().map(|m| m.0).sum();
    let sum_b: f64 = means.iter().map(|m| m.1).sum();
    if !(sum_a.abs() / means.len() as f64 > DEGENERACY_TOL) {
        return Err(Error::DegenerateAggregate(sum_a / means.len() as f64));
    }
    Ok(-sum_b / sum_a)
}

/// DML1: solve `Eₙ,ₖ[ψ] = 0` on each fold, then average the roots.
pub fn dml1_estimate(
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
    alpha: f64,
) -> Result<DmlEstimate> {
    let means = fold_means(d, plan, nuis, kind)?;
    let per_fold = means
        .iter()
        .enumerate()
        .map(|(fold, &(a, b))| {
            if !(a.abs() > DEGENERACY_TOL) {
                Err(Error::DegenerateFold { fold, mean_psi_a: a })
            } else {
                Ok(-b / a)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let beta = mean(&per_fold);
    finish(beta, Some(per_fold), DmlAlgorithm::Dml1, d, plan, nuis, kind, alpha)
}

/// DML2: solve `(1/K)Σₖ Eₙ,ₖ[ψ] = 0` once.
pub fn dml2_estimate(
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
    alpha: f64,
) -> Result<DmlEstimate> {
    let beta = dml2_beta(d, plan, nuis, kind)?;
    finish(beta, None, DmlAlgorithm::Dml2, d, plan, nuis, kind, alpha)
}

pub fn dml_estimate(
    algorithm: DmlAlgorithm,
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
    alpha: f64,
) -> Result<DmlEstimate> {
    match algorithm {
        DmlAlgorithm::Dml1 => dml1_estimate(d, plan, nuis, kind, alpha),
        DmlAlgorithm::Dml2 => dml2_estimate(d, plan, nuis, kind, alpha),
    }
}

/// Cross-fits the nuisances and returns the estimate in one call.
pub fn estimate(
    d: &Dataset,
    plan: &FoldPlan,
    learner_m: &dyn Regressor,
    learner_ell: &dyn Regressor,
    kind: ScoreKind,
    algorithm: DmlAlgorithm,
    alpha: f64,
) -> Result<DmlEstimate> {
    normal_quantile_multiplier(alpha)?;
    let nuis = fit_nuisances_crossfit(d, plan, learner_m, learner_ell, kind)?;
    dml_estimate(algorithm, d, plan, &nuis, kind, alpha)
}

/// Which nuisance a perturbation moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceTarget {
    /// `m̂`, the treatment regression.
    Treatment,
    /// `ℓ̂` (partialling-out) or `ĝ` (IV-type).
    Outcome,
}

/// Absolute central-difference derivative of the fold-averaged mean score at
/// the DML2 estimate when `m̂` is shifted by `r·1`.
pub fn orthogonality_diagnostic(
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
    eps: f64,
) -> Result<f64> {
    let ones = vec![1.0; d.n()];
    orthogonality_diagnostic_along(d, plan, nuis, kind, eps, NuisanceTarget::Treatment, &ones)
}

/// Same as [`orthogonality_diagnostic`] for an arbitrary target and direction
/// (`direction` is indexed by dataset row).
pub fn orthogonality_diagnostic_along(
    d: &Dataset,
    plan: &FoldPlan,
    nuis: &[NuisanceFit],
    kind: ScoreKind,
    eps: f64,
    target: NuisanceTarget,
    direction: &[f64],
) -> Result<f64> {
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(Error::InvalidConfig(format!("eps {eps} must lie in (0, 0.1]")));
    }
    if direction.len() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} entries for {} rows",
            direction.len(),
            d.n()
        )));
    }
    let beta = dml2_beta(d, plan, nuis, kind)?;
    let mean_score = |r: f64| -> Result<f64> {
        let shifted: Vec<NuisanceFit> = nuis
            .iter()
            .zip(plan.folds())
            .map(|(nf, fold)| {
                let mut nf = nf.clone();
                let shift = |v: &mut Vec<f64>| {
                    for (x, &i) in v.iter_mut().zip(fold) {
                        *x += r * direction[i];
                    }
                };
                match (target, kind) {
                    (NuisanceTarget::Treatment, _) => shift(&mut nf.m_hat),
                    (NuisanceTarget::Outcome, ScoreKind::PartiallingOut) => shift(&mut nf.ell_hat),
                    (NuisanceTarget::Outcome, ScoreKind::IvType) => {
                        if let Some(g) = nf.g_hat.as_mut() {
                            shift(g);
                        }
                    }
                }
                nf
            })
            .collect();
        let scores = fold_scores(d, plan, &shifted, kind, beta)?;
        Ok(scores.iter().map(|s| mean(&s.psi)).sum::<f64>() / scores.len() as f64)
    };
    Ok(((mean_score(eps)? - mean_score(-eps)?) / (2.0 * eps)).abs())
}
