//! Simulation scenarios for the partially linear model and the Monte Carlo
//! harness that turns replications into one report row.

use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dml::{estimate, DmlAlgorithm, ScoreKind};
use crate::error::{Error, Result};
use crate::learners::{LearnerSpec, Predictor, Regressor};
use crate::rng::{derive_seed, seeded};
use crate::support_points::{random_kfold, spss_kfold, FoldPlan, SpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" | "1" => Ok(Scenario::S1),
            "S2" | "2" => Ok(Scenario::S2),
            _ => Err(Error::InvalidConfig(format!("unknown scenario '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub p: usize,
    pub n: usize,
    pub beta0: f64,
    /// AR(1) correlation of the covariates.
    pub rho: f64,
    /// Correlation of the outcome and treatment errors.
    pub uv_corr: f64,
    /// 1-based covariate entering linearly.
    pub linear_coord: usize,
    /// 1-based covariate entering through the logistic term; clamped to `p`.
    pub logistic_coord: usize,
    /// Multiplies both error terms; 0 gives a noiseless design.
    pub noise_scale: f64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, p: usize, n: usize) -> Self {
        let (rho, uv_corr) = match scenario {
            Scenario::S1 => (0.7, 0.0),
            Scenario::S2 => (0.5, 0.3),
        };
        ScenarioConfig {
            scenario,
            p,
            n,
            beta0: 0.5,
            rho,
            uv_corr,
            linear_coord: 1,
            logistic_coord: 3,
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n < 2 {
            return Err(Error::InvalidConfig(format!(
                "scenario needs p >= 1 and n >= 2, got p = {}, n = {}",
                self.p, self.n
            )));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidRho(self.rho));
        }
        if !(self.uv_corr.abs() <= 1.0) {
            return Err(Error::InvalidConfig(format!("uv_corr {} outside [-1, 1]", self.uv_corr)));
        }
        if self.linear_coord == 0 || self.linear_coord > self.p || self.logistic_coord == 0 {
            return Err(Error::InvalidConfig(format!(
                "coordinates ({}, {}) invalid for p = {}",
                self.linear_coord, self.logistic_coord, self.p
            )));
        }
        if !self.beta0.is_finite() || !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidConfig("beta0 must be finite and noise_scale >= 0".into()));
        }
        Ok(())
    }

    fn coords(&self) -> (usize, usize) {
        (self.linear_coord - 1, self.logistic_coord.min(self.p) - 1)
    }
}

/// `Σ_kj = ρ^|j−k|`.
pub fn ar1_covariance(rho: f64, p: usize) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidRho(rho));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32)))
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `(g₀(x), m₀(x))`.
pub fn nuisance_truth(x_row: &[f64], cfg: &ScenarioConfig) -> (f64, f64) {
    let (lin, logi) = cfg.coords();
    let l = logistic(x_row[logi]);
    (l + 0.25 * x_row[lin], x_row[lin] + 0.25 * l)
}

/// True nuisance values behind a drawn dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta0: f64,
    pub g0: Vec<f64>,
    pub m0: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// `X ~ N(0, Σ)`, `T = m₀(X) + V`, `Y = Tβ₀ + g₀(X) + U`.
pub fn draw_dataset(cfg: &ScenarioConfig, seed: u64) -> Result<(Dataset, Truth)> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let chol = ar1_covariance(cfg.rho, p)?
        .cholesky()
        .ok_or_else(|| Error::Cholesky("covariate covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = seeded(seed);
    let mut z = DMatrix::zeros(n, p);
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let uv_tail = (1.0 - cfg.uv_corr * cfg.uv_corr).sqrt();
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        u.push(cfg.noise_scale * e1);
        v.push(cfg.noise_scale * (cfg.uv_corr * e1 + uv_tail * e2));
    }
    let x = z * l.transpose();
    let mut g0 = Vec::with_capacity(n);
    let mut m0 = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = x[(i, j)];
        }
        let (g, m) = nuisance_truth(&row, cfg);
        let ti = m + v[i];
        g0.push(g);
        m0.push(m);
        t.push(ti);
        y.push(ti * cfg.beta0 + g + u[i]);
    }
    let d = Dataset::new(y, t, x)?;
    Ok((
        d,
        Truth {
            beta0: cfg.beta0,
            g0,
            m0,
            u,
            v,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleTarget {
    /// `m₀(x)`.
    M0,
    /// `β₀m₀(x) + g₀(x)`, the regression of Y on X.
    Ell,
    /// `g₀(x)`.
    G0,
}

/// Ignores the training data and predicts a true nuisance function.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRegressor {
    pub scenario: ScenarioConfig,
    pub target: OracleTarget,
}

impl Predictor for OracleRegressor {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.scenario.p {
            return Err(Error::DimensionMismatch(format!(
                "oracle expects {} covariates, got {}",
                self.scenario.p,
                x.ncols()
            )));
        }
        let mut row = vec![0.0; x.ncols()];
        Ok((0..x.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(i, j)];
                }
                let (g, m) = nuisance_truth(&row, &self.scenario);
                match self.target {
                    OracleTarget::M0 => m,
                    OracleTarget::Ell => self.scenario.beta0 * m + g,
                    OracleTarget::G0 => g,
                }
            })
            .collect())
    }
}

impl Regressor for OracleRegressor {
    fn fit_predictor(&self, _x: &DMatrix<f64>, _y: &[f64]) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceLearner {
    Spec(LearnerSpec),
    /// The true nuisance function of the simulated scenario.
    Oracle,
}

impl NuisanceLearner {
    fn label(&self) -> String {
        match self {
            NuisanceLearner::Spec(s) => s.label(),
            NuisanceLearner::Oracle => "oracle".into(),
        }
    }

    fn regressor(&self, scenario: &ScenarioConfig, target: OracleTarget) -> Box<dyn Regressor> {
        match self {
            NuisanceLearner::Spec(s) => Box::new(s.clone()),
            NuisanceLearner::Oracle => Box::new(OracleRegressor {
                scenario: scenario.clone(),
                target,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitter {
    #[default]
    Spss,
    RandomKfold,
}

impl fmt::Display for Splitter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Splitter::Spss => "spss",
            Splitter::RandomKfold => "random",
        })
    }
}

impl std::str::FromStr for Splitter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spss" | "support_points" => Ok(Splitter::Spss),
            "random" | "random_kfold" => Ok(Splitter::RandomKfold),
            _ => Err(Error::InvalidConfig(format!("unknown splitter '{s}'"))),
        }
    }
}

/// Builds the K-fold plan for `d`.
pub fn make_plan(d: &Dataset, splitter: Splitter, k: usize, seed: u64, sp: &SpConfig) -> Result<FoldPlan> {
    match splitter {
        Splitter::Spss => spss_kfold(d, k, &SpConfig { seed, ..sp.clone() }),
        Splitter::RandomKfold => random_kfold(d.n(), k, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub scenario: ScenarioConfig,
    pub reps: usize,
    pub k: usize,
    pub splitter: Splitter,
    pub learner_m: NuisanceLearner,
    pub learner_ell: NuisanceLearner,
    pub score: ScoreKind,
    pub algorithm: DmlAlgorithm,
    pub master_seed: u64,
    pub alpha: f64,
    /// Solver settings for the support-points splitter; the seed is replaced per replication.
    pub sp: SpConfig,
}

impl McConfig {
    pub fn new(scenario: ScenarioConfig, learner: NuisanceLearner) -> Self {
        McConfig {
            scenario,
            reps: 500,
            k: 2,
            splitter: Splitter::Spss,
            learner_m: learner.clone(),
            learner_ell: learner,
            score: ScoreKind::PartiallingOut,
            algorithm: DmlAlgorithm::Dml2,
            master_seed: 0,
            alpha: 0.05,
            sp: SpConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.reps < 2 {
            return Err(Error::InvalidConfig(format!("reps = {} but at least 2 are needed", self.reps)));
        }
        if self.k < 2 || 2 * self.k > self.scenario.n {
            return Err(Error::InvalidConfig(format!(
                "K = {} needs 2 <= K and 2K <= n = {}",
                self.k, self.scenario.n
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        for l in [&self.learner_m, &self.learner_ell] {
            if let NuisanceLearner::Spec(s) = l {
                s.validate()?;
            }
        }
        Ok(())
    }

    pub fn method_label(&self) -> String {
        let (m, l) = (self.learner_m.label(), self.learner_ell.label());
        let learners = if m == l { m } else { format!("{m}|{l}") };
        let alg = match self.algorithm {
            DmlAlgorithm::Dml1 => "dml1",
            DmlAlgorithm::Dml2 => "dml2",
        };
        let score = match self.score {
            ScoreKind::PartiallingOut => "po",
            ScoreKind::IvType => "iv",
        };
        format!("{alg}-{score}:{learners}")
    }

    /// Data seed and split seed of replication `rep`.
    pub fn rep_seeds(&self, rep: usize) -> (u64, u64) {
        let data = derive_seed(self.master_seed, 2 * rep as u64);
        (data, derive_seed(self.master_seed, 2 * rep as u64 + 1))
    }
}

/// One replication's estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub seed: u64,
    pub beta: f64,
    pub se: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub scenario: String,
    pub p: usize,
    pub n: usize,
    pub method: String,
    pub splitter: String,
    pub bias: f64,
    pub se: f64,
    pub se_adjusted: f64,
    pub mse: f64,
    pub coverage: f64,
    pub mean_model_se: f64,
    pub wall_time_s: f64,
    pub reps: usize,
    pub master_seed: u64,
}

impl SimulationRow {
    /// Same row with the timing column zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> SimulationRow {
        SimulationRow {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

fn run_rep(mc: &McConfig, rep: usize) -> Result<RepOutcome> {
    let (data_seed, split_seed) = mc.rep_seeds(rep);
    let (d, _) = draw_dataset(&mc.scenario, data_seed)?;
    let plan = make_plan(&d, mc.splitter, mc.k, split_seed, &mc.sp)?;
    let lm = mc.learner_m.regressor(&mc.scenario, OracleTarget::M0);
    let ll = mc.learner_ell.regressor(&mc.scenario, OracleTarget::Ell);
    let est = estimate(&d, &plan, lm.as_ref(), ll.as_ref(), mc.score, mc.algorithm, mc.alpha)?;
    Ok(RepOutcome {
        seed: data_seed,
        beta: est.beta,
        se: est.se,
        covered: est.ci.contains(mc.scenario.beta0),
    })
}

/// Every replication plus the aggregated row.
pub fn run_monte_carlo_detailed(mc: &McConfig) -> Result<(SimulationRow, Vec<RepOutcome>)> {
    mc.validate()?;
    let start = Instant::now();
    let outcomes: Vec<Result<RepOutcome>> = (0..mc.reps).into_par_iter().map(|r| run_rep(mc, r)).collect();
    let mut reps = Vec::with_capacity(mc.reps);
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => reps.push(v),
            Err(e) => {
                return Err(Error::Replication {
                    rep,
                    seed: mc.rep_seeds(rep).0,
                    source: Box::new(e),
                })
            }
        }
    }
    let r = reps.len() as f64;
    let mean_beta = reps.iter().map(|o| o.beta).sum::<f64>() / r;
    let bias = mean_beta - mc.scenario.beta0;
    let se = (reps.iter().map(|o| (o.beta - mean_beta).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
    let row = SimulationRow {
        scenario: mc.scenario.scenario.to_string(),
        p: mc.scenario.p,
        n: mc.scenario.n,
        method: mc.method_label(),
        splitter: mc.splitter.to_string(),
        bias,
        se,
        se_adjusted: se / (mc.scenario.n as f64).sqrt(),
        mse: bias * bias + se * se,
        coverage: reps.iter().filter(|o| o.covered).count() as f64 / r,
        mean_model_se: reps.iter().map(|o| o.se).sum::<f64>() / r,
        wall_time_s: start.elapsed().as_secs_f64(),
        reps: mc.reps,
        master_seed: mc.master_seed,
    };
    Ok((row, reps))
}

pub fn run_monte_carlo(mc: &McConfig) -> Result<SimulationRow> {
    Ok(run_monte_carlo_detailed(mc)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

pub const REPORT_COLUMNS: [&str; 14] = [
    "scenario",
    "p",
    "n",
    "method",
    "splitter",
    "bias",
    "se",
    "se_adjusted",
    "mse",
    "coverage",
    "mean_model_se",
    "wall_time_s",
    "reps",
    "master_seed",
];

/// Renders rows as CSV (reals to four decimals) or JSON (full precision).
pub fn emit_report(rows: &[SimulationRow], format: ReportFormat) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("report has no rows".into()));
    }
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(rows)
                .map_err(|e| Error::InvalidConfig(format!("cannot serialize report: {e}")))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS)?;
            let f = |v: f64| format!("{v:.4}");
            for r in rows {
                w.write_record([
                    r.scenario.clone(),
                    r.p.to_string(),
                    r.n.to_string(),
                    r.method.clone(),
                    r.splitter.clone(),
                    f(r.bias),
                    f(r.se),
                    f(r.se_adjusted),
                    f(r.mse),
                    f(r.coverage),
                    f(r.mean_model_se),
                    f(r.wall_time_s),
                    r.reps.to_string(),
                    r.master_seed.to_string(),
                ])?;
            }
            w.into_inner()
                .map_err(|e| Error::InvalidConfig(format!("cannot flush report: {e}")))
        }
    }
}
