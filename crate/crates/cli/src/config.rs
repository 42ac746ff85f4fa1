//! Sectioned `key = value` run configuration.
//!
//! ```ini
//! [data]
//! path = obs.csv
//! outcome = y
//! treatment = t
//! covariates = x1, x2, x3     ; or * for every other column
//!
//! [split]
//! method = spss               ; spss | random
//! test_fraction = 0.2
//! k = 2
//! seed = 7
//! sp.max_iter = 200
//! sp.tol = 1e-8
//!
//! [learner_m]
//! kind = super
//! candidates = ridge, lasso, mlp
//! ridge.lambda = 1
//! mlp.hidden = 16
//!
//! [dml]
//! algorithm = dml2            ; dml1 | dml2
//! score = partialling_out     ; partialling_out | iv_type
//! alpha = 0.05
//!
//! [simulate]
//! scenario = S1, S2
//! p_list = 20
//! n_list = 100, 1000
//! reps = 500
//! master_seed = 1
//! splitters = spss, random
//!
//! [runtime]
//! threads = 4
//! ```
//!
//! `[learner_ell]` falls back to `[learner_m]` when absent.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dml_spss::dml::{DmlAlgorithm, ScoreKind};
use dml_spss::learners::{
    Activation, CvBlocks, EnsembleMode, KernelLoss, LearnerSpec, MlpSpec, SuperLearnerSpec,
};
use dml_spss::simulate::{NuisanceLearner, Scenario, Splitter};
use dml_spss::support_points::{SpConfig, SpInit};
use dml_spss::{Error, Result};
use ini::Ini;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariates {
    Named(Vec<String>),
    /// Every header column other than the outcome and treatment.
    Rest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub outcome: String,
    pub treatment: String,
    pub covariates: Covariates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSection {
    pub method: Splitter,
    pub test_fraction: f64,
    pub k: usize,
    pub seed: u64,
    pub sp: SpConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmlSection {
    pub algorithm: DmlAlgorithm,
    pub score: ScoreKind,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSection {
    pub scenarios: Vec<Scenario>,
    pub p_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub master_seed: u64,
    pub splitters: Vec<Splitter>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<DataSection>,
    pub split: SplitSection,
    pub learner_m: NuisanceLearner,
    pub learner_ell: NuisanceLearner,
    pub dml: DmlSection,
    pub simulate: SimulateSection,
    pub threads: Option<usize>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

/// Keys of one section; every key must be consumed before [`Section::finish`].
struct Section {
    name: String,
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Section {
    fn new(name: &str, values: BTreeMap<String, String>) -> Self {
        Section {
            name: name.to_string(),
            values,
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.values.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| bad(format!("[{}] {key} = '{v}' is not valid", self.name))),
        }
    }

    fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| bad(format!("[{}] {key}: '{s}' is not valid", self.name)))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let v = v.trim().to_ascii_lowercase();
                options
                    .iter()
                    .find(|(name, _)| *name == v)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| {
                        let names: Vec<&str> = options.iter().map(|o| o.0).collect();
                        bad(format!(
                            "[{}] {key} = '{v}' must be one of {}",
                            self.name,
                            names.join(", ")
                        ))
                    })
            }
        }
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.raw(key)
            .map(|v| v.trim().to_string())
            .ok_or_else(|| bad(format!("[{}] is missing '{key}'", self.name)))
    }

    /// Keys starting with `prefix.`, with the prefix stripped, as a new section.
    fn take_prefixed(&mut self, prefix: &str) -> Section {
        let lead = format!("{prefix}.");
        let mut values = BTreeMap::new();
        for (k, v) in &self.values {
            if let Some(rest) = k.strip_prefix(&lead) {
                values.insert(rest.to_string(), v.clone());
                self.used.insert(k.clone());
            }
        }
        Section::new(&format!("{}.{prefix}", self.name), values)
    }

    fn finish(self) -> Result<()> {
        match self.values.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(bad(format!("[{}] unknown key '{k}'", self.name))),
            None => Ok(()),
        }
    }
}

fn parse_data(mut s: Section) -> Result<DataSection> {
    let path = s.raw("path").map(|p| PathBuf::from(p.trim()));
    let outcome = s.required("outcome")?;
    let treatment = s.required("treatment")?;
    let covariates = match s.raw("covariates") {
        None => Covariates::Rest,
        Some(v) if v.trim() == "*" => Covariates::Rest,
        Some(v) => Covariates::Named(
            v.split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect(),
        ),
    };
    s.finish()?;
    Ok(DataSection {
        path,
        outcome,
        treatment,
        covariates,
    })
}

fn parse_split(mut s: Section) -> Result<SplitSection> {
    let method = s.choice(
        "method",
        Splitter::Spss,
        &[("spss", Splitter::Spss), ("random", Splitter::RandomKfold)],
    )?;
    let test_fraction = s.get_or("test_fraction", 0.2)?;
    let k = s.get_or("k", 2)?;
    let seed = s.get_or("seed", 0)?;
    let mut sp = SpConfig::default();
    let mut sub = s.take_prefixed("sp");
    sp.max_iter = sub.get_or("max_iter", sp.max_iter)?;
    sp.tol = sub.get_or("tol", sp.tol)?;
    sp.include_outcome = sub.get_or("include_outcome", sp.include_outcome)?;
    sp.init = sub.choice(
        "init",
        sp.init,
        &[("random", SpInit::RandomRows), ("kmeans++", SpInit::KMeansPlusPlusRows)],
    )?;
    sub.finish()?;
    s.finish()?;
    if sp.max_iter == 0 || !(sp.tol > 0.0) {
        return Err(bad("[split] sp.max_iter must be > 0 and sp.tol > 0"));
    }
    Ok(SplitSection {
        method,
        test_fraction,
        k,
        seed,
        sp,
    })
}

fn parse_learner_kind(s: &mut Section, kind: &str, nested: bool) -> Result<LearnerSpec> {
    let spec = match kind {
        "constant" => LearnerSpec::Constant {
            value: s.get_or("value", 0.0)?,
        },
        "ridge" => LearnerSpec::ridge(s.get_or("lambda", 1.0)?),
        "lasso" => {
            let LearnerSpec::Lasso {
                lambda,
                max_iter,
                tol,
            } = LearnerSpec::lasso(0.01)
            else {
                unreachable!()
            };
            LearnerSpec::Lasso {
                lambda: s.get_or("lambda", lambda)?,
                max_iter: s.get_or("max_iter", max_iter)?,
                tol: s.get_or("tol", tol)?,
            }
        }
        "kernel" => {
            let bandwidth = s.get_or("bandwidth", 0.05)?;
            let lambda = s.get_or("lambda", 1.0)?;
            let loss = s.choice("loss", "squared", &[("squared", "squared"), ("epsilon", "epsilon")])?;
            let loss = if loss == "squared" {
                KernelLoss::Squared
            } else {
                KernelLoss::EpsilonInsensitive {
                    epsilon: s.get_or("epsilon", 0.1)?,
                    c: s.get_or("c", 1.0)?,
                    max_iter: s.get_or("max_iter", 1000)?,
                }
            };
            LearnerSpec::KernelMachine {
                bandwidth,
                lambda,
                loss,
            }
        }
        "mlp" => {
            let d = MlpSpec::default();
            LearnerSpec::Mlp(MlpSpec {
                hidden: s.list("hidden")?.unwrap_or(d.hidden),
                activation: s.choice(
                    "activation",
                    d.activation,
                    &[("relu", Activation::Relu), ("tanh", Activation::Tanh)],
                )?,
                step_size: s.get_or("step_size", d.step_size)?,
                epochs: s.get_or("epochs", d.epochs)?,
                batch: s.get_or("batch", d.batch)?,
                seed: s.get_or("seed", d.seed)?,
                l2: s.get_or("l2", d.l2)?,
            })
        }
        "super" if !nested => {
            let names: Vec<String> = s
                .list("candidates")?
                .ok_or_else(|| bad(format!("[{}] super learner needs 'candidates'", s.name)))?;
            let mut candidates = Vec::with_capacity(names.len());
            for name in &names {
                let mut sub = s.take_prefixed(name);
                candidates.push(parse_learner_kind(&mut sub, name, true)?);
                sub.finish()?;
            }
            let d = SuperLearnerSpec::default();
            LearnerSpec::SuperLearner(SuperLearnerSpec {
                candidates,
                v_blocks: s.get_or("v_blocks", d.v_blocks)?,
                mode: s.choice(
                    "mode",
                    d.mode,
                    &[("selector", EnsembleMode::Selector), ("convex", EnsembleMode::ConvexWeights)],
                )?,
                seed: s.get_or("seed", d.seed)?,
                blocks: s.choice(
                    "blocks",
                    d.blocks,
                    &[("random", CvBlocks::Random), ("spss", CvBlocks::SupportPoints)],
                )?,
            })
        }
        other => return Err(bad(format!("[{}] unknown learner kind '{other}'", s.name))),
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_learner(mut s: Section) -> Result<NuisanceLearner> {
    let kind = s.required("kind")?.to_ascii_lowercase();
    let learner = if kind == "oracle" {
        NuisanceLearner::Oracle
    } else {
        NuisanceLearner::Spec(parse_learner_kind(&mut s, &kind, false)?)
    };
    s.finish()?;
    Ok(learner)
}

fn parse_dml(mut s: Section) -> Result<DmlSection> {
    let algorithm = s.choice(
        "algorithm",
        DmlAlgorithm::Dml2,
        &[("dml1", DmlAlgorithm::Dml1), ("dml2", DmlAlgorithm::Dml2)],
    )?;
    let score = s.choice(
        "score",
        ScoreKind::PartiallingOut,
        &[
            ("partialling_out", ScoreKind::PartiallingOut),
            ("iv_type", ScoreKind::IvType),
        ],
    )?;
    let alpha = s.get_or("alpha", 0.05)?;
    s.finish()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(DmlSection {
        algorithm,
        score,
        alpha,
    })
}

fn parse_simulate(mut s: Section, default_splitter: Splitter) -> Result<SimulateSection> {
    let sim = SimulateSection {
        scenarios: s.list("scenario")?.unwrap_or(vec![Scenario::S1]),
        p_list: s.list("p_list")?.unwrap_or(vec![20]),
        n_list: s.list("n_list")?.unwrap_or(vec![100]),
        reps: s.get_or("reps", 500)?,
        master_seed: s.get_or("master_seed", 0)?,
        splitters: s.list("splitters")?.unwrap_or(vec![default_splitter]),
    };
    s.finish()?;
    if sim.scenarios.is_empty() || sim.p_list.is_empty() || sim.n_list.is_empty() || sim.splitters.is_empty() {
        return Err(bad("[simulate] scenario, p_list, n_list and splitters must not be empty"));
    }
    if sim.reps < 2 {
        return Err(bad(format!("[simulate] reps = {} but at least 2 are needed", sim.reps)));
    }
    Ok(sim)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let ini = Ini::load_from_str(text).map_err(|e| bad(format!("config syntax: {e}")))?;
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let values: BTreeMap<String, String> =
                props.iter().map(|(k, v)| (k.trim().to_string(), v.to_string())).collect();
            match name {
                None if values.is_empty() => continue,
                None => return Err(bad("keys outside any section")),
                Some(n) => {
                    let n = n.trim();
                    const KNOWN: [&str; 7] =
                        ["data", "split", "learner_m", "learner_ell", "dml", "simulate", "runtime"];
                    if !KNOWN.contains(&n) {
                        return Err(bad(format!("unknown section [{n}]")));
                    }
                    if sections.insert(n.to_string(), Section::new(n, values)).is_some() {
                        return Err(bad(format!("section [{n}] appears twice")));
                    }
                }
            }
        }
        let mut take = |name: &str| sections.remove(name);

        let data = take("data").map(parse_data).transpose()?;
        let split = parse_split(take("split").unwrap_or_else(|| Section::new("split", BTreeMap::new())))?;
        let learner_m = match take("learner_m") {
            Some(s) => parse_learner(s)?,
            None => NuisanceLearner::Spec(LearnerSpec::ridge(1.0)),
        };
        let learner_ell = match take("learner_ell") {
            Some(s) => parse_learner(s)?,
            None => learner_m.clone(),
        };
        let dml = parse_dml(take("dml").unwrap_or_else(|| Section::new("dml", BTreeMap::new())))?;
        let simulate = parse_simulate(
            take("simulate").unwrap_or_else(|| Section::new("simulate", BTreeMap::new())),
            split.method,
        )?;
        let threads = match take("runtime") {
            Some(mut s) => {
                let t: Option<usize> = s.get("threads")?;
                s.finish()?;
                if t == Some(0) {
                    return Err(bad("[runtime] threads must be >= 1"));
                }
                t
            }
            None => None,
        };
        Ok(RunConfig {
            data,
            split,
            learner_m,
            learner_ell,
            dml,
            simulate,
            threads,
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::parse(&text)
    }

    pub fn defaults() -> RunConfig {
        RunConfig::parse("").expect("empty config is valid")
    }
}
