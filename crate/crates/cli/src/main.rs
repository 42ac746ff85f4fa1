#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use dml_spss::data::{csv_header, load_csv, load_matrix_csv, write_csv, ColumnSchema, Dataset};
use dml_spss::dml::{estimate, DmlAlgorithm, ScoreKind};
use dml_spss::learners::Regressor;
use dml_spss::rng::derive_seed;
use dml_spss::simulate::{
    emit_report, make_plan, run_monte_carlo, McConfig, NuisanceLearner, ReportFormat, ScenarioConfig,
};
use dml_spss::support_points::{
    energy_two_sample, random_split, splitting_cloud, spss_split_cloud, PointSet,
};
use dml_spss::{Error, ErrorClass, Result};
use serde_json::json;

use crate::config::{Covariates, DataSection, RunConfig};

#[derive(Parser)]
#[command(name = "dmlspss", version, about = "Double machine learning with support-points sample splitting")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (directory for `split`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Overrides the split seed (or the master seed for `simulate`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "DMLSPSS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Train/test split; writes train.csv, test.csv and split.json.
    Split {
        /// Input CSV; defaults to [data] path.
        input: Option<PathBuf>,
    },
    /// Cross-fitted DML estimate of the treatment effect.
    Estimate {
        input: Option<PathBuf>,
        /// Overrides [dml] alpha.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Monte Carlo study over the [simulate] grid.
    Simulate,
    /// Two-sample energy distance between the rows of two numeric CSVs.
    Energy { a: PathBuf, b: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| io_err(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn load_dataset(cfg: &RunConfig, input: Option<&Path>) -> Result<Dataset> {
    let data: &DataSection = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("a [data] section with outcome and treatment is required".into()))?;
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| data.path.clone())
        .ok_or_else(|| Error::InvalidConfig("no input CSV given and [data] path is unset".into()))?;
    let covariates = match &data.covariates {
        Covariates::Named(c) => c.clone(),
        Covariates::Rest => csv_header(&path)?
            .into_iter()
            .filter(|h| *h != data.outcome && *h != data.treatment)
            .collect(),
    };
    let schema = ColumnSchema {
        outcome: data.outcome.clone(),
        treatment: data.treatment.clone(),
        covariates,
    };
    load_csv(&path, &schema)
}

fn spec_learner(l: &NuisanceLearner, which: &str) -> Result<Box<dyn Regressor>> {
    match l {
        NuisanceLearner::Spec(s) => Ok(Box::new(s.clone())),
        NuisanceLearner::Oracle => Err(Error::InvalidConfig(format!(
            "[{which}] kind = oracle is only available to simulate"
        ))),
    }
}

fn cmd_split(cfg: &RunConfig, input: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let d = load_dataset(cfg, input)?;
    let s = &cfg.split;
    let cloud = splitting_cloud(&d, s.sp.include_outcome)?;
    let baseline = random_split(d.n(), s.test_fraction, derive_seed(s.seed, 1))?;
    let (split, trace, iterations, converged) = match s.method {
        dml_spss::simulate::Splitter::Spss => {
            let sp = dml_spss::support_points::SpConfig {
                seed: s.seed,
                ..s.sp.clone()
            };
            let (split, res) = spss_split_cloud(&cloud, s.test_fraction, &sp)?;
            (split, res.objective_trace, res.iterations, res.converged)
        }
        dml_spss::simulate::Splitter::RandomKfold => {
            (random_split(d.n(), s.test_fraction, s.seed)?, Vec::new(), 0, true)
        }
    };
    let energy_test = energy_two_sample(&cloud.select(&split.test_idx), &cloud)?;
    let energy_random = energy_two_sample(&cloud.select(&baseline.test_idx), &cloud)?;

    let dir = out.unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, idx) in [("train.csv", &split.train_idx), ("test.csv", &split.test_idx)] {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_csv(&d.subset_rows(idx)?, file)?;
    }
    let report = json!({
        "method": s.method.to_string(),
        "seed": s.seed,
        "test_fraction": s.test_fraction,
        "n_train": split.train_idx.len(),
        "n_test": split.test_idx.len(),
        "test_idx": split.test_idx,
        "objective_trace": trace,
        "iterations": iterations,
        "converged": converged,
        "energy_test_vs_full": energy_test,
        "energy_random_vs_full": energy_random,
    });
    let path = dir.join("split.json");
    let text = serde_json::to_string_pretty(&report).expect("json values serialize");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

fn cmd_estimate(cfg: &RunConfig, input: Option<&Path>, out: Option<&Path>, alpha: f64) -> Result<()> {
    let d = load_dataset(cfg, input)?;
    let lm = spec_learner(&cfg.learner_m, "learner_m")?;
    let ll = spec_learner(&cfg.learner_ell, "learner_ell")?;
    let start = Instant::now();
    let plan = make_plan(&d, cfg.split.method, cfg.split.k, cfg.split.seed, &cfg.split.sp)?;
    let est = estimate(&d, &plan, lm.as_ref(), ll.as_ref(), cfg.dml.score, cfg.dml.algorithm, alpha)?;
    let report = json!({
        "beta": est.beta,
        "se": est.se,
        "sigma_hat": est.sigma_hat,
        "ci": { "lo": est.ci.lo, "hi": est.ci.hi, "alpha": est.ci.alpha },
        "K": est.k,
        "n": est.n_total,
        "algorithm": match est.algorithm { DmlAlgorithm::Dml1 => "dml1", DmlAlgorithm::Dml2 => "dml2" },
        "score": match est.score { ScoreKind::PartiallingOut => "partialling_out", ScoreKind::IvType => "iv_type" },
        "per_fold_beta": est.per_fold_beta,
        "j_hat": est.j_hat,
        "splitter": cfg.split.method.to_string(),
        "seed": cfg.split.seed,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&report).expect("json values serialize") + "\n";
    write_output(out, text.as_bytes())
}

fn cmd_simulate(cfg: &RunConfig, out: Option<&Path>, format: ReportFormat) -> Result<()> {
    let sim = &cfg.simulate;
    let mut rows = Vec::new();
    for &scenario in &sim.scenarios {
        for &p in &sim.p_list {
            for &n in &sim.n_list {
                for &splitter in &sim.splitters {
                    let mc = McConfig {
                        reps: sim.reps,
                        k: cfg.split.k,
                        splitter,
                        learner_m: cfg.learner_m.clone(),
                        learner_ell: cfg.learner_ell.clone(),
                        score: cfg.dml.score,
                        algorithm: cfg.dml.algorithm,
                        master_seed: sim.master_seed,
                        alpha: cfg.dml.alpha,
                        sp: cfg.split.sp.clone(),
                        ..McConfig::new(ScenarioConfig::new(scenario, p, n), cfg.learner_m.clone())
                    };
                    let row = run_monte_carlo(&mc).inspect_err(|_e| {
                        eprintln!("cell {scenario} p={p} n={n} splitter={splitter} failed");
                    })?;
                    rows.push(row);
                }
            }
        }
    }
    write_output(out, &emit_report(&rows, format)?)
}

fn cmd_energy(a: &Path, b: &Path) -> Result<()> {
    let a = PointSet::from_matrix(&load_matrix_csv(a)?)?;
    let b = PointSet::from_matrix(&load_matrix_csv(b)?)?;
    println!("{}", energy_two_sample(&a, &b)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::defaults(),
    };
    if let Some(seed) = cli.seed {
        cfg.split.seed = seed;
        cfg.simulate.master_seed = seed;
    }
    let threads = cli.threads.or(cfg.threads);
    if threads == Some(0) {
        return Err(Error::InvalidConfig("threads must be >= 1".into()));
    }
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("cannot start {t} threads: {e}")))?;
    }
    let format = match cli.format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Split { input } => cmd_split(&cfg, input.as_deref(), out),
        Command::Estimate { input, alpha } => {
            let alpha = alpha.unwrap_or(cfg.dml.alpha);
            cmd_estimate(&cfg, input.as_deref(), out, alpha)
        }
        Command::Simulate => cmd_simulate(&cfg, out, format),
        Command::Energy { a, b } => cmd_energy(a, b),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
