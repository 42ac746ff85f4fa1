//! Acceptance criteria, one PASS/FAIL line each.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use dml_spss::data::Dataset;
use dml_spss::dml::{
    confidence_interval, dml1_estimate, dml2_estimate, variance_estimate, NuisanceFit, ScoreKind,
};
use dml_spss::learners::{
    cv_risk, fit, LearnerSpec, MlpNet, MlpSpec, Activation, Regressor,
};
use dml_spss::rng::derive_seed;
use dml_spss::simulate::{
    draw_dataset, run_monte_carlo, run_monte_carlo_detailed, McConfig, NuisanceLearner, Scenario,
    ScenarioConfig, Splitter,
};
use dml_spss::support_points::{
    compute_support_points, energy_two_sample, random_split, splitting_cloud, spss_split_cloud, FoldPlan,
    PointSet, SpConfig,
};
use nalgebra::DMatrix;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let mut mc = McConfig::new(ScenarioConfig::new(Scenario::S1, 20, 100), NuisanceLearner::Oracle);
    mc.reps = 50;
    mc.splitter = Splitter::RandomKfold;
    mc.master_seed = 101;
    let row = run_monte_carlo(&mc).map_err(|e| e.to_string())?;
    let mse_gap = (row.mse - (row.bias * row.bias + row.se * row.se)).abs();
    let adj_gap = (row.se_adjusted - row.se / (row.n as f64).sqrt()).abs();

    // Printed values carry four decimals; agreement within one printed unit.
    let unit = 1e-4;
    let t2_100 = 0.0882 / 100f64.sqrt();
    let t2_1000 = 0.0294 / 1000f64.sqrt();
    let t5_mse = 0.1769f64.powi(2) + 0.0779f64.powi(2);
    let ok = mse_gap <= 1e-12
        && adj_gap <= 1e-12
        && (t2_100 - 0.0089).abs() <= unit
        && (t2_1000 - 0.0009).abs() <= unit
        && (t5_mse - 0.0374).abs() <= unit;
    check(
        ok,
        format!(
            "own rows: |mse-(bias^2+se^2)|={mse_gap:.1e}, |se_adj-se/sqrt(n)|={adj_gap:.1e}; \
             printed se_adjusted {t2_100:.5} vs 0.0089, {t2_1000:.5} vs 0.0009; printed mse {t5_mse:.5} vs 0.0374"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut mc = McConfig::new(ScenarioConfig::new(Scenario::S1, 20, 1000), NuisanceLearner::Oracle);
    mc.reps = 500;
    mc.k = 2;
    mc.splitter = Splitter::RandomKfold;
    mc.master_seed = 2;
    let start = Instant::now();
    let row = run_monte_carlo(&mc).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        row.bias.abs() < 0.005 && (0.93..=0.97).contains(&row.coverage) && secs < 300.0,
        format!("bias {:.5}, coverage {:.3}, se {:.4}, {secs:.1}s", row.bias, row.coverage, row.se),
    )
}

fn desk_super_learner() -> LearnerSpec {
    LearnerSpec::super_learner(vec![
        LearnerSpec::ridge(1.0),
        LearnerSpec::lasso(0.01),
        LearnerSpec::Mlp(MlpSpec {
            hidden: vec![16],
            epochs: 50,
            step_size: 1e-2,
            l2: 1e-2,
            ..MlpSpec::default()
        }),
    ])
}

fn criterion_3() -> Outcome {
    let mut mc = McConfig::new(
        ScenarioConfig::new(Scenario::S1, 20, 1000),
        NuisanceLearner::Spec(desk_super_learner()),
    );
    mc.reps = 200;
    mc.k = 2;
    mc.splitter = Splitter::Spss;
    mc.sp.max_iter = 50;
    mc.master_seed = 3;
    let start = Instant::now();
    let row = run_monte_carlo(&mc).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        row.mse <= 0.01 && secs < 1800.0,
        format!(
            "bias {:.4}, se {:.4}, mse {:.5} (reference: bias -0.0249, mse 0.0012), coverage {:.3}, {secs:.0}s",
            row.bias, row.se, row.mse, row.coverage
        ),
    )
}

fn criterion_4() -> Outcome {
    let cfg = ScenarioConfig::new(Scenario::S1, 20, 1000);
    let mut wins = 0;
    let mut ratio = 0.0;
    for trial in 0..100u64 {
        let (d, _) = draw_dataset(&cfg, derive_seed(4, trial)).map_err(|e| e.to_string())?;
        let cloud = splitting_cloud(&d, true).map_err(|e| e.to_string())?;
        let sp = SpConfig {
            seed: trial,
            max_iter: 2000,
            tol: 1e-12,
            ..SpConfig::default()
        };
        let (split, _) = spss_split_cloud(&cloud, 0.2, &sp).map_err(|e| e.to_string())?;
        let rand = random_split(d.n(), 0.2, derive_seed(40, trial)).map_err(|e| e.to_string())?;
        let e_sp = energy_two_sample(&cloud.select(&split.test_idx), &cloud).map_err(|e| e.to_string())?;
        let e_rand = energy_two_sample(&cloud.select(&rand.test_idx), &cloud).map_err(|e| e.to_string())?;
        if e_sp < e_rand {
            wins += 1;
        }
        ratio += e_sp / e_rand / 100.0;
    }
    check(wins >= 95, format!("{wins}/100 trials won, mean energy ratio {ratio:.3}"))
}

fn criterion_5() -> Outcome {
    let mut worst_rise = f64::NEG_INFINITY;
    for inst in 0..100u64 {
        let n_full = 20 + (inst as usize % 5) * 10;
        let dim = 1 + inst as usize % 4;
        let full = PointSet::from_matrix(&gaussian_matrix(n_full, dim, 500 + inst)).unwrap();
        let cfg = SpConfig {
            n_points: 1 + inst as usize % 8,
            max_iter: 60,
            tol: 1e-300,
            seed: inst,
            ..SpConfig::default()
        };
        let r = compute_support_points(&full, &cfg).map_err(|e| e.to_string())?;
        for w in r.objective_trace.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }
    let median_cfg = SpConfig {
        n_points: 1,
        max_iter: 100_000,
        tol: 1e-16,
        ..SpConfig::default()
    };
    let line = PointSet::from_rows(&[vec![-3.0], vec![0.5], vec![2.0], vec![7.0], vec![9.0]]).unwrap();
    let mut median_err: f64 = 0.0;
    for seed in 0..5 {
        let r = compute_support_points(&line, &SpConfig { seed, ..median_cfg.clone() }).unwrap();
        median_err = median_err.max((r.points.row(0)[0] - 2.0).abs());
    }
    let quad = [[0.0, 0.0], [4.0, 0.0], [5.0, 3.0], [1.0, 2.0]];
    let target = quad_median(quad);
    let cloud = PointSet::from_rows(&quad.iter().map(|q| q.to_vec()).collect::<Vec<_>>()).unwrap();
    let start = PointSet::from_rows(&[vec![3.0, 1.8]]).unwrap();
    let r = dml_spss::support_points::compute_support_points_from(&cloud, start, &median_cfg).unwrap();
    let geo_err = ((r.points.row(0)[0] - target[0]).powi(2) + (r.points.row(0)[1] - target[1]).powi(2)).sqrt();
    check(
        worst_rise <= 1e-12 && median_err <= 1e-6 && geo_err <= 1e-6,
        format!("largest step rise {worst_rise:.2e}, 1-d median error {median_err:.1e}, geometric median error {geo_err:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut worst_oracle: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    let mut min_val = f64::INFINITY;
    let mut worst_self: f64 = 0.0;
    let mut min_distinct = f64::INFINITY;
    for inst in 0..100u64 {
        let dim = 1 + inst as usize % 5;
        let a = gaussian_matrix(3 + inst as usize % 17, dim, 900 + inst);
        let b = gaussian_matrix(2 + inst as usize % 11, dim, 1900 + inst).add_scalar(0.1);
        let (pa, pb) = (PointSet::from_matrix(&a).unwrap(), PointSet::from_matrix(&b).unwrap());
        let e_ab = energy_two_sample(&pa, &pb).unwrap();
        let e_ba = energy_two_sample(&pb, &pa).unwrap();
        let direct = energy_direct(&rows(&a), &rows(&b));
        worst_oracle = worst_oracle.max((e_ab - direct).abs());
        worst_sym = worst_sym.max((e_ab - e_ba).abs());
        min_val = min_val.min(e_ab);
        min_distinct = min_distinct.min(e_ab);
        let mut perm: Vec<usize> = (0..a.nrows()).rev().collect();
        perm.rotate_left(inst as usize % a.nrows());
        let same = energy_two_sample(&pa, &pa.select(&perm)).unwrap();
        worst_self = worst_self.max(same.abs());
    }
    check(
        worst_oracle <= 1e-12 && worst_sym <= 1e-12 && min_val >= 0.0 && worst_self <= 1e-12 && min_distinct > 0.0,
        format!(
            "oracle gap {worst_oracle:.1e}, asymmetry {worst_sym:.1e}, min over distinct pairs {min_distinct:.3e}, \
             permuted self {worst_self:.1e}"
        ),
    )
}

fn fold_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_7() -> Outcome {
    let mut k1_gap: f64 = 0.0;
    let mut moment_gap: f64 = 0.0;
    for inst in 0..50u64 {
        for kind in [ScoreKind::PartiallingOut, ScoreKind::IvType] {
            let (d, _, _) = random_dml_instance(40, 2, inst);
            let one = FoldPlan::new(vec![(0..40).collect()], 40).unwrap();
            let nf = NuisanceFit {
                fold_id: 0,
                m_hat: gaussian_vec(40, inst + 7).iter().map(|v| 0.2 * v).collect(),
                ell_hat: gaussian_vec(40, inst + 8).iter().map(|v| 0.2 * v).collect(),
                g_hat: Some(gaussian_vec(40, inst + 9).iter().map(|v| 0.2 * v).collect()),
            };
            let a = dml1_estimate(&d, &one, std::slice::from_ref(&nf), kind, 0.05).unwrap();
            let b = dml2_estimate(&d, &one, &[nf], kind, 0.05).unwrap();
            k1_gap = k1_gap.max((a.beta - b.beta).abs());

            let (d, plan, nuis) = random_dml_instance(60, 3, inst);
            let e1 = dml1_estimate(&d, &plan, &nuis, kind, 0.05).unwrap();
            let per_fold = e1.per_fold_beta.as_ref().unwrap();
            for (k, &bk) in per_fold.iter().enumerate() {
                let s = scores_direct(&d, &plan, &nuis, kind, bk);
                moment_gap = moment_gap.max(fold_mean(&s[k].1).abs());
            }
            let e2 = dml2_estimate(&d, &plan, &nuis, kind, 0.05).unwrap();
            let s = scores_direct(&d, &plan, &nuis, kind, e2.beta);
            let pooled = s.iter().map(|(_, p)| fold_mean(p)).sum::<f64>() / s.len() as f64;
            moment_gap = moment_gap.max(pooled.abs());
        }
    }
    let d = Dataset::new(
        vec![2.0, 2.0, 1.0, 1.0, 3.0, 1.0],
        vec![1.0, 1.0, 1.0, 1.0, 1.0, 3.0],
        DMatrix::zeros(6, 1),
    )
    .unwrap();
    let plan = FoldPlan::new(vec![vec![0, 1], vec![2, 3, 4, 5]], 6).unwrap();
    let zero = |f: usize, n: usize| NuisanceFit {
        fold_id: f,
        m_hat: vec![0.0; n],
        ell_hat: vec![0.0; n],
        g_hat: None,
    };
    let nuis = [zero(0, 2), zero(1, 4)];
    let h1 = dml1_estimate(&d, &plan, &nuis, ScoreKind::PartiallingOut, 0.05).unwrap().beta;
    let h2 = dml2_estimate(&d, &plan, &nuis, ScoreKind::PartiallingOut, 0.05).unwrap().beta;
    check(
        k1_gap <= 1e-12 && moment_gap <= 1e-10 && h1 == 4.0 / 3.0 && h2 == 1.0,
        format!("K=1 gap {k1_gap:.1e}, worst moment {moment_gap:.1e}, hand instance DML1 {h1}, DML2 {h2}"),
    )
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        for kind in [ScoreKind::PartiallingOut, ScoreKind::IvType] {
            let (d, plan, nuis) = random_dml_instance(45, 1 + inst as usize % 4 + 1, inst + 300);
            let est = dml2_estimate(&d, &plan, &nuis, kind, 0.05).unwrap();
            let (s2, j) = variance_estimate(est.beta, &d, &plan, &nuis, kind).unwrap();
            let s = scores_direct(&d, &plan, &nuis, kind, est.beta);
            let rhs = s
                .iter()
                .map(|(_, p)| fold_mean(&p.iter().map(|v| v * v).collect::<Vec<_>>()))
                .sum::<f64>()
                / s.len() as f64;
            worst = worst.max((s2 * j * j - rhs).abs() / rhs.max(1.0));
            let (s2d, _) = variance_direct(&d, &plan, &nuis, kind, est.beta);
            worst = worst.max((s2 - s2d).abs() / s2d.max(1.0));
        }
    }
    let d = Dataset::new(vec![2.0, 5.0], vec![1.0, 2.0], DMatrix::zeros(2, 1)).unwrap();
    let plan = FoldPlan::new(vec![vec![0, 1]], 2).unwrap();
    let nf = NuisanceFit {
        fold_id: 0,
        m_hat: vec![0.0; 2],
        ell_hat: vec![0.0; 2],
        g_hat: None,
    };
    let est = dml2_estimate(&d, &plan, &[nf], ScoreKind::PartiallingOut, 0.05).unwrap();
    let s2 = est.sigma_hat.powi(2);
    let (lo, hi) = confidence_interval(est.beta, s2, 2, 0.05).unwrap();
    let ok_hand = (est.beta - 2.4).abs() < 1e-12
        && (s2 - 0.0256).abs() < 1e-12
        && (lo - 2.17825).abs() < 1e-5
        && (hi - 2.62175).abs() < 1e-5
        && (est.ci.lo - lo).abs() < 1e-12
        && (est.ci.hi - hi).abs() < 1e-12;
    check(
        worst <= 1e-12 && ok_hand,
        format!(
            "identity gap {worst:.1e}; worked case beta {:.4}, sigma^2 {s2:.4}, ci ({lo:.5}, {hi:.5})",
            est.beta
        ),
    )
}

fn criterion_9() -> Outcome {
    let x = gaussian_matrix(60, 6, 91);
    let y: Vec<f64> = gaussian_vec(60, 92)
        .iter()
        .enumerate()
        .map(|(i, e)| x[(i, 0)] - 2.0 * x[(i, 3)] + 0.5 * e)
        .collect();

    let ridge = fit(&LearnerSpec::ridge(0.7), &x, &y).unwrap();
    let (coef, b0) = ridge.coefficients().unwrap();
    let (ne, ne0) = ridge_normal_equations(&x, &y, 0.7);
    let ridge_gap = coef.iter().zip(&ne).map(|(a, b)| (a - b).abs()).fold((b0 - ne0).abs(), f64::max);

    let lam_max = lasso_lambda_max(&x, &y);
    let mut kkt: f64 = 0.0;
    for lam in [0.02, 0.1, 0.5] {
        let spec = LearnerSpec::Lasso { lambda: lam, max_iter: 100_000, tol: 1e-12 };
        let m = fit(&spec, &x, &y).unwrap();
        let (c, i0) = m.coefficients().unwrap();
        kkt = kkt.max(lasso_kkt_violation(&x, &y, lam, c, i0));
    }
    let at_max = fit(&LearnerSpec::Lasso { lambda: lam_max, max_iter: 100_000, tol: 1e-12 }, &x, &y).unwrap();
    let below = fit(&LearnerSpec::Lasso { lambda: 0.99 * lam_max, max_iter: 100_000, tol: 1e-12 }, &x, &y).unwrap();
    let zeroing = at_max.coefficients().unwrap().0.iter().all(|&c| c == 0.0)
        && below.coefficients().unwrap().0.iter().any(|&c| c != 0.0);

    let xs = gaussian_matrix(40, 3, 93);
    let ys = gaussian_vec(40, 94);
    let km = fit(&LearnerSpec::kernel(0.4, 0.3), &xs, &ys).unwrap();
    let direct = kernel_dual_direct(&xs, &ys, 0.4, 0.3);
    let kernel_gap = km
        .kernel()
        .unwrap()
        .dual_coefficients()
        .iter()
        .zip(&direct)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut grad_err: f64 = 0.0;
    for act in [Activation::Tanh, Activation::Relu] {
        let net = MlpNet::new(3, &[5, 4], act);
        let params = net.init_params(7);
        let xb = gaussian_matrix(9, 3, 95);
        let yb = gaussian_vec(9, 96);
        let (_, g) = net.loss_and_gradient(&params, &xb, &yb, 0.01);
        for j in 0..params.len() {
            let h = 1e-6;
            let mut p = params.clone();
            p[j] += h;
            let up = net.loss_and_gradient(&p, &xb, &yb, 0.01).0;
            p[j] -= 2.0 * h;
            let down = net.loss_and_gradient(&p, &xb, &yb, 0.01).0;
            let fd = (up - down) / (2.0 * h);
            grad_err = grad_err.max((fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-6));
        }
    }

    let candidates = vec![
        LearnerSpec::ridge(1.0),
        LearnerSpec::lasso(0.05),
        LearnerSpec::Constant { value: 0.0 },
        LearnerSpec::kernel(0.2, 1.0),
    ];
    let mut selector_ok = true;
    for seed in 0..10u64 {
        let mut sl = dml_spss::learners::SuperLearnerSpec {
            candidates: candidates.clone(),
            seed,
            ..Default::default()
        };
        sl.v_blocks = 5;
        let m = fit(&LearnerSpec::SuperLearner(sl), &x, &y).unwrap();
        let report = m.cv_report().unwrap();
        let min = report.risks.iter().cloned().fold(f64::INFINITY, f64::min);
        let direct: Vec<f64> = candidates
            .iter()
            .map(|c| cv_risk(c as &dyn Regressor, &x, &y, 5, seed).unwrap())
            .collect();
        selector_ok &= report.risks[report.chosen] == min
            && report.weights[report.chosen] == 1.0
            && report.risks.iter().zip(&direct).all(|(a, b)| (a - b).abs() <= 1e-12);
    }
    check(
        ridge_gap <= 1e-10 && kkt <= 1e-8 && zeroing && kernel_gap <= 1e-8 && grad_err < 1e-4 && selector_ok,
        format!(
            "ridge gap {ridge_gap:.1e}, lasso KKT {kkt:.1e}, lambda_max zeroing {zeroing}, kernel gap {kernel_gap:.1e}, \
             mlp grad rel err {grad_err:.1e}, selector {selector_ok}"
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut mc = McConfig::new(
        ScenarioConfig::new(Scenario::S1, 10, 200),
        NuisanceLearner::Spec(LearnerSpec::super_learner(vec![
            LearnerSpec::ridge(1.0),
            LearnerSpec::lasso(0.01),
            LearnerSpec::Mlp(MlpSpec {
                hidden: vec![8],
                epochs: 20,
                ..MlpSpec::default()
            }),
        ])),
    );
    mc.reps = 12;
    mc.splitter = Splitter::Spss;
    mc.sp.max_iter = 40;
    mc.master_seed = 10;
    let mut runs = Vec::new();
    for threads in [1, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let (row, reps) = pool.install(|| run_monte_carlo_detailed(&mc)).map_err(|e| e.to_string())?;
        let bits: Vec<(u64, u64)> = reps.iter().map(|r| (r.beta.to_bits(), r.se.to_bits())).collect();
        runs.push((row.without_timing(), bits));
    }
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    check(same, format!("rows and per-replication estimates identical across 1/2/8 threads: {same}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric reconciliation", criterion_1),
        ("oracle-nuisance validity", criterion_2),
        ("desk-scale super learner", criterion_3),
        ("support-points representativeness", criterion_4),
        ("MM solver soundness", criterion_5),
        ("energy-distance axioms", criterion_6),
        ("DML algebra", criterion_7),
        ("variance and interval formulas", criterion_8),
        ("learner oracles", criterion_9),
        ("determinism across thread counts", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
