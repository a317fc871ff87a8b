//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! The two sweep criteria run the desk profile and take most of the runtime.
//! Set `SAFE_EXPLORE_ACCEPTANCE_DIR` to keep sweep outputs between runs; cells
//! are then reused whenever their config fingerprint matches.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use safe_explore_cli::config::{ExperimentConfig, Method};
use safe_explore_cli::sweep::{
    cell_dir, read_metrics, run_sweep, CellKey, MetricsRow, SweepContext,
};
use safe_explore_core::estimators::{
    hcope_lower_bound, on_policy_value, ope_clipped_ips, ope_dm, ope_dr, ope_ips,
};
use safe_explore_core::evaluation::{
    policy_value_on, validation_hypothesis_test, ConfusionTally, Decision, HypothesisOutcome, Truth,
};
use safe_explore_core::learners::{
    dm_objective, entropy_gradient, regularizer_value_and_gradient, train_safe_opg, value_gradient,
};
use safe_explore_core::nn::GradientBuffer;
use safe_explore_core::policy::{policy_entropy, FixedPolicy};
use safe_explore_core::reward_model::ConstantPredictor;
use safe_explore_core::{
    BanditDataset, Environment, EnvironmentConfig, Fold, HcopeConfig, LoggedSample,
    LoggingPolicySpec, RewardModel, RewardModelConfig, RewardModelVariant, RewardPredictor,
    RngStream, SafetySpec, SoftmaxPolicy, TrainConfig,
};

const FD_INSTANCES: u64 = 100;
const FD_REL_TOL: f64 = 1e-4;
const FD_EPS: f64 = 1e-5;
const HCOPE_REPS: u64 = 1000;
const HCOPE_N: usize = 2000;
const HCOPE_DELTA: f64 = 0.1;
const HCOPE_MIN_COVERAGE: f64 = 0.88;
const DM_ORACLE_TOL: f64 = 1e-10;
const NOVELTY_CAP_HIGH_BETA: f64 = 0.05;
const LAMBDA_QUARTILE_RATIO: f64 = 0.25;
// Wall-clock budgets in seconds, per criterion.
const BUDGET_GRADIENTS: f64 = 30.0;
const BUDGET_HCOPE: f64 = 300.0;
const BUDGET_IDENTITIES: f64 = 60.0;
const BUDGET_SAFETY_SWEEP: f64 = 1800.0;
const BUDGET_DEPSUE_SWEEP: f64 = 3600.0;
const BUDGET_LAMBDA: f64 = 600.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Fails the verdict if `secs` exceeds `budget`, and records both.
fn within(v: Verdict, secs: f64, budget: f64) -> Verdict {
    verdict(
        v.pass && secs <= budget,
        format!("{} [{secs:.1}s, budget {budget:.0}s]", v.detail),
    )
}

fn small_env(seed: u64) -> Environment {
    Environment::build(EnvironmentConfig {
        d_x: 3,
        d_a: 2,
        n_actions: 8,
        n_supported: 6,
        ground_truth_seed: seed,
        hidden_widths: [8, 4],
        context_pool: None,
    })
    .unwrap()
}

fn gaussian(rng: &mut RngStream) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

struct Table(Array2<f64>);

impl RewardPredictor for Table {
    fn predict_matrix(
        &self,
        _: ArrayView2<f64>,
        _: ArrayView2<f64>,
    ) -> safe_explore_core::Result<Array2<f64>> {
        Ok(self.0.clone())
    }
}

struct Oracle<'a>(&'a Environment);

impl RewardPredictor for Oracle<'_> {
    fn predict_matrix(
        &self,
        contexts: ArrayView2<f64>,
        _: ArrayView2<f64>,
    ) -> safe_explore_core::Result<Array2<f64>> {
        self.0.reward_matrix(contexts)
    }
}

fn central_differences(policy: &SoftmaxPolicy, f: &dyn Fn(&SoftmaxPolicy) -> f64) -> Vec<f64> {
    let mut p = policy.clone();
    let base = p.network().params_flat();
    (0..base.len())
        .map(|i| {
            let mut w = base.clone();
            w[i] = base[i] + FD_EPS;
            p.network_mut().set_params_flat(&w).unwrap();
            let up = f(&p);
            w[i] = base[i] - FD_EPS;
            p.network_mut().set_params_flat(&w).unwrap();
            let down = f(&p);
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

/// Largest coordinate error relative to the largest finite-difference entry.
fn relative_error(analytic: &GradientBuffer, fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .as_slice()
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / scale)
        .fold(0.0, f64::max)
}

fn gradient_correctness() -> Verdict {
    let (d_x, h, k, n) = (4, 8, 6, 6);
    let cfg = TrainConfig {
        rescale_gradient: false,
        ..TrainConfig::opg()
    };
    let feats = Array2::<f64>::zeros((k, 1));
    let mut worst = [0.0f64; 3];
    for trial in 0..FD_INSTANCES {
        let mut rng = RngStream::new(trial, 0xFD);
        let mut policy = SoftmaxPolicy::new(d_x, h, k, &mut rng).unwrap();
        let w: Vec<f64> = (0..policy.n_params())
            .map(|_| 0.5 * gaussian(&mut rng))
            .collect();
        policy.network_mut().set_params_flat(&w).unwrap();
        let ctx = Array2::from_shape_simple_fn((n, d_x), || gaussian(&mut rng));
        let q = Array2::from_shape_simple_fn((n, k), || rng.random::<f64>());
        let data = BanditDataset::new(
            ctx.rows()
                .into_iter()
                .map(|row| LoggedSample {
                    context: row.to_vec(),
                    action: rng.random_range(0..k),
                    reward: rng.random::<f64>(),
                    propensity: 1.0 / k as f64,
                })
                .collect(),
            "fd",
        );

        let g = value_gradient(&policy, &data, &Table(q.clone()), feats.view(), &cfg).unwrap();
        let fd = central_differences(&policy, &|p| dm_objective(p, ctx.view(), q.view()).unwrap());
        worst[0] = worst[0].max(relative_error(&g, &fd));

        let g = entropy_gradient(&policy, ctx.view(), &cfg).unwrap();
        let fd = central_differences(&policy, &|p| policy_entropy(p, ctx.view()).unwrap());
        worst[1] = worst[1].max(relative_error(&g, &fd));

        let (_, g) = regularizer_value_and_gradient(&policy, &data).unwrap();
        let fd = central_differences(&policy, &|p| {
            regularizer_value_and_gradient(p, &data).unwrap().0
        });
        worst[2] = worst[2].max(relative_error(&g, &fd));
    }
    verdict(
        worst.iter().all(|e| *e <= FD_REL_TOL),
        format!(
            "{FD_INSTANCES} instances; worst rel err value {:.2e}, entropy {:.2e}, regularizer {:.2e} (tol {FD_REL_TOL:.0e})",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn hcope_validity() -> Verdict {
    let env = small_env(11);
    let spec = LoggingPolicySpec { beta: 2.0 };
    // Supported-only target, so importance weights stay bounded.
    let target = FixedPolicy::new(vec![0.35, 0.25, 0.15, 0.1, 0.1, 0.05, 0.0, 0.0]).unwrap();
    let truth_ctx = env.sample_contexts(400_000, &mut RngStream::new(0, 0x7207));
    let truth = policy_value_on(&env, &target, truth_ctx.view())
        .unwrap()
        .mean;
    let cfg = HcopeConfig {
        delta: HCOPE_DELTA,
        ..HcopeConfig::default()
    };
    let mut covered = 0u64;
    for rep in 0..HCOPE_REPS {
        let data = env
            .generate_logged_data(spec, HCOPE_N, &mut RngStream::new(rep, 0xDA7A))
            .unwrap();
        let bound =
            hcope_lower_bound(&target, &data, &cfg, &mut RngStream::new(rep, 0xB0)).unwrap();
        if bound <= truth {
            covered += 1;
        }
    }
    let rate = covered as f64 / HCOPE_REPS as f64;
    verdict(
        rate >= HCOPE_MIN_COVERAGE,
        format!("coverage {covered}/{HCOPE_REPS} = {rate:.3} (need >= {HCOPE_MIN_COVERAGE}), V = {truth:.4}"),
    )
}

fn estimator_identities() -> Verdict {
    let env = small_env(12);
    let spec = LoggingPolicySpec { beta: 1.5 };
    let data = env
        .generate_logged_data(spec, 500, &mut RngStream::new(3, 3))
        .unwrap();
    let target = FixedPolicy::new(vec![0.3, 0.2, 0.2, 0.1, 0.1, 0.05, 0.05, 0.0]).unwrap();
    let feats = env.action_features();
    let mut problems = Vec::new();

    let zero = ConstantPredictor(0.0);
    let mismatched = data
        .samples()
        .iter()
        .filter(|s| {
            let one = BanditDataset::new(vec![(*s).clone()], "one");
            ope_dr(&target, &one, &zero, feats).unwrap() != ope_ips(&target, &one).unwrap()
        })
        .count();
    if mismatched > 0 {
        problems.push(format!("DR != IPS on {mismatched} samples"));
    }

    let ips = ope_ips(&env.logging_policy(spec), &data).unwrap();
    let on = on_policy_value(&data).unwrap();
    if ips != on {
        problems.push(format!("IPS(pi0) {ips} != on-policy {on}"));
    }

    let taus = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 64.0];
    let clipped: Vec<f64> = taus
        .iter()
        .map(|t| ope_clipped_ips(&target, &data, *t).unwrap())
        .collect();
    if clipped.windows(2).any(|w| w[1] < w[0]) {
        problems.push(format!("clipped IPS not monotone: {clipped:?}"));
    }

    let dm = ope_dm(&target, &data, &Oracle(&env), feats).unwrap();
    let exact = policy_value_on(&env, &target, data.context_matrix().view())
        .unwrap()
        .mean;
    if (dm - exact).abs() > DM_ORACLE_TOL {
        problems.push(format!("DM oracle {dm} vs exact {exact}"));
    }

    let pass = problems.is_empty();
    verdict(
        pass,
        if pass {
            format!("DR=IPS per sample (500), IPS(pi0)=on-policy, clipped IPS monotone over {} taus, |DM-V| <= {DM_ORACLE_TOL:.0e}", taus.len())
        } else {
            problems.join("; ")
        },
    )
}

fn lambda_trace(cell: &Path) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(cell.join("trace.csv")).unwrap();
    rdr.records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect()
}

fn final_quartile_ratio(lambda: &[f64]) -> f64 {
    let tail = &lambda[lambda.len() * 3 / 4..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (tail.len() - 1) as f64;
    if mean == 0.0 && var == 0.0 {
        0.0
    } else {
        var.sqrt() / mean
    }
}

fn lambda_dynamics(desk_cells: &[PathBuf]) -> Verdict {
    let env = small_env(13);
    let data = env
        .generate_logged_data(
            LoggingPolicySpec { beta: 0.0 },
            2000,
            &mut RngStream::new(5, 0),
        )
        .unwrap()
        .split_dataset(0.5, &mut RngStream::new(5, 1))
        .unwrap();
    let (s1, s2) = (data.fold(Fold::S1), data.fold(Fold::S2));
    let feats = env.action_features();
    let model_cfg = RewardModelConfig {
        hidden_widths: [16, 8],
        n_members: 1,
        epochs: 5,
        ..RewardModelConfig::default()
    };
    let model = RewardModel::train(
        &s1,
        feats,
        &model_cfg,
        RewardModelVariant::NaiveMean,
        &RngStream::new(5, 2),
    )
    .unwrap();
    let cfg = TrainConfig {
        steps: 300,
        batch_contexts: 256,
        policy_hidden: 16,
        eta_psi: 0.05,
        eta_lambda: 0.05,
        ..TrainConfig::safe_opg()
    };
    let run = |c: f64| {
        train_safe_opg(
            &s1,
            &s2,
            SafetySpec::new(c, 0.05).unwrap(),
            &HcopeConfig::default(),
            &model,
            feats,
            &cfg,
            &RngStream::new(5, 3),
        )
        .unwrap()
        .1
    };
    let high: Vec<f64> = run(2.0).trace.iter().map(|r| r.lambda).collect();
    let monotone = high.len() == cfg.steps && high.windows(2).all(|w| w[1] >= w[0]);
    let low = run(-1.0);
    let zero = low.trace.len() == cfg.steps && low.trace.iter().all(|r| r.lambda == 0.0);

    let ratios: Vec<f64> = desk_cells
        .iter()
        .map(|c| final_quartile_ratio(&lambda_trace(c)))
        .collect();
    let worst = ratios.iter().cloned().fold(0.0f64, f64::max);
    let stable = !ratios.is_empty() && worst < LAMBDA_QUARTILE_RATIO;
    verdict(
        monotone && zero && stable,
        format!(
            "C=2 nondecreasing over {} steps: {monotone}; C=-1 lambda==0: {zero}; desk final-quartile std/mean worst {worst:.3} over {} traces (need < {LAMBDA_QUARTILE_RATIO})",
            cfg.steps,
            ratios.len()
        ),
    )
}

fn confusion_accounting() -> Verdict {
    // (validation estimate, baseline on-policy estimate, true value, baseline true value)
    let policies: [(f64, f64, f64, f64); 20] = [
        (0.62, 0.60, 0.63, 0.61), // TP
        (0.58, 0.60, 0.64, 0.61), // FN
        (0.65, 0.60, 0.59, 0.61), // FP
        (0.55, 0.60, 0.57, 0.61), // TN
        (0.61, 0.60, 0.70, 0.61), // TP
        (0.60, 0.60, 0.66, 0.61), // FN: tie is not positive
        (0.70, 0.60, 0.61, 0.61), // FP: tie is not improved
        (0.40, 0.60, 0.30, 0.61), // TN
        (0.80, 0.60, 0.75, 0.61), // TP
        (0.59, 0.60, 0.62, 0.61), // FN
        (0.63, 0.60, 0.50, 0.61), // FP
        (0.50, 0.60, 0.61, 0.61), // TN: tie is not improved
        (0.66, 0.60, 0.68, 0.61), // TP
        (0.64, 0.60, 0.60, 0.61), // FP
        (0.57, 0.60, 0.58, 0.61), // TN
        (0.45, 0.60, 0.62, 0.61), // FN
        (0.61, 0.60, 0.62, 0.61), // TP
        (0.52, 0.60, 0.40, 0.61), // TN
        (0.90, 0.60, 0.20, 0.61), // FP
        (0.60, 0.60, 0.55, 0.61), // TN
    ];
    let hand = ConfusionTally {
        true_positive: 5,
        false_negative: 4,
        false_positive: 5,
        true_negative: 6,
    };
    let outcomes: Vec<HypothesisOutcome> = policies
        .iter()
        .map(|&(est, base_est, v, base_v)| HypothesisOutcome {
            decision: validation_hypothesis_test(est, base_est),
            truth: Truth::from_values(v, base_v),
        })
        .collect();
    let tally = ConfusionTally::from_outcomes(&outcomes);
    let rates_ok =
        tally.type_i_rate() == Some(5.0 / 11.0) && tally.type_ii_rate() == Some(4.0 / 9.0);
    let positives = outcomes
        .iter()
        .filter(|o| o.decision == Decision::Positive)
        .count();
    verdict(
        tally == hand && rates_ok && positives == 10,
        format!(
            "tally TP {} FN {} FP {} TN {} vs hand 5/4/5/6; type I {:?}, type II {:?}",
            tally.true_positive,
            tally.false_negative,
            tally.false_positive,
            tally.true_negative,
            tally.type_i_rate(),
            tally.type_ii_rate()
        ),
    )
}

fn sweep_root() -> (PathBuf, Option<tempfile::TempDir>) {
    match std::env::var_os("SAFE_EXPLORE_ACCEPTANCE_DIR") {
        Some(dir) => (PathBuf::from(dir), None),
        None => {
            let tmp = tempfile::tempdir().unwrap();
            (tmp.path().to_path_buf(), Some(tmp))
        }
    }
}

fn run(cfg: ExperimentConfig, out: &Path) -> anyhow::Result<(SweepContext, Vec<MetricsRow>, f64)> {
    let start = Instant::now();
    let ctx = SweepContext::new(cfg)?;
    let summary = run_sweep(&ctx, out, false, None)?;
    if !summary.failed.is_empty() {
        anyhow::bail!("failed cells: {:?}", summary.failed);
    }
    let rows = read_metrics(&out.join("metrics.csv"))?;
    Ok((ctx, rows, start.elapsed().as_secs_f64()))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn select<'a>(rows: &'a [MetricsRow], method: Method, beta: f64) -> Vec<&'a MetricsRow> {
    rows.iter()
        .filter(|r| r.method == method.as_str() && r.beta == beta)
        .collect()
}

fn report(results: &mut Vec<(usize, Verdict)>, id: usize, v: Verdict) {
    println!(
        "criterion {id}: {} - {}",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    results.push((id, v));
}

fn files_of(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.ends_with(".csv")
        })
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn main() {
    let mut results = Vec::new();
    let timed = |f: fn() -> Verdict, budget: f64| {
        let t = Instant::now();
        let v = f();
        within(v, t.elapsed().as_secs_f64(), budget)
    };
    report(
        &mut results,
        1,
        timed(gradient_correctness, BUDGET_GRADIENTS),
    );
    report(&mut results, 2, timed(hcope_validity, BUDGET_HCOPE));
    report(
        &mut results,
        3,
        timed(estimator_identities, BUDGET_IDENTITIES),
    );

    let (root, _guard) = sweep_root();
    let safety_cfg = ExperimentConfig {
        methods: vec![Method::SafeOpg],
        ..ExperimentConfig::desk()
    };
    let safety_out = root.join("safety");
    let safety = run(safety_cfg.clone(), &safety_out);
    let mut desk_traces = Vec::new();
    match &safety {
        Ok((ctx, rows, secs)) => {
            let violated = rows.iter().filter(|r| r.violated).count();
            report(
                &mut results,
                4,
                within(
                    verdict(
                        rows.len() == 30 && violated == 0,
                        format!(
                            "safe_opg violations {violated}/{} over beta {:?} x {} seeds",
                            rows.len(),
                            safety_cfg.beta_sweep,
                            safety_cfg.n_seeds
                        ),
                    ),
                    *secs,
                    BUDGET_SAFETY_SWEEP,
                ),
            );
            let high: Vec<f64> = select(rows, Method::SafeOpg, 8.0)
                .iter()
                .map(|r| r.novelty)
                .collect();
            let (m, se) = mean_se(&high);
            report(
                &mut results,
                5,
                verdict(
                    high.len() == 10 && m < NOVELTY_CAP_HIGH_BETA,
                    format!(
                        "beta=8 mean novelty {m:.4} (se {se:.4}, need < {NOVELTY_CAP_HIGH_BETA})"
                    ),
                ),
            );
            desk_traces = ctx
                .cells()
                .iter()
                .map(|k| cell_dir(&safety_out, k))
                .collect();
        }
        Err(e) => {
            report(
                &mut results,
                4,
                verdict(false, format!("sweep failed: {e:#}")),
            );
            report(
                &mut results,
                5,
                verdict(false, "depends on the criterion 4 sweep"),
            );
        }
    }

    let depsue_cfg = ExperimentConfig {
        beta_sweep: vec![-8.0],
        methods: vec![Method::DepsueK2, Method::DepsueK5],
        ..ExperimentConfig::desk()
    };
    let depsue = run(depsue_cfg, &root.join("depsue"));
    match (&safety, &depsue) {
        (Ok((_, k1_rows, _)), Ok((_, rows, secs))) => {
            // Safe OPG is the single-deployment case, so its β=−8 cells are K=1.
            let by_k = [
                select(k1_rows, Method::SafeOpg, -8.0),
                select(rows, Method::DepsueK2, -8.0),
                select(rows, Method::DepsueK5, -8.0),
            ];
            let stats: Vec<(f64, f64)> = by_k
                .iter()
                .map(|rs| mean_se(&rs.iter().map(|r| r.novelty).collect::<Vec<_>>()))
                .collect();
            let nondecreasing = stats.windows(2).all(|w| w[1].0 + w[1].1 >= w[0].0 - w[0].1);
            let early_violations: usize = by_k[..2]
                .iter()
                .map(|rs| rs.iter().filter(|r| r.violated).count())
                .sum();
            let sizes_ok = by_k.iter().all(|rs| rs.len() == 10);
            report(
                &mut results,
                6,
                within(
                    verdict(
                        sizes_ok && nondecreasing && early_violations == 0,
                        format!(
                            "beta=-8 novelty K=1 {:.3}±{:.3}, K=2 {:.3}±{:.3}, K=5 {:.3}±{:.3}; violations at K<=2: {early_violations}/20",
                            stats[0].0, stats[0].1, stats[1].0, stats[1].1, stats[2].0, stats[2].1
                        ),
                    ),
                    *secs,
                    BUDGET_DEPSUE_SWEEP,
                ),
            );
        }
        (_, Err(e)) => report(
            &mut results,
            6,
            verdict(false, format!("sweep failed: {e:#}")),
        ),
        (Err(_), _) => report(
            &mut results,
            6,
            verdict(false, "K=1 cells come from the criterion 4 sweep"),
        ),
    }

    let t = Instant::now();
    let v = lambda_dynamics(&desk_traces);
    report(
        &mut results,
        7,
        within(v, t.elapsed().as_secs_f64(), BUDGET_LAMBDA),
    );

    report(&mut results, 8, confusion_accounting());

    let t = Instant::now();
    let rerun_cfg = ExperimentConfig {
        beta_sweep: vec![-8.0],
        methods: vec![Method::SafeOpg, Method::DepsueK2],
        n_seeds: 1,
        first_seed: 3,
        ..ExperimentConfig::desk()
    };
    let rerun_dir = tempfile::tempdir().unwrap();
    let determinism = run(rerun_cfg.clone(), rerun_dir.path()).map(|(ctx, _, _)| {
        ctx.cells()
            .iter()
            .map(|key: &CellKey| {
                let original = match key.method {
                    Method::SafeOpg => cell_dir(&safety_out, key),
                    _ => cell_dir(&root.join("depsue"), key),
                };
                let a = files_of(&original);
                let b = files_of(&cell_dir(rerun_dir.path(), key));
                (key.run_id(), !a.is_empty() && a == b, a.len())
            })
            .collect::<Vec<_>>()
    });
    let v = match determinism {
        Ok(cells) => verdict(
            cells.iter().all(|c| c.1),
            format!(
                "{} [{:.0}s]",
                cells
                    .iter()
                    .map(|(id, same, n)| format!(
                        "{id}: {n} files {}",
                        if *same { "identical" } else { "DIFFER" }
                    ))
                    .collect::<Vec<_>>()
                    .join(", "),
                t.elapsed().as_secs_f64()
            ),
        ),
        Err(e) => verdict(false, format!("rerun failed: {e:#}")),
    };
    report(&mut results, 9, v);

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, v)| !v.pass)
        .map(|(id, _)| *id)
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
