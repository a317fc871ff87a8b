//! The (β × method × seed) sweep: one independent cell per combination.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use safe_explore_core::data::fmt_real;
use safe_explore_core::depsue::{run_depsue, DeploymentPlan, DepsueSettings};
use safe_explore_core::estimators::on_policy_value;
use safe_explore_core::evaluation::ProbeSet;
use safe_explore_core::learners::{naive_safe_exploration, train_opg};
use safe_explore_core::rng::hash_str;
use safe_explore_core::{
    BanditDataset, Environment, LoggingPolicySpec, Policy, RewardModel, RewardModelVariant,
    RngStream,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig, Method};

pub const METRICS_HEADER: [&str; 9] = [
    "run_id",
    "beta",
    "method",
    "K",
    "seed",
    "true_value",
    "relative_value",
    "novelty",
    "violated",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub beta: f64,
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub true_value: f64,
    pub relative_value: f64,
    pub novelty: f64,
    pub violated: bool,
}

impl MetricsRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.run_id.clone(),
            self.beta.to_string(),
            self.method.clone(),
            self.k.to_string(),
            self.seed.to_string(),
            fmt_real(self.true_value),
            fmt_real(self.relative_value),
            fmt_real(self.novelty),
            self.violated.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub beta: f64,
    pub method: Method,
    pub seed: u64,
}

impl CellKey {
    pub fn run_id(&self) -> String {
        format!("beta{}_{}_seed{}", self.beta, self.method, self.seed)
    }
}

/// Stream for the logged data of one (seed, β) pair; shared by all methods.
pub fn data_stream(seed: u64, beta: f64) -> RngStream {
    RngStream::new(seed, hash_str(&format!("logged-data/beta={beta}")))
}

/// Stream for training one method on one (seed, β) pair.
pub fn train_stream(seed: u64, beta: f64, method: Method) -> RngStream {
    RngStream::new(
        seed,
        hash_str(&format!("train/beta={beta}/method={method}")),
    )
}

/// Probe contexts depend only on the environment, so every cell is scored on
/// the same draw.
pub fn probe_stream(env: &Environment) -> RngStream {
    RngStream::new(env.config().ground_truth_seed, hash_str("probe-contexts"))
}

/// Read-only state shared by every cell of a sweep.
pub struct SweepContext {
    pub config: ExperimentConfig,
    pub env: Environment,
    pub probe: ProbeSet,
}

impl SweepContext {
    pub fn new(config: ExperimentConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let env = Environment::build(config.environment.clone())?;
        let probe = ProbeSet::sample(&env, config.eval_contexts, &mut probe_stream(&env))?;
        Ok(Self { config, env, probe })
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &beta in &self.config.beta_sweep {
            for &method in &self.config.methods {
                for seed in self.config.seeds() {
                    out.push(CellKey { beta, method, seed });
                }
            }
        }
        out
    }

    pub fn logged_data(&self, seed: u64, beta: f64) -> anyhow::Result<BanditDataset> {
        Ok(self.env.generate_logged_data(
            LoggingPolicySpec { beta },
            self.config.n_logged,
            &mut data_stream(seed, beta),
        )?)
    }

    pub fn depsue_settings(&self) -> DepsueSettings {
        DepsueSettings {
            model: self.config.reward_model.clone(),
            variant: RewardModelVariant::NaiveMean,
            train: self.config.safe_opg.clone(),
            hcope: self.config.hcope.clone(),
        }
    }
}

/// Everything one cell produces, held in memory until it is written.
pub struct CellOutput {
    pub metrics: MetricsRow,
    /// (file name, contents)
    pub files: Vec<(String, Vec<u8>)>,
}

fn csv_bytes<F>(f: F) -> anyhow::Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> safe_explore_core::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn run_cell(ctx: &SweepContext, key: CellKey) -> anyhow::Result<CellOutput> {
    let cfg = &ctx.config;
    let spec = LoggingPolicySpec { beta: key.beta };
    let d0 = ctx.logged_data(key.seed, key.beta)?;
    let threshold = cfg.safety.threshold_factor * on_policy_value(&d0)?;
    let baseline = ctx.probe.logging_value(&ctx.env, spec)?.mean;
    let rng = train_stream(key.seed, key.beta, key.method);
    let feats = ctx.env.action_features();
    let mut files = Vec::new();

    let report = match key.method {
        Method::OpgNaive | Method::OpgCql => {
            let variant = if key.method == Method::OpgCql {
                RewardModelVariant::Cql
            } else {
                RewardModelVariant::NaiveMean
            };
            let model = RewardModel::train(
                &d0,
                feats,
                &cfg.reward_model,
                variant,
                &rng.fork("reward-model"),
            )?;
            let policy = train_opg(&d0, &model, feats, &cfg.opg, &rng.fork("policy"))?;
            files.push(("policy.csv".into(), csv_bytes(|b| policy.write_csv(b))?));
            ctx.probe.report(&policy, baseline, threshold)?
        }
        Method::SafeOpg | Method::DepsueK2 | Method::DepsueK5 => {
            let k = key.method.deployments();
            let plan = DeploymentPlan::new(k, cfg.n_logged, threshold, cfg.safety.delta)?;
            let history = run_depsue(&ctx.env, &d0, &plan, &ctx.depsue_settings(), &rng)?;
            for s in history.stages() {
                let name = if k == 1 {
                    "trace.csv".to_string()
                } else {
                    format!("trace_stage{}.csv", s.stage)
                };
                files.push((name, csv_bytes(|b| s.lagrangian.write_csv(b))?));
            }
            files.push((
                "deployment.csv".into(),
                csv_bytes(|b| history.write_report(&ctx.probe, b))?,
            ));
            let policy = history
                .final_policy()
                .ok_or_else(|| anyhow!("no stages recorded"))?;
            files.push(("policy.csv".into(), csv_bytes(|b| policy.write_csv(b))?));
            ctx.probe.report(policy, baseline, threshold)?
        }
        Method::NaiveSafeExploration => {
            let policy = naive_safe_exploration(spec, &ctx.env, cfg.naive_mix)?;
            ctx.probe
                .report(&policy as &dyn Policy, baseline, threshold)?
        }
    };

    let metrics = MetricsRow {
        run_id: key.run_id(),
        beta: key.beta,
        method: key.method.to_string(),
        k: key.method.deployments(),
        seed: key.seed,
        true_value: report.true_value,
        relative_value: report.relative_value,
        novelty: report.novelty,
        violated: report.violated,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    w.write_record(metrics.record())?;
    files.push((
        "metrics.csv".into(),
        w.into_inner().map_err(|e| anyhow!("{e}"))?,
    ));
    Ok(CellOutput { metrics, files })
}

#[derive(Debug, Serialize, Deserialize)]
struct CellStamp {
    run_id: String,
    config: String,
}

pub fn cell_dir(out: &Path, key: &CellKey) -> PathBuf {
    out.join("cells").join(key.run_id())
}

/// A cell counts as done when its directory exists with a stamp for this
/// config.
fn is_complete(out: &Path, key: &CellKey, fingerprint: &str) -> bool {
    let stamp = cell_dir(out, key).join("cell.json");
    fs::read_to_string(stamp)
        .ok()
        .and_then(|t| serde_json::from_str::<CellStamp>(&t).ok())
        .is_some_and(|s| s.config == fingerprint)
}

/// Writes into a private temporary directory, then renames into place.
fn write_cell(
    out: &Path,
    key: &CellKey,
    output: &CellOutput,
    fingerprint: &str,
) -> anyhow::Result<()> {
    let final_dir = cell_dir(out, key);
    let tmp = out.join("cells").join(format!(".tmp-{}", key.run_id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    for (name, bytes) in &output.files {
        fs::write(tmp.join(name), bytes)?;
    }
    let stamp = CellStamp {
        run_id: key.run_id(),
        config: fingerprint.to_string(),
    };
    fs::write(tmp.join("cell.json"), serde_json::to_string_pretty(&stamp)?)?;
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir)?;
    }
    fs::rename(&tmp, &final_dir)
        .with_context(|| format!("moving {} into place", final_dir.display()))?;
    Ok(())
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct SweepSummary {
    pub computed: usize,
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
}

/// Runs every missing cell, then rewrites the aggregate files and manifest.
pub fn run_sweep(
    ctx: &SweepContext,
    out: &Path,
    force: bool,
    threads: Option<usize>,
) -> anyhow::Result<SweepSummary> {
    fs::create_dir_all(out.join("cells"))?;
    let fingerprint = ctx.config.fingerprint();
    let cells = ctx.cells();
    let todo: Vec<CellKey> = cells
        .iter()
        .copied()
        .filter(|k| force || !is_complete(out, k, &fingerprint))
        .collect();
    let skipped = cells.len() - todo.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()?;
    let results: Vec<(CellKey, anyhow::Result<()>)> = pool.install(|| {
        todo.par_iter()
            .map(|&key| {
                let r = run_cell(ctx, key).and_then(|o| write_cell(out, &key, &o, &fingerprint));
                (key, r)
            })
            .collect()
    });

    let mut summary = SweepSummary {
        computed: 0,
        skipped,
        failed: Vec::new(),
    };
    for (key, r) in results {
        match r {
            Ok(()) => summary.computed += 1,
            Err(e) => summary.failed.push((key.run_id(), format!("{e:#}"))),
        }
    }
    write_aggregates(ctx, out, &cells, &summary)?;
    Ok(summary)
}

fn write_aggregates(
    ctx: &SweepContext,
    out: &Path,
    cells: &[CellKey],
    summary: &SweepSummary,
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(out.join("metrics.csv"))?;
    w.write_record(METRICS_HEADER)?;
    for key in cells {
        let path = cell_dir(out, key).join("metrics.csv");
        if !path.exists() {
            continue;
        }
        let mut r = csv::Reader::from_path(&path)?;
        for rec in r.records() {
            w.write_record(&rec?)?;
        }
    }
    w.flush()?;

    let failures = out.join("failures.csv");
    if summary.failed.is_empty() {
        if failures.exists() {
            fs::remove_file(&failures)?;
        }
    } else {
        let mut w = csv::Writer::from_path(&failures)?;
        w.write_record(["run_id", "error"])?;
        for (id, e) in &summary.failed {
            w.write_record([id, e])?;
        }
        w.flush()?;
    }
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&ctx.config)?,
    )?;
    write_manifest(out, &ctx.config.fingerprint())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    pub files: BTreeMap<String, String>,
}

pub const MANIFEST: &str = "manifest.json";

/// Lists every file under `out` (except the manifest) with its SHA-256.
pub fn write_manifest(out: &Path, config_sha256: &str) -> anyhow::Result<()> {
    let mut files = BTreeMap::new();
    collect_hashes(out, out, &mut files)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_sha256.to_string(),
        files,
    };
    fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn collect_hashes(
    root: &Path,
    dir: &Path,
    files: &mut BTreeMap<String, String>,
) -> anyhow::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if name.starts_with(".tmp-") {
            continue;
        }
        if path.is_dir() {
            collect_hashes(root, &path, files)?;
        } else if path != root.join(MANIFEST) {
            let rel = path
                .strip_prefix(root)?
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            files.insert(rel, hex(&Sha256::digest(fs::read(&path)?)));
        }
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> anyhow::Result<Vec<MetricsRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}
