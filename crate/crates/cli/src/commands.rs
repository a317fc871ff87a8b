//! Single-step subcommands that operate on files produced by earlier steps.

use std::fs;
use std::path::Path;

use anyhow::Context;
use safe_explore_core::data::Fold;
use safe_explore_core::depsue::{run_depsue, DeploymentPlan, DepsueSettings};
use safe_explore_core::estimators::{on_policy_value, SafetySpec};
use safe_explore_core::evaluation::ProbeSet;
use safe_explore_core::learners::{train_opg, train_safe_opg};
use safe_explore_core::rng::hash_str;
use safe_explore_core::{
    BanditDataset, Environment, LoggingPolicySpec, RewardModel, RewardModelVariant, RngStream,
    SoftmaxPolicy,
};

use crate::config::{ExperimentConfig, Method};
use crate::sweep::{data_stream, probe_stream};

pub fn gen_env(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let env = Environment::build(cfg.environment.clone())?;
    env.save(out)?;
    Ok(())
}

pub fn gen_data(
    env_dir: &Path,
    beta: f64,
    n: usize,
    split: Option<f64>,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let env = Environment::load(env_dir)?;
    let mut data =
        env.generate_logged_data(LoggingPolicySpec { beta }, n, &mut data_stream(seed, beta))?;
    if let Some(f) = split {
        data = data.split_dataset(f, &mut RngStream::new(seed, hash_str("gen-data/split")))?;
    }
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    data.write_csv(fs::File::create(out)?)?;
    Ok(())
}

fn read_data(path: &Path) -> anyhow::Result<BanditDataset> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BanditDataset::read_csv(file, path.display().to_string())?)
}

/// Uses the file's fold column when both folds are present, else splits evenly.
fn folds(data: &BanditDataset, seed: u64) -> anyhow::Result<(BanditDataset, BanditDataset)> {
    let (s1, s2) = (data.fold(Fold::S1), data.fold(Fold::S2));
    if !s1.is_empty() && !s2.is_empty() {
        return Ok((s1, s2));
    }
    let split = data.split_dataset(0.5, &mut RngStream::new(seed, hash_str("train/split")))?;
    Ok((split.fold(Fold::S1), split.fold(Fold::S2)))
}

pub fn train(
    cfg: &ExperimentConfig,
    env_dir: &Path,
    data_path: &Path,
    method: Method,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let env = Environment::load(env_dir)?;
    let data = read_data(data_path)?;
    let rng = RngStream::new(seed, hash_str(&format!("train/method={method}")));
    let feats = env.action_features();
    fs::create_dir_all(out)?;
    let policy = match method {
        Method::OpgNaive | Method::OpgCql => {
            let variant = if method == Method::OpgCql {
                RewardModelVariant::Cql
            } else {
                RewardModelVariant::NaiveMean
            };
            let model = RewardModel::train(
                &data,
                feats,
                &cfg.reward_model,
                variant,
                &rng.fork("reward-model"),
            )?;
            model.write_dir(&out.join("reward_model"))?;
            train_opg(&data, &model, feats, &cfg.opg, &rng.fork("policy"))?
        }
        Method::SafeOpg => {
            let threshold = cfg.safety.threshold_factor * on_policy_value(&data)?;
            let (s1, s2) = folds(&data, seed)?;
            let model = RewardModel::train(
                &s1,
                feats,
                &cfg.reward_model,
                RewardModelVariant::NaiveMean,
                &rng.fork("reward-model"),
            )?;
            model.write_dir(&out.join("reward_model"))?;
            let (policy, state) = train_safe_opg(
                &s1,
                &s2,
                SafetySpec::new(threshold, cfg.safety.delta)?,
                &cfg.hcope,
                &model,
                feats,
                &cfg.safe_opg,
                &rng.fork("policy"),
            )?;
            state.write_csv(fs::File::create(out.join("trace.csv"))?)?;
            policy
        }
        other => anyhow::bail!(
            "`train` supports opg_naive, opg_cql and safe_opg; use `depsue` for {other}"
        ),
    };
    policy.write_csv(fs::File::create(out.join("policy.csv"))?)?;
    Ok(())
}

pub fn depsue(
    cfg: &ExperimentConfig,
    env_dir: &Path,
    data_path: &Path,
    k: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let env = Environment::load(env_dir)?;
    let data = read_data(data_path)?;
    let threshold = cfg.safety.threshold_factor * on_policy_value(&data)?;
    let plan = DeploymentPlan::new(k, data.len(), threshold, cfg.safety.delta)?;
    let settings = DepsueSettings {
        model: cfg.reward_model.clone(),
        variant: RewardModelVariant::NaiveMean,
        train: cfg.safe_opg.clone(),
        hcope: cfg.hcope.clone(),
    };
    let history = run_depsue(
        &env,
        &data,
        &plan,
        &settings,
        &RngStream::new(seed, hash_str(&format!("depsue/k={k}"))),
    )?;
    fs::create_dir_all(out)?;
    for s in history.stages() {
        s.lagrangian.write_csv(fs::File::create(
            out.join(format!("trace_stage{}.csv", s.stage)),
        )?)?;
    }
    let probe = ProbeSet::sample(&env, cfg.eval_contexts, &mut probe_stream(&env))?;
    history.write_report(&probe, fs::File::create(out.join("deployment.csv"))?)?;
    if let Some(p) = history.final_policy() {
        p.write_csv(fs::File::create(out.join("policy.csv"))?)?;
    }
    Ok(())
}

/// Scores a saved policy against π₀ with inverse temperature `beta`.
pub fn evaluate(
    cfg: &ExperimentConfig,
    env_dir: &Path,
    policy_path: &Path,
    beta: f64,
    threshold: Option<f64>,
) -> anyhow::Result<String> {
    let env = Environment::load(env_dir)?;
    let policy = SoftmaxPolicy::read_csv(
        fs::File::open(policy_path)
            .with_context(|| format!("opening {}", policy_path.display()))?,
    )?;
    let probe = ProbeSet::sample(&env, cfg.eval_contexts, &mut probe_stream(&env))?;
    let baseline = probe.logging_value(&env, LoggingPolicySpec { beta })?.mean;
    let threshold = threshold.unwrap_or(cfg.safety.threshold_factor * baseline);
    let report = probe.report(&policy, baseline, threshold)?;
    Ok(serde_json::to_string_pretty(&report)?)
}
