//! Staged deployment under a cumulative safety budget.
//!
//! Stage k trains a Safe OPG policy on the data logged by the policy of stage
//! k−1 and must satisfy `V̂₋(π_k) + Σ_{k′<k} V̂_on(π_{k′}) > kC`, so surplus
//! value earned by earlier deployments relaxes later thresholds.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{fmt_real, BanditDataset, Fold};
use crate::environment::Environment;
use crate::error::{invalid, Error, Result};
use crate::estimators::{on_policy_value, HcopeConfig, SafetySpec};
use crate::evaluation::ProbeSet;
use crate::learners::{train_safe_opg_with, LagrangianState, LambdaMode, TrainConfig};
use crate::policy::SoftmaxPolicy;
use crate::reward_model::{RewardModel, RewardModelConfig, RewardModelVariant};
use crate::rng::RngStream;

/// Smallest S2 fold a stage may produce: twice the τ-tuning carve-out floor.
pub const MIN_STAGE_S2: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentPlan {
    pub k: usize,
    /// Total sample budget; every stage observes `total_samples / k`.
    pub total_samples: usize,
    pub base_threshold: f64,
    pub delta: f64,
    /// Cap each stage's on-policy estimate at `clip_factor · clip_reference`.
    #[serde(default)]
    pub clip_factor: Option<f64>,
    #[serde(default)]
    pub clip_reference: Option<f64>,
    #[serde(default)]
    pub warm_start: bool,
}

impl DeploymentPlan {
    pub fn new(k: usize, total_samples: usize, base_threshold: f64, delta: f64) -> Result<Self> {
        let plan = Self {
            k,
            total_samples,
            base_threshold,
            delta,
            clip_factor: None,
            clip_reference: None,
            warm_start: false,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn samples_per_stage(&self) -> usize {
        self.total_samples / self.k.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("K must be >= 1"));
        }
        if self.samples_per_stage() < 2 {
            return Err(invalid(format!(
                "{} samples over {} stages leaves fewer than 2 per stage",
                self.total_samples, self.k
            )));
        }
        SafetySpec::new(self.base_threshold, self.delta)?;
        match (self.clip_factor, self.clip_reference) {
            (None, _) => Ok(()),
            (Some(f), Some(r)) if f > 0.0 && r.is_finite() => Ok(()),
            _ => Err(invalid(
                "clip_factor needs a positive factor and a finite clip_reference",
            )),
        }
    }

    /// The cap applied to on-policy estimates, if clipping is enabled.
    pub fn clip_cap(&self) -> Option<f64> {
        match (self.clip_factor, self.clip_reference) {
            (Some(f), Some(r)) => Some(f * r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub policy: SoftmaxPolicy,
    /// Origin tag of the data the policy was trained on.
    pub trained_on: String,
    /// Number of samples deployed by this stage's policy.
    pub deployed_samples: usize,
    pub effective_threshold: f64,
    pub hcope_bound: f64,
    pub on_policy_value: f64,
    pub cumulative_margin: f64,
    pub lagrangian: LagrangianState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentHistory {
    base_threshold: f64,
    clip_cap: Option<f64>,
    stages: Vec<StageRecord>,
}

impl DeploymentHistory {
    pub fn new(plan: &DeploymentPlan) -> Self {
        Self {
            base_threshold: plan.base_threshold,
            clip_cap: plan.clip_cap(),
            stages: Vec::new(),
        }
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn final_policy(&self) -> Option<&SoftmaxPolicy> {
        self.stages.last().map(|s| &s.policy)
    }

    fn clipped(&self, v: f64) -> f64 {
        self.clip_cap.map_or(v, |cap| v.min(cap))
    }

    /// Appends the next stage; its margin is recomputed from the record.
    pub fn push(&mut self, mut record: StageRecord) -> Result<()> {
        let expected = self.stages.len() + 1;
        if record.stage != expected {
            return Err(Error::MissingStage(expected));
        }
        let prior: f64 = self
            .stages
            .iter()
            .map(|s| self.clipped(s.on_policy_value))
            .sum();
        record.cumulative_margin =
            prior + self.clipped(record.on_policy_value) - expected as f64 * self.base_threshold;
        self.stages.push(record);
        Ok(())
    }

    /// Deployment report, one row per stage, scored against the true q on
    /// the probe contexts.
    pub fn write_report<W: Write>(&self, probe: &ProbeSet, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "stage",
            "effective_threshold",
            "hcope_bound",
            "on_policy_value",
            "cumulative_margin",
            "novelty",
            "true_value",
        ])?;
        for s in &self.stages {
            let nov = probe.novelty(&s.policy)?.mean;
            let val = probe.value(&s.policy)?.mean;
            w.write_record([
                s.stage.to_string(),
                fmt_real(s.effective_threshold),
                fmt_real(s.hcope_bound),
                fmt_real(s.on_policy_value),
                fmt_real(s.cumulative_margin),
                fmt_real(nov),
                fmt_real(val),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `C` for the first stage, `kC − Σ_{k′<k} clip(V̂_on(π_{k′}))` afterwards.
pub fn effective_threshold(
    plan: &DeploymentPlan,
    history: &DeploymentHistory,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(invalid("stages are numbered from 1"));
    }
    if history.len() < k - 1 {
        return Err(Error::MissingStage(history.len() + 1));
    }
    let cap = plan.clip_cap();
    let prior: f64 = history.stages[..k - 1]
        .iter()
        .map(|s| cap.map_or(s.on_policy_value, |c| s.on_policy_value.min(c)))
        .sum();
    Ok(k as f64 * plan.base_threshold - prior)
}

/// `Σ_{k′≤k} clip(V̂_on(π_{k′})) − kC`.
pub fn cumulative_margin(history: &DeploymentHistory, threshold: f64, k: usize) -> Result<f64> {
    if history.len() < k {
        return Err(Error::MissingStage(history.len() + 1));
    }
    let total: f64 = history.stages[..k]
        .iter()
        .map(|s| history.clipped(s.on_policy_value))
        .sum();
    Ok(total - k as f64 * threshold)
}

/// Random stream for one purpose at one stage. Stage 0 is the initial data.
pub fn stage_stream(rng: &RngStream, purpose: &str, stage: usize) -> RngStream {
    rng.fork(purpose).fork_index("stage", stage as u64)
}

/// Origin tag of the data logged by stage `k`'s policy.
pub fn stage_origin(k: usize) -> String {
    format!("pi{k}")
}

/// Everything besides the plan that a DEPSUE run needs.
#[derive(Debug, Clone)]
pub struct DepsueSettings {
    pub model: RewardModelConfig,
    pub variant: RewardModelVariant,
    pub train: TrainConfig,
    pub hcope: HcopeConfig,
}

/// Splits one stage's data evenly and checks the S2 floor.
pub fn split_stage(
    data: &BanditDataset,
    rng: &RngStream,
    stage: usize,
) -> Result<(BanditDataset, BanditDataset)> {
    let split = data.split_dataset(0.5, &mut stage_stream(rng, "split", stage))?;
    let (s1, s2) = (split.fold(Fold::S1), split.fold(Fold::S2));
    if s2.len() < MIN_STAGE_S2 {
        return Err(Error::StageDataTooSmall {
            size: s2.len(),
            minimum: MIN_STAGE_S2,
        });
    }
    Ok((s1, s2))
}

/// Runs all K stages starting from the logging policy's data `initial`.
///
/// Stage 1 sees `total_samples / K` samples of `initial` (all of it when the
/// sizes match). The reward model for stage k is trained on the union of the
/// S1 folds observed so far; the policy gradient and the bound only use the
/// newest data.
pub fn run_depsue(
    env: &Environment,
    initial: &BanditDataset,
    plan: &DeploymentPlan,
    settings: &DepsueSettings,
    rng: &RngStream,
) -> Result<DeploymentHistory> {
    plan.validate()?;
    let m = plan.samples_per_stage();
    if initial.len() < m {
        return Err(Error::InsufficientSamples {
            needed: m,
            available: initial.len(),
        });
    }
    let mut data = if initial.len() == m {
        initial.clone()
    } else {
        initial.subsample(m, &mut stage_stream(rng, "subsample", 0))?
    };
    let mut history = DeploymentHistory::new(plan);
    let mut model_folds: Vec<BanditDataset> = Vec::new();
    let mut previous: Option<SoftmaxPolicy> = None;
    for k in 1..=plan.k {
        let (s1, s2) = split_stage(&data, rng, k)?;
        model_folds.push(s1.clone());
        let union = if model_folds.len() == 1 {
            s1.clone()
        } else {
            BanditDataset::concat(&model_folds.iter().collect::<Vec<_>>(), "model-union")
        };
        let model = RewardModel::train(
            &union,
            env.action_features(),
            &settings.model,
            settings.variant,
            &stage_stream(rng, "reward-model", k),
        )?;
        let threshold = effective_threshold(plan, &history, k)?;
        let start = if plan.warm_start {
            previous.take()
        } else {
            None
        };
        let (policy, lagrangian) = train_safe_opg_with(
            start,
            &s1,
            &s2,
            SafetySpec::new(threshold, plan.delta)?,
            &settings.hcope,
            &model,
            env.action_features(),
            &settings.train,
            LambdaMode::Adaptive,
            &stage_stream(rng, "train", k),
        )?;
        let deployed = env.collect_data(
            &policy,
            m,
            stage_origin(k),
            &mut stage_stream(rng, "deploy", k),
        )?;
        let record = StageRecord {
            stage: k,
            trained_on: s1.origin().to_string(),
            deployed_samples: deployed.len(),
            effective_threshold: threshold,
            hcope_bound: lagrangian.final_bound().unwrap_or(f64::NAN),
            on_policy_value: on_policy_value(&deployed)?,
            cumulative_margin: 0.0,
            lagrangian,
            policy: policy.clone(),
        };
        history.push(record)?;
        previous = Some(policy);
        data = deployed;
    }
    Ok(history)
}
