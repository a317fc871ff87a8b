//! Policy learners.
//!
//! All learners ascend `(1−α)·V̂ + α·H + λ·R` over softmax policies, where
//! `V̂` is the model-based value `E_n[Σ_a π(a|x_i) q̂(x_i, e_a)]`, `H` the
//! empirical entropy and `R = E_n[r_i log π(a_i|x_i)]` the imitation
//! regularizer. Plain OPG keeps `λ = 0`; Safe OPG adapts `λ` by projected
//! descent on the gap between a high-confidence lower bound (computed on a
//! held-out fold) and the safety threshold.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::BanditDataset;
use crate::environment::{Environment, LoggingPolicy, LoggingPolicySpec};
use crate::error::{invalid, Error, Result};
use crate::estimators::{HcopeConfig, HcopeEvaluator, SafetySpec};
use crate::nn::GradientBuffer;
use crate::policy::{row_entropies, Policy, SoftmaxPolicy};
use crate::reward_model::RewardPredictor;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta_psi: f64,
    pub eta_lambda: f64,
    pub steps: usize,
    pub entropy_alpha: f64,
    pub batch_contexts: usize,
    pub rescale_gradient: bool,
    /// Run the λ update every this many policy steps.
    pub lambda_update_interval: usize,
    pub policy_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::opg()
    }
}

impl TrainConfig {
    /// Defaults for the unconstrained baselines.
    pub fn opg() -> Self {
        Self {
            eta_psi: 0.1,
            eta_lambda: 0.01,
            steps: 10_000,
            entropy_alpha: 0.1,
            batch_contexts: 1024,
            rescale_gradient: true,
            lambda_update_interval: 1,
            policy_hidden: 100,
        }
    }

    /// Defaults for the primal-dual learner.
    pub fn safe_opg() -> Self {
        Self {
            eta_psi: 0.001,
            ..Self::opg()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_psi > 0.0) || !(self.eta_lambda > 0.0) {
            return Err(invalid("learning rates must be > 0"));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.entropy_alpha) {
            return Err(invalid("entropy_alpha must lie in [0, 1)"));
        }
        if self.batch_contexts == 0 || self.lambda_update_interval == 0 || self.policy_hidden == 0 {
            return Err(invalid(
                "batch_contexts, lambda_update_interval and policy_hidden must be >= 1",
            ));
        }
        Ok(())
    }
}

/// One row of a training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lambda: f64,
    /// NaN on steps where the bound was not evaluated.
    pub lower_bound: f64,
    pub batch_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LagrangianState {
    pub lambda: f64,
    pub trace: Vec<TraceRow>,
}

impl LagrangianState {
    /// Projected dual step: `λ ← max(λ − η_λ (bound − C), 0)`.
    pub fn update(&mut self, lower_bound: f64, threshold: f64, eta_lambda: f64) -> f64 {
        self.lambda = (self.lambda - eta_lambda * (lower_bound - threshold)).max(0.0);
        self.lambda
    }

    /// Last evaluated lower bound.
    pub fn final_bound(&self) -> Option<f64> {
        self.trace
            .iter()
            .rev()
            .map(|r| r.lower_bound)
            .find(|b| !b.is_nan())
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "lambda", "hcope_lower_bound", "batch_objective"])?;
        for r in &self.trace {
            w.write_record([
                r.step.to_string(),
                crate::data::fmt_real(r.lambda),
                crate::data::fmt_real(r.lower_bound),
                crate::data::fmt_real(r.batch_objective),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How λ evolves during Safe OPG.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    Adaptive,
    /// λ held at the given value; the bound is still traced.
    Fixed(f64),
}

/// Weights of the three objective terms.
#[derive(Debug, Clone, Copy)]
struct ObjectiveWeights {
    value: f64,
    entropy: f64,
    regularizer: f64,
}

/// Batch quantities needed by the objective. `actions`/`rewards` may be empty
/// when the regularizer weight is zero.
struct Batch<'a> {
    contexts: ArrayView2<'a, f64>,
    q_hat: ArrayView2<'a, f64>,
    actions: &'a [usize],
    rewards: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default)]
struct ObjectiveParts {
    value: f64,
    entropy: f64,
    regularizer: f64,
}

/// Gradient of the weighted objective through one backward pass. With
/// `rescale`, the result is multiplied by 1 / max π over the batch.
fn objective_gradient(
    policy: &SoftmaxPolicy,
    batch: &Batch<'_>,
    weights: ObjectiveWeights,
    rescale: bool,
) -> Result<(GradientBuffer, ObjectiveParts)> {
    let n = batch.contexts.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let (cache, probs) = policy.forward_cached(batch.contexts)?;
    let k = probs.ncols();
    if batch.q_hat.dim() != probs.dim() {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: batch.q_hat.ncols(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let entropies = row_entropies(&probs);
    let mut d_scores = Array2::<f64>::zeros((n, k));
    let mut parts = ObjectiveParts::default();
    for i in 0..n {
        let p = probs.row(i);
        let q = batch.q_hat.row(i);
        let v_i = p.dot(&q);
        let h_i = entropies[i];
        parts.value += v_i * inv_n;
        parts.entropy += h_i * inv_n;
        let mut d = d_scores.row_mut(i);
        for b in 0..k {
            let pb = p[b];
            // ∂/∂f_b of Σ_a π_a q_a = π_b (q_b − v)
            let dv = pb * (q[b] - v_i);
            // ∂/∂f_b of −Σ_a π_a log π_a = −π_b (log π_b + H)
            let dh = if pb > 0.0 { -pb * (pb.ln() + h_i) } else { 0.0 };
            d[b] = (weights.value * dv + weights.entropy * dh) * inv_n;
        }
        if weights.regularizer != 0.0 {
            let (a, r) = (batch.actions[i], batch.rewards[i]);
            parts.regularizer += r * p[a].ln() * inv_n;
            // ∂/∂f_b of r log π_a = r (1{a=b} − π_b)
            if r != 0.0 {
                for b in 0..k {
                    d[b] -= weights.regularizer * r * p[b] * inv_n;
                }
                d[a] += weights.regularizer * r * inv_n;
            }
        }
    }
    let mut grad = policy.backprop_scores(&cache, d_scores.view());
    if rescale {
        let max_p = probs.iter().fold(0.0f64, |m, &v| m.max(v));
        grad.scale(1.0 / max_p);
    }
    Ok((grad, parts))
}

fn check_model_shape(q_hat: &Array2<f64>, policy: &SoftmaxPolicy) -> Result<()> {
    if q_hat.ncols() != policy.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: policy.n_actions(),
            actual: q_hat.ncols(),
        });
    }
    Ok(())
}

/// `E_n[Σ_a π(a|x_i) q̂(x_i,e_a) ∇log π(a|x_i)]` over every sample of `data`.
pub fn value_gradient(
    policy: &SoftmaxPolicy,
    data: &BanditDataset,
    model: &dyn RewardPredictor,
    action_features: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<GradientBuffer> {
    let ctx = data.context_matrix();
    let q_hat = model.predict_matrix(ctx.view(), action_features)?;
    check_model_shape(&q_hat, policy)?;
    let batch = Batch {
        contexts: ctx.view(),
        q_hat: q_hat.view(),
        actions: &[],
        rewards: &[],
    };
    let w = ObjectiveWeights {
        value: 1.0,
        entropy: 0.0,
        regularizer: 0.0,
    };
    Ok(objective_gradient(policy, &batch, w, cfg.rescale_gradient)?.0)
}

/// Gradient of the empirical entropy `−E_n[Σ_a π log π]`.
pub fn entropy_gradient(
    policy: &SoftmaxPolicy,
    contexts: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<GradientBuffer> {
    let zeros = Array2::zeros((contexts.nrows(), policy.n_actions()));
    let batch = Batch {
        contexts,
        q_hat: zeros.view(),
        actions: &[],
        rewards: &[],
    };
    let w = ObjectiveWeights {
        value: 0.0,
        entropy: 1.0,
        regularizer: 0.0,
    };
    Ok(objective_gradient(policy, &batch, w, cfg.rescale_gradient)?.0)
}

/// `R = E_n[r_i log π(a_i|x_i)]` and its gradient.
pub fn regularizer_value_and_gradient(
    policy: &SoftmaxPolicy,
    data: &BanditDataset,
) -> Result<(f64, GradientBuffer)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ctx = data.context_matrix();
    let zeros = Array2::zeros((data.len(), policy.n_actions()));
    let actions: Vec<usize> = data.samples().iter().map(|s| s.action).collect();
    let rewards: Vec<f64> = data.rewards().collect();
    let batch = Batch {
        contexts: ctx.view(),
        q_hat: zeros.view(),
        actions: &actions,
        rewards: &rewards,
    };
    let w = ObjectiveWeights {
        value: 0.0,
        entropy: 0.0,
        regularizer: 1.0,
    };
    let (g, parts) = objective_gradient(policy, &batch, w, false)?;
    Ok((parts.regularizer, g))
}

/// Model-based value `E_n[Σ_a π q̂]` on fixed contexts.
pub fn dm_objective(
    policy: &dyn Policy,
    contexts: ArrayView2<f64>,
    q_hat: ArrayView2<f64>,
) -> Result<f64> {
    let p = policy.probabilities(contexts)?;
    Ok((&p * &q_hat).sum() / contexts.nrows() as f64)
}

/// Everything a learner needs from one training fold, precomputed once.
struct TrainingFold {
    contexts: Array2<f64>,
    q_hat: Array2<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl TrainingFold {
    fn new(
        data: &BanditDataset,
        model: &dyn RewardPredictor,
        action_features: ArrayView2<f64>,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let contexts = data.context_matrix();
        let q_hat = model.predict_matrix(contexts.view(), action_features)?;
        Ok(Self {
            contexts,
            q_hat,
            actions: data.samples().iter().map(|s| s.action).collect(),
            rewards: data.rewards().collect(),
        })
    }

    fn len(&self) -> usize {
        self.contexts.nrows()
    }
}

/// Reusable batch buffers; full-batch training borrows the fold directly.
struct BatchSampler {
    size: usize,
    rng: RngStream,
    contexts: Array2<f64>,
    q_hat: Array2<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl BatchSampler {
    fn new(fold: &TrainingFold, size: usize, rng: RngStream) -> Self {
        let b = size.min(fold.len());
        Self {
            size,
            rng,
            contexts: Array2::zeros((b, fold.contexts.ncols())),
            q_hat: Array2::zeros((b, fold.q_hat.ncols())),
            actions: vec![0; b],
            rewards: vec![0.0; b],
        }
    }

    fn next<'a>(&'a mut self, fold: &'a TrainingFold) -> Batch<'a> {
        if self.size >= fold.len() {
            return Batch {
                contexts: fold.contexts.view(),
                q_hat: fold.q_hat.view(),
                actions: &fold.actions,
                rewards: &fold.rewards,
            };
        }
        let mut idx = rand::seq::index::sample(&mut self.rng, fold.len(), self.size).into_vec();
        idx.sort_unstable();
        for (row, &i) in idx.iter().enumerate() {
            self.contexts.row_mut(row).assign(&fold.contexts.row(i));
            self.q_hat.row_mut(row).assign(&fold.q_hat.row(i));
            self.actions[row] = fold.actions[i];
            self.rewards[row] = fold.rewards[i];
        }
        Batch {
            contexts: self.contexts.view(),
            q_hat: self.q_hat.view(),
            actions: &self.actions,
            rewards: &self.rewards,
        }
    }
}

fn init_policy(
    d_x: usize,
    n_actions: usize,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<SoftmaxPolicy> {
    SoftmaxPolicy::new(d_x, cfg.policy_hidden, n_actions, &mut rng.fork("init"))
}

/// Unconstrained model-based policy gradient on all of `data`.
pub fn train_opg(
    data: &BanditDataset,
    model: &dyn RewardPredictor,
    action_features: ArrayView2<f64>,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<SoftmaxPolicy> {
    train_opg_from(None, data, model, action_features, cfg, rng)
}

/// [`train_opg`] with an optional warm start; `steps = 0` is allowed here and
/// returns the initial policy.
pub fn train_opg_from(
    start: Option<SoftmaxPolicy>,
    data: &BanditDataset,
    model: &dyn RewardPredictor,
    action_features: ArrayView2<f64>,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<SoftmaxPolicy> {
    let fold = TrainingFold::new(data, model, action_features)?;
    let mut policy = match start {
        Some(p) => p,
        None => init_policy(fold.contexts.ncols(), action_features.nrows(), cfg, rng)?,
    };
    check_model_shape(&fold.q_hat, &policy)?;
    let weights = ObjectiveWeights {
        value: 1.0 - cfg.entropy_alpha,
        entropy: cfg.entropy_alpha,
        regularizer: 0.0,
    };
    let mut sampler = BatchSampler::new(&fold, cfg.batch_contexts, rng.fork("batches"));
    for _ in 0..cfg.steps {
        let batch = sampler.next(&fold);
        let (g, _) = objective_gradient(&policy, &batch, weights, cfg.rescale_gradient)?;
        policy.step(&g, cfg.eta_psi);
    }
    Ok(policy)
}

/// Primal-dual Safe OPG: gradients from `data_s1` only, λ driven by the
/// high-confidence bound on `data_s2`.
#[allow(clippy::too_many_arguments)]
pub fn train_safe_opg(
    data_s1: &BanditDataset,
    data_s2: &BanditDataset,
    safety: SafetySpec,
    hcope_cfg: &HcopeConfig,
    model: &dyn RewardPredictor,
    action_features: ArrayView2<f64>,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(SoftmaxPolicy, LagrangianState)> {
    train_safe_opg_with(
        None,
        data_s1,
        data_s2,
        safety,
        hcope_cfg,
        model,
        action_features,
        cfg,
        LambdaMode::Adaptive,
        rng,
    )
}

/// [`train_safe_opg`] with an optional warm start and an explicit λ mode.
///
/// Random streams: `init` for the policy, `batches` for mini-batches,
/// `hcope` for the τ-tuning split. The bound's confidence level comes from
/// `safety.delta`.
#[allow(clippy::too_many_arguments)]
pub fn train_safe_opg_with(
    start: Option<SoftmaxPolicy>,
    data_s1: &BanditDataset,
    data_s2: &BanditDataset,
    safety: SafetySpec,
    hcope_cfg: &HcopeConfig,
    model: &dyn RewardPredictor,
    action_features: ArrayView2<f64>,
    cfg: &TrainConfig,
    mode: LambdaMode,
    rng: &RngStream,
) -> Result<(SoftmaxPolicy, LagrangianState)> {
    cfg.validate()?;
    safety.validate()?;
    let shared = data_s1.overlap(data_s2);
    if shared > 0 {
        return Err(Error::FoldLeakage { shared });
    }
    let hcope_cfg = HcopeConfig {
        delta: safety.delta,
        ..hcope_cfg.clone()
    };
    let evaluator = HcopeEvaluator::new(data_s2, &hcope_cfg, &mut rng.fork("hcope"))?;
    let fold = TrainingFold::new(data_s1, model, action_features)?;
    let mut policy = match start {
        Some(p) => p,
        None => init_policy(fold.contexts.ncols(), action_features.nrows(), cfg, rng)?,
    };
    check_model_shape(&fold.q_hat, &policy)?;
    let mut state = LagrangianState {
        lambda: match mode {
            LambdaMode::Adaptive => 0.0,
            LambdaMode::Fixed(l) => l,
        },
        trace: Vec::with_capacity(cfg.steps),
    };
    let mut sampler = BatchSampler::new(&fold, cfg.batch_contexts, rng.fork("batches"));
    for step in 1..=cfg.steps {
        let weights = ObjectiveWeights {
            value: 1.0 - cfg.entropy_alpha,
            entropy: cfg.entropy_alpha,
            regularizer: state.lambda,
        };
        let batch = sampler.next(&fold);
        let (g, parts) = objective_gradient(&policy, &batch, weights, cfg.rescale_gradient)?;
        let batch_objective = weights.value * parts.value
            + weights.entropy * parts.entropy
            + weights.regularizer * parts.regularizer;
        policy.step(&g, cfg.eta_psi);

        let mut bound = f64::NAN;
        if step % cfg.lambda_update_interval == 0 || step == cfg.steps {
            bound = evaluator.lower_bound(&policy)?;
            if mode == LambdaMode::Adaptive {
                state.update(bound, safety.threshold, cfg.eta_lambda);
            }
        }
        state.trace.push(TraceRow {
            step,
            lambda: state.lambda,
            lower_bound: bound,
            batch_objective,
        });
    }
    Ok((policy, state))
}

/// `(1 − mix)·π₀ + mix·Uniform(A \ A₀)`.
#[derive(Debug, Clone, Copy)]
pub struct MixturePolicy<'a> {
    logging: LoggingPolicy<'a>,
    mix: f64,
    n_supported: usize,
    n_actions: usize,
}

impl MixturePolicy<'_> {
    pub fn mix(&self) -> f64 {
        self.mix
    }
}

impl Policy for MixturePolicy<'_> {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn probabilities(&self, contexts: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut p = self.logging.probabilities(contexts)?;
        p *= 1.0 - self.mix;
        let novel_mass = self.mix / (self.n_actions - self.n_supported) as f64;
        p.slice_mut(ndarray::s![.., self.n_supported..])
            .mapv_inplace(|v| v + novel_mass);
        Ok(p)
    }
}

/// Fixed baseline that follows π₀ and spends `mix` uniformly on novel actions.
pub fn naive_safe_exploration(
    logging_spec: LoggingPolicySpec,
    env: &Environment,
    mix: f64,
) -> Result<MixturePolicy<'_>> {
    if env.n_actions() <= env.n_supported() {
        return Err(Error::NoNovelActions);
    }
    if !(0.0..1.0).contains(&mix) {
        return Err(invalid(format!("mix must lie in [0, 1), got {mix}")));
    }
    Ok(MixturePolicy {
        logging: env.logging_policy(logging_spec),
        mix,
        n_supported: env.n_supported(),
        n_actions: env.n_actions(),
    })
}

/// Column means helper used in diagnostics and tests.
pub fn mean_rows(m: &Array2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(m.ncols()))
}
