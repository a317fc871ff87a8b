//! Off-policy value estimators and the high-confidence lower bound.
//!
//! The lower bound is the empirical-Bernstein bound on clipped importance
//! weighted rewards `z_i = min(π/π₀, τ)·r_i`:
//!
//! ```text
//! E_n[z] − sqrt(2 ln(2/δ) V_n(z) / (n−1)) − 7 z_max ln(2/δ) / (3(n−1)),   z_max = τ·r_max
//! ```
//!
//! `τ` is picked on a small tuning fold and the bound is then evaluated on the
//! remaining samples.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{s1_count, BanditDataset};
use crate::error::{invalid, Error, Result};
use crate::policy::Policy;
use crate::reward_model::RewardPredictor;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    pub threshold: f64,
    pub delta: f64,
}

impl SafetySpec {
    pub fn new(threshold: f64, delta: f64) -> Result<Self> {
        let spec = Self { threshold, delta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(invalid("safety threshold must be finite"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HcopeConfig {
    pub tau_grid: Vec<f64>,
    pub tuning_fraction: f64,
    pub delta: f64,
    pub r_max: f64,
}

impl Default for HcopeConfig {
    fn default() -> Self {
        Self {
            tau_grid: (-1..=10).map(|k| 2f64.powi(k)).collect(),
            tuning_fraction: 1.0 / 20.0,
            delta: 0.05,
            r_max: 1.0,
        }
    }
}

impl HcopeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() {
            return Err(invalid("tau_grid must be non-empty"));
        }
        if self.tau_grid.iter().any(|t| !(*t > 0.0) || !t.is_finite())
            || self.tau_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(invalid("tau_grid must be positive and strictly increasing"));
        }
        if !(self.tuning_fraction > 0.0 && self.tuning_fraction < 1.0) {
            return Err(invalid("tuning_fraction must lie in (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if !(self.r_max > 0.0) {
            return Err(invalid("r_max must be > 0"));
        }
        Ok(())
    }
}

fn require_non_empty(data: &BanditDataset) -> Result<()> {
    if data.is_empty() {
        Err(Error::EmptyDataset)
    } else {
        Ok(())
    }
}

fn check_propensities(data: &BanditDataset) -> Result<()> {
    for (i, s) in data.samples().iter().enumerate() {
        if !(s.propensity > 0.0) {
            return Err(Error::InvalidPropensity {
                index: i,
                value: s.propensity,
            });
        }
    }
    Ok(())
}

/// π(a_i|x_i) for every logged pair.
pub fn target_propensities(policy: &dyn Policy, data: &BanditDataset) -> Result<Vec<f64>> {
    let actions: Vec<usize> = data.samples().iter().map(|s| s.action).collect();
    policy.pair_probabilities(data.context_matrix().view(), &actions)
}

/// w_i = π(a_i|x_i) / π₀(a_i|x_i).
pub fn importance_weights(policy: &dyn Policy, data: &BanditDataset) -> Result<Vec<f64>> {
    check_propensities(data)?;
    let target = target_propensities(policy, data)?;
    Ok(target
        .iter()
        .zip(data.samples())
        .map(|(p, s)| p / s.propensity)
        .collect())
}

/// Mean observed reward: the on-policy value of whoever logged the data.
pub fn on_policy_value(data: &BanditDataset) -> Result<f64> {
    require_non_empty(data)?;
    Ok(data.rewards().sum::<f64>() / data.len() as f64)
}

pub fn ope_ips(policy: &dyn Policy, data: &BanditDataset) -> Result<f64> {
    require_non_empty(data)?;
    let w = importance_weights(policy, data)?;
    Ok(w.iter()
        .zip(data.rewards())
        .map(|(w, r)| w * r)
        .sum::<f64>()
        / data.len() as f64)
}

pub fn clipped_terms(weights: &[f64], data: &BanditDataset, tau: f64) -> Vec<f64> {
    weights
        .iter()
        .zip(data.rewards())
        .map(|(w, r)| w.min(tau) * r)
        .collect()
}

pub fn ope_clipped_ips(policy: &dyn Policy, data: &BanditDataset, tau: f64) -> Result<f64> {
    require_non_empty(data)?;
    if !(tau > 0.0) {
        return Err(invalid(format!("tau must be > 0, got {tau}")));
    }
    let w = importance_weights(policy, data)?;
    Ok(clipped_terms(&w, data, tau).iter().sum::<f64>() / data.len() as f64)
}

/// Σ_a π(a|x_i) q̂(x_i, e_a) per logged context, along with the full q̂ matrix.
fn model_baseline(
    policy: &dyn Policy,
    data: &BanditDataset,
    model: &dyn RewardPredictor,
    action_features: ArrayView2<f64>,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let ctx = data.context_matrix();
    let probs = policy.probabilities(ctx.view())?;
    let q_hat = model.predict_matrix(ctx.view(), action_features)?;
    if q_hat.dim() != probs.dim() {
        return Err(Error::DimensionMismatch {
            expected: probs.ncols(),
            actual: q_hat.ncols(),
        });
    }
    let baseline = probs
        .rows()
        .into_iter()
        .zip(q_hat.rows())
        .map(|(p, q)| p.dot(&q))
        .collect();
    Ok((baseline, q_hat))
}

pub fn ope_dm(
    policy: &dyn Policy,
    data: &BanditDataset,
    model: &dyn RewardPredictor,
    action_features: ArrayView2<f64>,
) -> Result<f64> {
    require_non_empty(data)?;
    let (baseline, _) = model_baseline(policy, data, model, action_features)?;
    Ok(baseline.iter().sum::<f64>() / data.len() as f64)
}

pub fn ope_dr(
    policy: &dyn Policy,
    data: &BanditDataset,
    model: &dyn RewardPredictor,
    action_features: ArrayView2<f64>,
) -> Result<f64> {
    require_non_empty(data)?;
    let w = importance_weights(policy, data)?;
    let (baseline, q_hat) = model_baseline(policy, data, model, action_features)?;
    let total: f64 = data
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| baseline[i] + w[i] * (s.reward - q_hat[[i, s.action]]))
        .sum();
    Ok(total / data.len() as f64)
}

fn mean_and_variance(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = if z.len() > 1 {
        z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

fn bernstein_expression(mean: f64, var: f64, z_max: f64, n: usize, delta: f64) -> f64 {
    let log_term = (2.0 / delta).ln();
    let m = (n - 1) as f64;
    mean - (2.0 * log_term * var / m).sqrt() - 7.0 * z_max * log_term / (3.0 * m)
}

/// Empirical-Bernstein lower bound on E[z] for z ∈ [0, z_max], using the
/// unbiased sample variance.
pub fn empirical_bernstein_lower_bound(z: &[f64], z_max: f64, delta: f64) -> Result<f64> {
    if z.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: z.len(),
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if let Some((i, &v)) = z
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0 && **v <= z_max))
    {
        return Err(Error::OutOfRange {
            index: i,
            value: v,
            upper: z_max,
        });
    }
    let (mean, var) = mean_and_variance(z);
    Ok(bernstein_expression(mean, var, z_max, z.len(), delta))
}

/// Result of one high-confidence evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HcopeEstimate {
    pub lower_bound: f64,
    pub tau: f64,
    /// Clipped-IPS point estimate on the evaluation fold.
    pub clipped_ips: f64,
}

/// A dataset split once into a τ-tuning fold and an evaluation fold, ready to
/// bound many candidate policies.
#[derive(Debug, Clone)]
pub struct HcopeEvaluator {
    config: HcopeConfig,
    tuning: BanditDataset,
    evaluation: BanditDataset,
    tuning_ctx: Array2<f64>,
    evaluation_ctx: Array2<f64>,
}

impl HcopeEvaluator {
    pub fn new(data: &BanditDataset, config: &HcopeConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        require_non_empty(data)?;
        check_propensities(data)?;
        let n_tune = s1_count(data.len(), config.tuning_fraction);
        if data.len() - n_tune < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                available: data.len() - n_tune,
            });
        }
        let (tuning, evaluation) = if n_tune == 0 {
            (BanditDataset::new(vec![], data.origin()), data.clone())
        } else {
            let split = data.split_dataset(config.tuning_fraction, rng)?;
            (
                split.fold(crate::data::Fold::S1),
                split.fold(crate::data::Fold::S2),
            )
        };
        Ok(Self {
            config: config.clone(),
            tuning_ctx: tuning.context_matrix(),
            evaluation_ctx: evaluation.context_matrix(),
            tuning,
            evaluation,
        })
    }

    pub fn evaluation_fold(&self) -> &BanditDataset {
        &self.evaluation
    }

    pub fn tuning_fold(&self) -> &BanditDataset {
        &self.tuning
    }

    fn weights(
        &self,
        policy: &dyn Policy,
        fold: &BanditDataset,
        ctx: &Array2<f64>,
    ) -> Result<Vec<f64>> {
        if fold.is_empty() {
            return Ok(Vec::new());
        }
        let actions: Vec<usize> = fold.samples().iter().map(|s| s.action).collect();
        let probs = policy.pair_probabilities(ctx.view(), &actions)?;
        Ok(probs
            .iter()
            .zip(fold.samples())
            .map(|(p, s)| p / s.propensity)
            .collect())
    }

    /// Picks τ on the tuning fold (penalties sized for the evaluation fold),
    /// then bounds the evaluation fold with it.
    pub fn estimate(&self, policy: &dyn Policy) -> Result<HcopeEstimate> {
        let n_eval = self.evaluation.len();
        let delta = self.config.delta;
        let tune_w = self.weights(policy, &self.tuning, &self.tuning_ctx)?;
        let tau = if tune_w.is_empty() {
            *self.config.tau_grid.last().expect("validated non-empty")
        } else {
            let mut best = (f64::NEG_INFINITY, self.config.tau_grid[0]);
            for &tau in &self.config.tau_grid {
                let z = clipped_terms(&tune_w, &self.tuning, tau);
                let (mean, var) = mean_and_variance(&z);
                let b = bernstein_expression(mean, var, tau * self.config.r_max, n_eval, delta);
                if b > best.0 {
                    best = (b, tau);
                }
            }
            best.1
        };
        let eval_w = self.weights(policy, &self.evaluation, &self.evaluation_ctx)?;
        let z = clipped_terms(&eval_w, &self.evaluation, tau);
        let clipped_ips = z.iter().sum::<f64>() / n_eval as f64;
        let lower_bound = empirical_bernstein_lower_bound(&z, tau * self.config.r_max, delta)?;
        Ok(HcopeEstimate {
            lower_bound,
            tau,
            clipped_ips,
        })
    }

    pub fn lower_bound(&self, policy: &dyn Policy) -> Result<f64> {
        Ok(self.estimate(policy)?.lower_bound)
    }
}

/// High-confidence lower bound on V(π) from `data`, carving the τ-tuning fold
/// out of `data` itself.
pub fn hcope_lower_bound(
    policy: &dyn Policy,
    data: &BanditDataset,
    config: &HcopeConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    HcopeEvaluator::new(data, config, rng)?.lower_bound(policy)
}
