//! Ground-truth metrics computed against the environment's exact q.
//!
//! Contexts are sampled; the expectation over actions is always summed
//! exactly, so the only Monte-Carlo error comes from p(x).

use std::io::Write;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::fmt_real;
use crate::environment::{Environment, LoggingPolicySpec};
use crate::error::{invalid, Error, Result};
use crate::policy::Policy;
use crate::reward_model::RewardPredictor;
use crate::rng::RngStream;

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std_error = if v.len() > 1 {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error }
    }
}

fn check_n(n_contexts: usize) -> Result<()> {
    if n_contexts == 0 {
        return Err(invalid("n_contexts must be >= 1"));
    }
    Ok(())
}

/// Rows per evaluation chunk; bounds memory at large action counts.
const CHUNK: usize = 4096;

fn chunked<F>(contexts: ArrayView2<f64>, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(ArrayView2<f64>, &mut Vec<f64>) -> Result<()>,
{
    let mut out = Vec::with_capacity(contexts.nrows());
    let mut start = 0;
    while start < contexts.nrows() {
        let end = (start + CHUNK).min(contexts.nrows());
        f(contexts.slice(s![start..end, ..]), &mut out)?;
        start = end;
    }
    Ok(out)
}

/// Σ_a π(a|x_i) q(x_i, e_a) for each context row.
pub fn per_context_values(
    env: &Environment,
    policy: &dyn Policy,
    contexts: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    chunked(contexts, |ctx, out| {
        let probs = policy.probabilities(ctx)?;
        let q = env.reward_matrix(ctx)?;
        if probs.dim() != q.dim() {
            return Err(Error::DimensionMismatch {
                expected: q.ncols(),
                actual: probs.ncols(),
            });
        }
        out.extend(
            probs
                .rows()
                .into_iter()
                .zip(q.rows())
                .map(|(p, q)| p.dot(&q)),
        );
        Ok(())
    })
}

/// Σ_{a ∉ A₀} π(a|x_i) for each context row.
pub fn per_context_novelty(
    env: &Environment,
    policy: &dyn Policy,
    contexts: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    chunked(contexts, |ctx, out| {
        let probs = policy.probabilities(ctx)?;
        if probs.ncols() != env.n_actions() {
            return Err(Error::DimensionMismatch {
                expected: env.n_actions(),
                actual: probs.ncols(),
            });
        }
        out.extend(
            probs
                .slice(s![.., env.n_supported()..])
                .rows()
                .into_iter()
                .map(|r| r.sum()),
        );
        Ok(())
    })
}

/// V(π) on a fixed set of contexts.
pub fn policy_value_on(
    env: &Environment,
    policy: &dyn Policy,
    contexts: ArrayView2<f64>,
) -> Result<Estimate> {
    check_n(contexts.nrows())?;
    Ok(Estimate::from_samples(&per_context_values(
        env, policy, contexts,
    )?))
}

/// N(π) on a fixed set of contexts.
pub fn novelty_on(
    env: &Environment,
    policy: &dyn Policy,
    contexts: ArrayView2<f64>,
) -> Result<Estimate> {
    check_n(contexts.nrows())?;
    Ok(Estimate::from_samples(&per_context_novelty(
        env, policy, contexts,
    )?))
}

/// V(π) = E[r] over fresh contexts.
pub fn exact_policy_value(
    env: &Environment,
    policy: &dyn Policy,
    n_contexts: usize,
    rng: &mut RngStream,
) -> Result<Estimate> {
    check_n(n_contexts)?;
    let ctx = env.sample_contexts(n_contexts, rng);
    policy_value_on(env, policy, ctx.view())
}

/// N(π) = P(a ∉ A₀) over fresh contexts.
pub fn novelty(
    env: &Environment,
    policy: &dyn Policy,
    n_contexts: usize,
    rng: &mut RngStream,
) -> Result<Estimate> {
    check_n(n_contexts)?;
    let ctx = env.sample_contexts(n_contexts, rng);
    novelty_on(env, policy, ctx.view())
}

/// Fixed probe contexts with their true reward matrix, so many policies can
/// be scored without re-evaluating q.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    contexts: Array2<f64>,
    q: Array2<f64>,
    n_supported: usize,
}

impl ProbeSet {
    pub fn new(env: &Environment, contexts: Array2<f64>) -> Result<Self> {
        check_n(contexts.nrows())?;
        let mut q = Array2::zeros((contexts.nrows(), env.n_actions()));
        let mut start = 0;
        while start < contexts.nrows() {
            let end = (start + CHUNK).min(contexts.nrows());
            q.slice_mut(s![start..end, ..])
                .assign(&env.reward_matrix(contexts.slice(s![start..end, ..]))?);
            start = end;
        }
        Ok(Self {
            contexts,
            q,
            n_supported: env.n_supported(),
        })
    }

    pub fn sample(env: &Environment, n_contexts: usize, rng: &mut RngStream) -> Result<Self> {
        check_n(n_contexts)?;
        Self::new(env, env.sample_contexts(n_contexts, rng))
    }

    pub fn contexts(&self) -> ArrayView2<'_, f64> {
        self.contexts.view()
    }

    pub fn rewards(&self) -> ArrayView2<'_, f64> {
        self.q.view()
    }

    fn per_row<F>(&self, policy: &dyn Policy, mut f: F) -> Result<Vec<f64>>
    where
        F: FnMut(ArrayView2<f64>, usize, &mut Vec<f64>),
    {
        let mut start = 0;
        chunked(self.contexts.view(), |ctx, out| {
            let probs = policy.probabilities(ctx)?;
            if probs.ncols() != self.q.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: self.q.ncols(),
                    actual: probs.ncols(),
                });
            }
            f(probs.view(), start, out);
            start += ctx.nrows();
            Ok(())
        })
    }

    pub fn value(&self, policy: &dyn Policy) -> Result<Estimate> {
        let v = self.per_row(policy, |probs, start, out| {
            for (i, p) in probs.rows().into_iter().enumerate() {
                out.push(p.dot(&self.q.row(start + i)));
            }
        })?;
        Ok(Estimate::from_samples(&v))
    }

    pub fn novelty(&self, policy: &dyn Policy) -> Result<Estimate> {
        let k = self.n_supported;
        let v = self.per_row(policy, |probs, _, out| {
            out.extend(probs.slice(s![.., k..]).rows().into_iter().map(|r| r.sum()));
        })?;
        Ok(Estimate::from_samples(&v))
    }

    /// V(π₀) for the softmax logging policy, computed from the stored reward
    /// matrix instead of re-evaluating q through the environment.
    pub fn logging_value(&self, env: &Environment, spec: LoggingPolicySpec) -> Result<Estimate> {
        if env.n_actions() != self.q.ncols() || env.n_supported() != self.n_supported {
            return Err(Error::DimensionMismatch {
                expected: self.q.ncols(),
                actual: env.n_actions(),
            });
        }
        let mut v = Vec::with_capacity(self.q.nrows());
        let mut start = 0;
        while start < self.q.nrows() {
            let end = (start + CHUNK).min(self.q.nrows());
            let q = self.q.slice(s![start..end, ..]).to_owned();
            let probs = env.logging_probs_from_rewards(spec, &q);
            v.extend(
                probs
                    .rows()
                    .into_iter()
                    .zip(q.rows())
                    .map(|(p, q)| p.dot(&q)),
            );
            start = end;
        }
        Ok(Estimate::from_samples(&v))
    }

    /// [`MetricReport`] for `policy` against a baseline value and threshold.
    pub fn report(
        &self,
        policy: &dyn Policy,
        baseline_value: f64,
        threshold: f64,
    ) -> Result<MetricReport> {
        Ok(MetricReport::new(
            self.value(policy)?.mean,
            baseline_value,
            self.novelty(policy)?.mean,
            threshold,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub true_value: f64,
    pub relative_value: f64,
    pub novelty: f64,
    pub violated: bool,
}

impl MetricReport {
    pub fn new(true_value: f64, baseline_value: f64, novelty: f64, threshold: f64) -> Self {
        Self {
            true_value,
            relative_value: true_value / baseline_value,
            novelty,
            violated: true_value < threshold,
        }
    }
}

/// Value, relative value and novelty of `policy` on shared probe contexts.
pub fn evaluate_policy(
    env: &Environment,
    policy: &dyn Policy,
    baseline_value: f64,
    threshold: f64,
    contexts: ArrayView2<f64>,
) -> Result<MetricReport> {
    let v = policy_value_on(env, policy, contexts)?;
    let n = novelty_on(env, policy, contexts)?;
    Ok(MetricReport::new(v.mean, baseline_value, n.mean, threshold))
}

/// Fraction of values strictly below `threshold`.
pub fn violation_rate(values: &[f64], threshold: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(values.iter().filter(|&&v| v < threshold).count() as f64 / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    SafeImproved,
    NotImproved,
}

impl Truth {
    /// Improved iff the true value strictly exceeds the baseline's.
    pub fn from_values(true_value: f64, baseline_value: f64) -> Self {
        if true_value > baseline_value {
            Truth::SafeImproved
        } else {
            Truth::NotImproved
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HypothesisOutcome {
    pub decision: Decision,
    pub truth: Truth,
}

/// Positive iff the validation estimate strictly exceeds the baseline's
/// on-policy value.
pub fn validation_hypothesis_test(estimate: f64, baseline_on_policy: f64) -> Decision {
    if estimate > baseline_on_policy {
        Decision::Positive
    } else {
        Decision::Negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionTally {
    pub true_positive: usize,
    pub false_negative: usize,
    pub false_positive: usize,
    pub true_negative: usize,
}

impl ConfusionTally {
    pub fn from_outcomes(outcomes: &[HypothesisOutcome]) -> Self {
        let mut t = Self::default();
        for o in outcomes {
            match (o.truth, o.decision) {
                (Truth::SafeImproved, Decision::Positive) => t.true_positive += 1,
                (Truth::SafeImproved, Decision::Negative) => t.false_negative += 1,
                (Truth::NotImproved, Decision::Positive) => t.false_positive += 1,
                (Truth::NotImproved, Decision::Negative) => t.true_negative += 1,
            }
        }
        t
    }

    /// Share of not-improved policies flagged positive; `None` if there are none.
    pub fn type_i_rate(&self) -> Option<f64> {
        let d = self.false_positive + self.true_negative;
        (d > 0).then(|| self.false_positive as f64 / d as f64)
    }

    /// Share of improved policies flagged negative; `None` if there are none.
    pub fn type_ii_rate(&self) -> Option<f64> {
        let d = self.true_positive + self.false_negative;
        (d > 0).then(|| self.false_negative as f64 / d as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSummary {
    pub mean_predicted: f64,
    pub mean_true: f64,
    pub mse: f64,
}

impl PartitionSummary {
    /// Mean predicted minus mean true reward.
    pub fn signed_gap(&self) -> f64 {
        self.mean_predicted - self.mean_true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub partition: &'static str,
    pub source: &'static str,
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModelDiagnostics {
    pub supported: PartitionSummary,
    pub novel: PartitionSummary,
    pub histogram: Vec<HistogramRow>,
}

pub const HISTOGRAM_BINS: usize = 20;

fn summarize(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> PartitionSummary {
    let n = pred.len() as f64;
    PartitionSummary {
        mean_predicted: pred.sum() / n,
        mean_true: truth.sum() / n,
        mse: pred
            .iter()
            .zip(truth.iter())
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / n,
    }
}

fn histogram(
    values: ArrayView2<f64>,
    partition: &'static str,
    source: &'static str,
) -> Vec<HistogramRow> {
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &v in values {
        let b = ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(b, &count)| HistogramRow {
            partition,
            source,
            bin_low: b as f64 / HISTOGRAM_BINS as f64,
            bin_high: (b + 1) as f64 / HISTOGRAM_BINS as f64,
            count,
        })
        .collect()
}

/// Predicted vs. true rewards over fresh contexts, split by partition.
pub fn reward_model_diagnostics(
    model: &dyn RewardPredictor,
    env: &Environment,
    n_contexts: usize,
    rng: &mut RngStream,
) -> Result<RewardModelDiagnostics> {
    check_n(n_contexts)?;
    let ctx = env.sample_contexts(n_contexts, rng);
    let truth: Array2<f64> = env.reward_matrix(ctx.view())?;
    let pred = model.predict_matrix(ctx.view(), env.action_features())?;
    if pred.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.ncols(),
            actual: pred.ncols(),
        });
    }
    let k = env.n_supported();
    let (ps, pn) = (pred.slice(s![.., ..k]), pred.slice(s![.., k..]));
    let (ts, tn) = (truth.slice(s![.., ..k]), truth.slice(s![.., k..]));
    let mut hist = histogram(ps, "supported", "predicted");
    hist.extend(histogram(ts, "supported", "true"));
    hist.extend(histogram(pn, "novel", "predicted"));
    hist.extend(histogram(tn, "novel", "true"));
    Ok(RewardModelDiagnostics {
        supported: summarize(ps, ts),
        novel: summarize(pn, tn),
        histogram: hist,
    })
}

impl RewardModelDiagnostics {
    pub fn write_histogram_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["partition", "source", "bin_low", "bin_high", "count"])?;
        for r in &self.histogram {
            w.write_record([
                r.partition.to_string(),
                r.source.to_string(),
                format!("{:.2}", r.bin_low),
                format!("{:.2}", r.bin_high),
                r.count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "partition",
            "mean_predicted",
            "mean_true",
            "signed_gap",
            "mse",
        ])?;
        for (name, p) in [("supported", &self.supported), ("novel", &self.novel)] {
            w.write_record([
                name.to_string(),
                fmt_real(p.mean_predicted),
                fmt_real(p.mean_true),
                fmt_real(p.signed_gap()),
                fmt_real(p.mse),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
