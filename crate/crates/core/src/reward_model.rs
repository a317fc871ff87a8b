//! Learned reward predictors q̂(x, e_a).
//!
//! Two families share one network shape: a bootstrap ensemble trained on
//! binary cross-entropy (read out as the member mean or member minimum) and a
//! single network trained on BCE plus a conservative penalty that pushes
//! predictions on uniformly sampled actions below those on logged actions.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_real, BanditDataset};
use crate::environment::Environment;
use crate::error::{invalid, Error, Result};
use crate::nn::{forward_pairs, sigmoid, Init, Mlp};
use crate::rng::RngStream;

/// Predicts mean rewards for every (context, action) pair.
pub trait RewardPredictor {
    /// `n × |A|` matrix of q̂(x_i, e_a).
    fn predict_matrix(
        &self,
        contexts: ArrayView2<f64>,
        action_features: ArrayView2<f64>,
    ) -> Result<Array2<f64>>;
}

/// The environment is its own oracle predictor.
impl RewardPredictor for Environment {
    fn predict_matrix(
        &self,
        contexts: ArrayView2<f64>,
        _action_features: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        self.reward_matrix(contexts)
    }
}

/// q̂ ≡ c.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl RewardPredictor for ConstantPredictor {
    fn predict_matrix(
        &self,
        contexts: ArrayView2<f64>,
        action_features: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        Ok(Array2::from_elem(
            (contexts.nrows(), action_features.nrows()),
            self.0,
        ))
    }
}

/// Context-independent q̂(a).
#[derive(Debug, Clone)]
pub struct ActionTablePredictor(pub Vec<f64>);

impl RewardPredictor for ActionTablePredictor {
    fn predict_matrix(
        &self,
        contexts: ArrayView2<f64>,
        action_features: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if action_features.nrows() != self.0.len() {
            return Err(Error::DimensionMismatch {
                expected: self.0.len(),
                actual: action_features.nrows(),
            });
        }
        Ok(Array2::from_shape_fn(
            (contexts.nrows(), self.0.len()),
            |(_, a)| self.0[a],
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardModelVariant {
    NaiveMean,
    MinEnsemble,
    Cql,
}

impl RewardModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NaiveMean => "naive_mean",
            Self::MinEnsemble => "min_ensemble",
            Self::Cql => "cql",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "naive_mean" => Ok(Self::NaiveMean),
            "min_ensemble" => Ok(Self::MinEnsemble),
            "cql" => Ok(Self::Cql),
            other => Err(Error::Format(format!(
                "unknown reward model variant {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardModelConfig {
    pub hidden_widths: [usize; 2],
    pub n_members: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cql_alpha: f64,
    pub n_negatives: usize,
}

impl Default for RewardModelConfig {
    fn default() -> Self {
        Self {
            hidden_widths: [100, 10],
            n_members: 5,
            epochs: 30,
            batch_size: 256,
            learning_rate: 0.01,
            cql_alpha: 2.0,
            n_negatives: 5,
        }
    }
}

impl RewardModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.contains(&0)
            || self.n_members == 0
            || self.epochs == 0
            || self.batch_size == 0
            || self.n_negatives == 0
        {
            return Err(invalid("reward model counts and widths must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("reward model learning_rate must be > 0"));
        }
        if !(self.cql_alpha >= 0.0) {
            return Err(invalid("cql_alpha must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    variant: RewardModelVariant,
    members: Vec<Mlp>,
    cql_alpha: f64,
    epoch_losses: Vec<Vec<f64>>,
}

/// Pre-extracted training inputs: row `i` is `(x_i, e_{a_i})`.
struct TrainingSet<'a> {
    data: &'a BanditDataset,
    features: ArrayView2<'a, f64>,
    d_x: usize,
}

impl TrainingSet<'_> {
    fn inputs(&self, rows: &[usize]) -> Array2<f64> {
        let d_a = self.features.ncols();
        let mut x = Array2::zeros((rows.len(), self.d_x + d_a));
        for (mut out, &i) in x.rows_mut().into_iter().zip(rows) {
            let s = &self.data.samples()[i];
            for (j, v) in s.context.iter().enumerate() {
                out[j] = *v;
            }
            for (j, v) in self.features.row(s.action).iter().enumerate() {
                out[self.d_x + j] = *v;
            }
        }
        x
    }

    fn inputs_with_actions(&self, rows: &[usize], actions: &[usize]) -> Array2<f64> {
        let d_a = self.features.ncols();
        let mut x = Array2::zeros((actions.len(), self.d_x + d_a));
        for (k, (mut out, &a)) in x.rows_mut().into_iter().zip(actions).enumerate() {
            let s = &self.data.samples()[rows[k / (actions.len() / rows.len())]];
            for (j, v) in s.context.iter().enumerate() {
                out[j] = *v;
            }
            for (j, v) in self.features.row(a).iter().enumerate() {
                out[self.d_x + j] = *v;
            }
        }
        x
    }

    fn rewards(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&i| self.data.samples()[i].reward)
            .collect()
    }
}

fn validate_data(data: &BanditDataset, features: ArrayView2<f64>) -> Result<usize> {
    let d_x = data.context_dim().ok_or(Error::EmptyDataset)?;
    for (i, s) in data.samples().iter().enumerate() {
        if s.reward != 0.0 && s.reward != 1.0 {
            return Err(Error::NonBinaryReward {
                index: i,
                value: s.reward,
            });
        }
        if s.action >= features.nrows() {
            return Err(Error::ActionOutOfRange {
                action: s.action,
                n_actions: features.nrows(),
            });
        }
        if s.context.len() != d_x {
            return Err(Error::DimensionMismatch {
                expected: d_x,
                actual: s.context.len(),
            });
        }
    }
    Ok(d_x)
}

fn new_network(d_in: usize, cfg: &RewardModelConfig, rng: &mut RngStream) -> Result<Mlp> {
    Mlp::new(
        &[d_in, cfg.hidden_widths[0], cfg.hidden_widths[1], 1],
        &[Init::GlorotUniform; 3],
        rng,
    )
}

fn bce(p: f64, r: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(r * p.ln() + (1.0 - r) * (1.0 - p).ln())
}

/// Mini-batch gradient descent on BCE plus `alpha · E[q̂(x, a') − q̂(x, a)]`
/// with `a'` uniform. Returns the network and the training objective measured
/// on `rows` after each epoch.
fn fit_network(
    set: &TrainingSet<'_>,
    rows: &[usize],
    cfg: &RewardModelConfig,
    alpha: f64,
    rng: &RngStream,
) -> Result<(Mlp, Vec<f64>)> {
    let d_in = set.d_x + set.features.ncols();
    let mut net = new_network(d_in, cfg, &mut rng.fork("init"))?;
    let mut shuffle_rng = rng.fork("shuffle");
    let mut neg_rng = rng.fork("negatives");
    let n_actions = set.features.nrows();
    let mut order = rows.to_vec();
    let mut losses = Vec::with_capacity(cfg.epochs);
    // negatives reused for the epoch-end objective so it is deterministic
    let eval_negatives: Vec<usize> = (0..rows.len() * cfg.n_negatives)
        .map(|_| neg_rng.random_range(0..n_actions))
        .collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len() as f64;
            let x = set.inputs(batch);
            let r = set.rewards(batch);
            let cache = net.forward_cached(x.view())?;
            let p = cache.output().column(0).mapv(sigmoid);
            let mut d_z = Array2::zeros((batch.len(), 1));
            for i in 0..batch.len() {
                // d BCE / d logit = p - r;  d p / d logit = p (1 - p)
                d_z[[i, 0]] = (p[i] - r[i]) / b - alpha * p[i] * (1.0 - p[i]) / b;
            }
            let mut grad = net.backward(&cache, d_z.view());
            let negatives: Vec<usize> = (0..batch.len() * cfg.n_negatives)
                .map(|_| neg_rng.random_range(0..n_actions))
                .collect();
            if alpha > 0.0 {
                let xn = set.inputs_with_actions(batch, &negatives);
                let cache_n = net.forward_cached(xn.view())?;
                let scale = alpha / (b * cfg.n_negatives as f64);
                let d_zn = cache_n.output().mapv(|z| {
                    let q = sigmoid(z);
                    scale * q * (1.0 - q)
                });
                grad.add_scaled(&net.backward(&cache_n, d_zn.view()), 1.0);
            }
            net.step(&grad, -cfg.learning_rate);
        }
        losses.push(objective(
            &net,
            set,
            rows,
            alpha,
            cfg.n_negatives,
            &eval_negatives,
        )?);
    }
    Ok((net, losses))
}

fn objective(
    net: &Mlp,
    set: &TrainingSet<'_>,
    rows: &[usize],
    alpha: f64,
    n_negatives: usize,
    negatives: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for (k, chunk) in rows.chunks(4096).enumerate() {
        let p = net
            .forward(set.inputs(chunk).view())?
            .column(0)
            .mapv(sigmoid);
        let r = set.rewards(chunk);
        total += p.iter().zip(&r).map(|(&p, &r)| bce(p, r)).sum::<f64>();
        if alpha > 0.0 {
            let start = k * 4096 * n_negatives;
            let neg = &negatives[start..start + chunk.len() * n_negatives];
            let pn = net
                .forward(set.inputs_with_actions(chunk, neg).view())?
                .column(0)
                .mapv(sigmoid);
            total += alpha * (pn.sum() / n_negatives as f64 - p.sum());
        }
    }
    Ok(total / rows.len() as f64)
}

/// Single network trained on plain BCE over all samples (no bootstrap).
pub fn train_bce_network(
    data: &BanditDataset,
    action_features: ArrayView2<f64>,
    config: &RewardModelConfig,
    rng: &RngStream,
) -> Result<(Mlp, Vec<f64>)> {
    config.validate()?;
    let d_x = validate_data(data, action_features)?;
    let set = TrainingSet {
        data,
        features: action_features,
        d_x,
    };
    let rows: Vec<usize> = (0..data.len()).collect();
    fit_network(&set, &rows, config, 0.0, rng)
}

impl RewardModel {
    /// Trains the requested variant. Ensemble members each see an
    /// independent bootstrap resample of the data.
    pub fn train(
        data: &BanditDataset,
        action_features: ArrayView2<f64>,
        config: &RewardModelConfig,
        variant: RewardModelVariant,
        rng: &RngStream,
    ) -> Result<Self> {
        config.validate()?;
        let d_x = validate_data(data, action_features)?;
        let set = TrainingSet {
            data,
            features: action_features,
            d_x,
        };
        let n = data.len();
        let mut members = Vec::new();
        let mut epoch_losses = Vec::new();
        match variant {
            RewardModelVariant::NaiveMean | RewardModelVariant::MinEnsemble => {
                for j in 0..config.n_members {
                    let member_rng = rng.fork_index("member", j as u64);
                    let mut boot_rng = member_rng.fork("bootstrap");
                    let rows: Vec<usize> = (0..n).map(|_| boot_rng.random_range(0..n)).collect();
                    let (net, losses) = fit_network(&set, &rows, config, 0.0, &member_rng)?;
                    members.push(net);
                    epoch_losses.push(losses);
                }
            }
            RewardModelVariant::Cql => {
                let rows: Vec<usize> = (0..n).collect();
                let (net, losses) = fit_network(&set, &rows, config, config.cql_alpha, rng)?;
                members.push(net);
                epoch_losses.push(losses);
            }
        }
        Ok(Self {
            variant,
            members,
            cql_alpha: config.cql_alpha,
            epoch_losses,
        })
    }

    pub fn from_members(
        variant: RewardModelVariant,
        members: Vec<Mlp>,
        cql_alpha: f64,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("reward model needs at least one member"));
        }
        if members
            .iter()
            .any(|m| m.output_dim() != 1 || m.widths() != members[0].widths())
        {
            return Err(invalid(
                "reward model members must share a scalar-output shape",
            ));
        }
        Ok(Self {
            variant,
            epoch_losses: vec![Vec::new(); members.len()],
            members,
            cql_alpha,
        })
    }

    pub fn variant(&self) -> RewardModelVariant {
        self.variant
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn cql_alpha(&self) -> f64 {
        self.cql_alpha
    }

    /// Same members read out under a different ensemble rule.
    pub fn with_variant(&self, variant: RewardModelVariant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Training objective after each epoch, one series per member.
    pub fn epoch_losses(&self) -> &[Vec<f64>] {
        &self.epoch_losses
    }

    /// False when some member's last-epoch loss is not below its first.
    pub fn converged(&self) -> bool {
        self.epoch_losses
            .iter()
            .all(|l| match (l.first(), l.last()) {
                (Some(first), Some(last)) => l.len() == 1 || last < first,
                _ => true,
            })
    }

    /// q̂(x, e_a) for a single pair.
    pub fn predict(&self, x: &[f64], feature: &[f64]) -> Result<f64> {
        let ctx = ArrayView2::from_shape((1, x.len()), x).expect("contiguous");
        let feat = ArrayView2::from_shape((1, feature.len()), feature).expect("contiguous");
        Ok(self.predict_matrix(ctx, feat)?[[0, 0]])
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let widths = self.members[0]
            .widths()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";");
        for (j, m) in self.members.iter().enumerate() {
            let mut out = String::from("variant,widths,n_members,cql_alpha\n");
            out.push_str(&format!(
                "{},{},{},{}\nweight\n",
                self.variant.as_str(),
                widths,
                self.members.len(),
                fmt_real(self.cql_alpha)
            ));
            for v in m.params_flat() {
                out.push_str(&fmt_real(v));
                out.push('\n');
            }
            fs::write(dir.join(format!("member_{j}.csv")), out)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut members = Vec::new();
        let mut meta: Option<(RewardModelVariant, usize, f64)> = None;
        let mut j = 0;
        loop {
            let path = dir.join(format!("member_{j}.csv"));
            if !path.exists() {
                break;
            }
            let mut lines = BufReader::new(fs::File::open(&path)?).lines();
            let mut next = || -> Result<String> {
                lines
                    .next()
                    .ok_or_else(|| Error::Format("truncated model snapshot".into()))?
                    .map_err(Error::from)
            };
            if next()? != "variant,widths,n_members,cql_alpha" {
                return Err(Error::Format("bad model snapshot header".into()));
            }
            let head = next()?;
            let fields: Vec<&str> = head.split(',').collect();
            if fields.len() != 4 || next()? != "weight" {
                return Err(Error::Format("bad model snapshot header".into()));
            }
            let variant = RewardModelVariant::parse(fields[0])?;
            let widths: Vec<usize> = fields[1]
                .split(';')
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::Format(format!("bad width {t:?}")))
                })
                .collect::<Result<_>>()?;
            let n_members: usize = fields[2]
                .parse()
                .map_err(|_| Error::Format("bad member count".into()))?;
            let alpha: f64 = fields[3]
                .parse()
                .map_err(|_| Error::Format("bad cql_alpha".into()))?;
            meta = Some((variant, n_members, alpha));
            let weights: Vec<f64> = lines
                .map(|l| -> Result<f64> {
                    let l = l?;
                    l.parse()
                        .map_err(|_| Error::Format(format!("bad weight {l:?}")))
                })
                .collect::<Result<_>>()?;
            let mut net = Mlp::new(
                &widths,
                &vec![Init::Zeros; widths.len() - 1],
                &mut RngStream::new(0, 0),
            )?;
            net.set_params_flat(&weights)?;
            members.push(net);
            j += 1;
        }
        let (variant, n_members, alpha) =
            meta.ok_or_else(|| Error::Format(format!("no model members in {}", dir.display())))?;
        if n_members != members.len() {
            return Err(Error::Format("member count does not match header".into()));
        }
        Self::from_members(variant, members, alpha)
    }
}

impl RewardPredictor for RewardModel {
    fn predict_matrix(
        &self,
        contexts: ArrayView2<f64>,
        action_features: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let preds = self
            .members
            .iter()
            .map(|m| forward_pairs(m, contexts, action_features).map(|z| z.mapv(sigmoid)))
            .collect::<Result<Vec<_>>>()?;
        let mut out = preds[0].clone();
        match self.variant {
            RewardModelVariant::NaiveMean | RewardModelVariant::Cql => {
                for p in &preds[1..] {
                    out += p;
                }
                out /= preds.len() as f64;
            }
            RewardModelVariant::MinEnsemble => {
                for p in &preds[1..] {
                    ndarray::Zip::from(&mut out)
                        .and(p)
                        .for_each(|o, &v| *o = o.min(v));
                }
            }
        }
        Ok(out)
    }
}

/// Mean squared error of q̂ against the true q, separately over supported and
/// novel actions, across the given contexts.
pub fn extrapolation_gap(
    model: &dyn RewardPredictor,
    env: &Environment,
    contexts: ArrayView2<f64>,
) -> Result<(f64, f64)> {
    let q = env.reward_matrix(contexts)?;
    let q_hat = model.predict_matrix(contexts, env.action_features())?;
    let sq = (&q_hat - &q).mapv(|v| v * v);
    let n_sup = env.n_supported();
    let sup = sq.slice(ndarray::s![.., ..n_sup]);
    let nov = sq.slice(ndarray::s![.., n_sup..]);
    Ok((sup.mean().unwrap_or(0.0), nov.mean().unwrap_or(0.0)))
}

/// Mean over rows of each column, handy for per-action summaries.
pub fn column_means(m: &Array2<f64>) -> Vec<f64> {
    m.mean_axis(Axis(0)).map(|a| a.to_vec()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LoggedSample;
    use crate::environment::{EnvironmentConfig, LoggingPolicySpec};
    use ndarray::array;

    fn quick_cfg() -> RewardModelConfig {
        RewardModelConfig {
            hidden_widths: [16, 8],
            n_members: 3,
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            ..RewardModelConfig::default()
        }
    }

    /// Reward is 1 exactly when action 0 is taken.
    fn separable(n: usize) -> (BanditDataset, Array2<f64>) {
        let mut rng = RngStream::new(1, 0);
        let samples = (0..n)
            .map(|i| LoggedSample {
                context: vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5],
                action: i % 2,
                reward: if i % 2 == 0 { 1.0 } else { 0.0 },
                propensity: 0.5,
            })
            .collect();
        (BanditDataset::new(samples, "toy"), array![[1.0], [-1.0]])
    }

    #[test]
    fn separable_data_is_recovered() {
        let (data, feats) = separable(1000);
        let model = RewardModel::train(
            &data,
            feats.view(),
            &RewardModelConfig {
                hidden_widths: [16, 8],
                ..RewardModelConfig::default()
            },
            RewardModelVariant::NaiveMean,
            &RngStream::new(2, 0),
        )
        .unwrap();
        let correct = data
            .samples()
            .iter()
            .filter(|s| {
                let p = model
                    .predict(&s.context, &feats.row(s.action).to_vec())
                    .unwrap();
                (p > 0.5) == (s.reward == 1.0)
            })
            .count();
        assert!(correct as f64 / 1000.0 >= 0.95);
        assert!(model.converged());
    }

    #[test]
    fn cql_without_penalty_equals_bce_training() {
        let (data, feats) = separable(300);
        let cfg = RewardModelConfig {
            cql_alpha: 0.0,
            ..quick_cfg()
        };
        let rng = RngStream::new(3, 3);
        let cql =
            RewardModel::train(&data, feats.view(), &cfg, RewardModelVariant::Cql, &rng).unwrap();
        let (net, losses) = train_bce_network(&data, feats.view(), &cfg, &rng).unwrap();
        assert_eq!(cql.members()[0], net);
        assert_eq!(cql.epoch_losses()[0], losses);
    }

    #[test]
    fn penalty_vanishes_for_constant_predictor() {
        let (data, feats) = separable(50);
        let set = TrainingSet {
            data: &data,
            features: feats.view(),
            d_x: 2,
        };
        // all-zero network: every output is sigmoid(0) = 0.5
        let net = Mlp::new(&[3, 4, 2, 1], &[Init::Zeros; 3], &mut RngStream::new(0, 0)).unwrap();
        let rows: Vec<usize> = (0..50).collect();
        let negatives: Vec<usize> = (0..250).map(|i| i % 2).collect();
        let with = objective(&net, &set, &rows, 2.0, 5, &negatives).unwrap();
        let without = objective(&net, &set, &rows, 0.0, 5, &negatives).unwrap();
        assert!((with - without).abs() < 1e-15);
        assert!((without - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_data() {
        let (mut data, feats) = separable(10);
        let cfg = quick_cfg();
        let rng = RngStream::new(0, 0);
        let empty = BanditDataset::new(vec![], "x");
        assert!(matches!(
            RewardModel::train(&empty, feats.view(), &cfg, RewardModelVariant::Cql, &rng),
            Err(Error::EmptyDataset)
        ));
        let mut samples = data.samples().to_vec();
        samples[3].reward = 0.5;
        data = BanditDataset::new(samples, "x");
        assert!(matches!(
            RewardModel::train(
                &data,
                feats.view(),
                &cfg,
                RewardModelVariant::NaiveMean,
                &rng
            ),
            Err(Error::NonBinaryReward { index: 3, .. })
        ));
    }

    #[test]
    fn ensemble_readouts() {
        let (data, feats) = separable(200);
        let model = RewardModel::train(
            &data,
            feats.view(),
            &quick_cfg(),
            RewardModelVariant::NaiveMean,
            &RngStream::new(4, 0),
        )
        .unwrap();
        assert_eq!(model.members().len(), 3);
        let min = model.with_variant(RewardModelVariant::MinEnsemble);
        let ctx = array![[0.1, -0.2], [0.4, 0.3], [-0.5, 0.0]];
        let mean_p = model.predict_matrix(ctx.view(), feats.view()).unwrap();
        let min_p = min.predict_matrix(ctx.view(), feats.view()).unwrap();
        assert!(mean_p.iter().zip(&min_p).all(|(m, n)| n <= m));
        assert!(mean_p.iter().all(|&v| v > 0.0 && v < 1.0));

        let same = RewardModel::from_members(
            RewardModelVariant::NaiveMean,
            vec![model.members()[0].clone(); 3],
            0.0,
        )
        .unwrap();
        let a = same.predict_matrix(ctx.view(), feats.view()).unwrap();
        let b = same
            .with_variant(RewardModelVariant::MinEnsemble)
            .predict_matrix(ctx.view(), feats.view())
            .unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn training_is_deterministic() {
        let (data, feats) = separable(200);
        let cfg = quick_cfg();
        let a = RewardModel::train(
            &data,
            feats.view(),
            &cfg,
            RewardModelVariant::Cql,
            &RngStream::new(5, 1),
        )
        .unwrap();
        let b = RewardModel::train(
            &data,
            feats.view(),
            &cfg,
            RewardModelVariant::Cql,
            &RngStream::new(5, 1),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_roundtrip() {
        let (data, feats) = separable(100);
        let model = RewardModel::train(
            &data,
            feats.view(),
            &quick_cfg(),
            RewardModelVariant::MinEnsemble,
            &RngStream::new(6, 0),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.write_dir(dir.path()).unwrap();
        let back = RewardModel::read_dir(dir.path()).unwrap();
        assert_eq!(back.members(), model.members());
        assert_eq!(back.variant(), RewardModelVariant::MinEnsemble);
    }

    fn gap_env() -> Environment {
        Environment::build(EnvironmentConfig {
            d_x: 3,
            d_a: 2,
            n_actions: 6,
            n_supported: 4,
            ground_truth_seed: 2,
            hidden_widths: [8, 4],
            context_pool: None,
        })
        .unwrap()
    }

    #[test]
    fn oracle_has_zero_gap() {
        let env = gap_env();
        let ctx = env.sample_contexts(50, &mut RngStream::new(1, 0));
        let (s, n) = extrapolation_gap(&env, &env, ctx.view()).unwrap();
        assert_eq!((s, n), (0.0, 0.0));
    }

    #[test]
    fn full_coverage_gives_comparable_gaps() {
        // Uniform logging over every action: no distribution shift between
        // the two partitions.
        let env = gap_env();
        let uniform = crate::policy::FixedPolicy::uniform(6);
        let data = env
            .collect_data(&uniform, 20_000, "uniform", &mut RngStream::new(2, 0))
            .unwrap();
        let cfg = RewardModelConfig {
            hidden_widths: [32, 8],
            n_members: 2,
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.05,
            ..RewardModelConfig::default()
        };
        let model = RewardModel::train(
            &data,
            env.action_features(),
            &cfg,
            RewardModelVariant::NaiveMean,
            &RngStream::new(2, 1),
        )
        .unwrap();
        let ctx = env.sample_contexts(500, &mut RngStream::new(2, 2));
        let (s, n) = extrapolation_gap(&model, &env, ctx.view()).unwrap();
        assert!(n <= 2.0 * s, "supported {s} novel {n}");

        // Logged on supported actions only: reported, not asserted.
        let logged = env
            .generate_logged_data(
                LoggingPolicySpec { beta: 0.0 },
                20_000,
                &mut RngStream::new(2, 3),
            )
            .unwrap();
        let model = RewardModel::train(
            &logged,
            env.action_features(),
            &cfg,
            RewardModelVariant::NaiveMean,
            &RngStream::new(2, 4),
        )
        .unwrap();
        let (s, n) = extrapolation_gap(&model, &env, ctx.view()).unwrap();
        eprintln!("supported-only training: mse_supported={s:.5} mse_novel={n:.5}");
    }
}
