//! Stochastic policies over the full action set.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::data::fmt_real;
use crate::environment::inverse_cdf;
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, ForwardCache, GradientBuffer, Init, Mlp};
use crate::rng::RngStream;

/// Anything that maps contexts to a distribution over actions.
pub trait Policy {
    fn n_actions(&self) -> usize;

    /// π(·|x_i) for each context row (`n × |A|`).
    fn probabilities(&self, contexts: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// π(a_i|x_i) for each context row paired with `actions[i]`.
    fn pair_probabilities(&self, contexts: ArrayView2<f64>, actions: &[usize]) -> Result<Vec<f64>> {
        check_pairs(self.n_actions(), contexts.nrows(), actions)?;
        let probs = self.probabilities(contexts)?;
        Ok(actions
            .iter()
            .enumerate()
            .map(|(i, &a)| probs[[i, a]])
            .collect())
    }

    fn action_distribution(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous");
        Ok(self.probabilities(view)?.row(0).to_vec())
    }

    /// Inverse-CDF draw from [`action_distribution`](Self::action_distribution).
    fn sample_action(&self, x: &[f64], rng: &mut RngStream) -> Result<usize> {
        let p = self.action_distribution(x)?;
        Ok(inverse_cdf(&p, rng.random()))
    }
}

/// softmax(f_ψ(x, ·)) where f_ψ is a one-hidden-layer ReLU network.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    net: Mlp,
}

impl SoftmaxPolicy {
    /// Glorot-uniform hidden layer, zero output layer: training starts from
    /// the uniform policy.
    pub fn new(d_x: usize, hidden: usize, n_actions: usize, rng: &mut RngStream) -> Result<Self> {
        let net = Mlp::new(
            &[d_x, hidden, n_actions],
            &[Init::GlorotUniform, Init::Zeros],
            rng,
        )?;
        Ok(Self { net })
    }

    pub fn from_network(net: Mlp) -> Result<Self> {
        if net.layers().len() != 2 {
            return Err(crate::error::invalid(
                "policy network must have exactly two layers",
            ));
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn context_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.net.layers()[0].fan_out()
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn scores(&self, contexts: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward(contexts)
    }

    /// Forward pass keeping activations, plus the resulting probabilities.
    pub fn forward_cached(&self, contexts: ArrayView2<f64>) -> Result<(ForwardCache, Array2<f64>)> {
        let cache = self.net.forward_cached(contexts)?;
        let probs = softmax_rows(cache.output());
        Ok((cache, probs))
    }

    /// Parameter gradient of `sum_ib d_scores[i,b] * f_ψ(x_i, b)`.
    pub fn backprop_scores(
        &self,
        cache: &ForwardCache,
        d_scores: ArrayView2<f64>,
    ) -> GradientBuffer {
        self.net.backward(cache, d_scores)
    }

    /// ∇_ψ log π_ψ(a|x).
    pub fn log_prob_gradient(&self, x: &[f64], action: usize) -> Result<GradientBuffer> {
        if action >= self.n_actions() {
            return Err(Error::ActionOutOfRange {
                action,
                n_actions: self.n_actions(),
            });
        }
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous");
        let (cache, probs) = self.forward_cached(view)?;
        // d log softmax_a / d score_b = 1{a=b} - π_b
        let mut d = probs.mapv(|p| -p);
        d[[0, action]] += 1.0;
        Ok(self.backprop_scores(&cache, d.view()))
    }

    pub fn step(&mut self, direction: &GradientBuffer, eta: f64) {
        self.net.step(direction, eta);
    }

    /// Snapshot: a `d_x,hidden,n_actions` header row followed by one weight per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "d_x,hidden,n_actions")?;
        writeln!(
            w,
            "{},{},{}",
            self.context_dim(),
            self.hidden(),
            self.n_actions()
        )?;
        writeln!(w, "weight")?;
        for v in self.net.params_flat() {
            writeln!(w, "{}", fmt_real(v))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("truncated policy snapshot".into()))?
                .map_err(Error::from)
        };
        if next()? != "d_x,hidden,n_actions" {
            return Err(Error::Format("bad policy snapshot header".into()));
        }
        let dims: Vec<usize> = next()?
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad dimension {t:?}")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 3 || next()? != "weight" {
            return Err(Error::Format("bad policy snapshot header".into()));
        }
        let mut rng = RngStream::new(0, 0);
        let mut policy = SoftmaxPolicy::new(dims[0], dims[1], dims[2], &mut rng)?;
        let mut weights = Vec::with_capacity(policy.n_params());
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            weights.push(
                line.parse()
                    .map_err(|_| Error::Format(format!("bad weight {line:?}")))?,
            );
        }
        policy.net.set_params_flat(&weights)?;
        Ok(policy)
    }
}

impl Policy for SoftmaxPolicy {
    fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    fn probabilities(&self, contexts: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.net.forward(contexts)?))
    }

    /// Same values as indexing [`probabilities`](Policy::probabilities), without
    /// normalizing every entry.
    fn pair_probabilities(&self, contexts: ArrayView2<f64>, actions: &[usize]) -> Result<Vec<f64>> {
        check_pairs(self.n_actions(), contexts.nrows(), actions)?;
        let logits = self.net.forward(contexts)?;
        let mut buf = Array1::zeros(logits.ncols());
        Ok(logits
            .rows()
            .into_iter()
            .zip(actions)
            .map(|(row, &a)| {
                let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                buf.zip_mut_with(&row, |e, &v| *e = (v - m).exp());
                buf[a] / buf.sum()
            })
            .collect())
    }
}

fn check_pairs(n_actions: usize, n_rows: usize, actions: &[usize]) -> Result<()> {
    if actions.len() != n_rows {
        return Err(Error::DimensionMismatch {
            expected: n_rows,
            actual: actions.len(),
        });
    }
    match actions.iter().find(|&&a| a >= n_actions) {
        Some(&action) => Err(Error::ActionOutOfRange { action, n_actions }),
        None => Ok(()),
    }
}

/// Context-independent distribution; handy as a probe or a reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPolicy {
    probs: Vec<f64>,
}

impl FixedPolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(crate::error::invalid(
                "fixed policy must be a probability vector",
            ));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_actions: usize) -> Self {
        Self {
            probs: vec![1.0 / n_actions as f64; n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, action: usize) -> Self {
        let mut probs = vec![0.0; n_actions];
        probs[action] = 1.0;
        Self { probs }
    }
}

impl Policy for FixedPolicy {
    fn n_actions(&self) -> usize {
        self.probs.len()
    }

    fn probabilities(&self, contexts: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_fn(
            (contexts.nrows(), self.probs.len()),
            |(_, a)| self.probs[a],
        ))
    }
}

/// Per-context entropy `-Σ_a π log π` with `0 · log 0 = 0`.
pub fn row_entropies(probs: &Array2<f64>) -> Vec<f64> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            -row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect()
}

/// Empirical `-E_n[Σ_a π(a|x_i) log π(a|x_i)]` over the given contexts.
pub fn policy_entropy(policy: &dyn Policy, contexts: ArrayView2<f64>) -> Result<f64> {
    if contexts.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let h = row_entropies(&policy.probabilities(contexts)?);
    Ok(h.iter().sum::<f64>() / h.len() as f64)
}
