//! Logged bandit feedback and fold bookkeeping.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One logged interaction `(x, a, r)` plus the logging probability of `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSample {
    pub context: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub propensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fold {
    S1,
    S2,
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fold::S1 => f.write_str("S1"),
            Fold::S2 => f.write_str("S2"),
        }
    }
}

impl std::str::FromStr for Fold {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S1" => Ok(Fold::S1),
            "S2" => Ok(Fold::S2),
            other => Err(Error::Format(format!("unknown fold label {other:?}"))),
        }
    }
}

/// Logged samples with per-sample fold labels.
///
/// `row_ids` track each sample's position in the dataset it was originally
/// generated as, so folds carved from the same parent can be checked for
/// overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditDataset {
    samples: Vec<LoggedSample>,
    folds: Vec<Fold>,
    row_ids: Vec<u64>,
    origin: String,
}

impl BanditDataset {
    /// All samples start in `S1` until [`split_dataset`](Self::split_dataset)
    /// assigns folds.
    pub fn new(samples: Vec<LoggedSample>, origin: impl Into<String>) -> Self {
        let n = samples.len();
        Self {
            samples,
            folds: vec![Fold::S1; n],
            row_ids: (0..n as u64).collect(),
            origin: origin.into(),
        }
    }

    pub fn samples(&self) -> &[LoggedSample] {
        &self.samples
    }

    pub fn folds(&self) -> &[Fold] {
        &self.folds
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    /// Identifier of the policy that collected the data.
    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn context_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.context.len())
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.reward)
    }

    /// Contexts stacked row-wise into an `n × d_x` matrix.
    pub fn context_matrix(&self) -> Array2<f64> {
        let d = self.context_dim().unwrap_or(0);
        let mut m = Array2::zeros((self.len(), d));
        for (mut row, s) in m.rows_mut().into_iter().zip(&self.samples) {
            row.assign(&ndarray::ArrayView1::from(&s.context[..]));
        }
        m
    }

    /// Shuffled exact-count partition: `ceil(fraction · n)` samples go to S1.
    /// Sample order is untouched; only the labels change.
    pub fn split_dataset(&self, fraction_s1: f64, rng: &mut RngStream) -> Result<BanditDataset> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !(fraction_s1 > 0.0 && fraction_s1 < 1.0) {
            return Err(crate::error::invalid(format!(
                "fraction_s1 must lie in (0, 1), got {fraction_s1}"
            )));
        }
        let n = self.len();
        let n_s1 = s1_count(n, fraction_s1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut folds = vec![Fold::S2; n];
        for &i in &order[..n_s1] {
            folds[i] = Fold::S1;
        }
        Ok(BanditDataset {
            folds,
            ..self.clone()
        })
    }

    /// Materializes one fold as its own dataset, preserving order, origin and row ids.
    pub fn fold(&self, which: Fold) -> BanditDataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.folds[i] == which)
            .collect();
        self.select(&keep)
    }

    /// `m` samples drawn uniformly without replacement, in draw order.
    pub fn subsample(&self, m: usize, rng: &mut RngStream) -> Result<BanditDataset> {
        let n = self.len();
        if m == 0 || m > n {
            return Err(Error::InsufficientSamples {
                needed: m,
                available: n,
            });
        }
        let picked = rand::seq::index::sample(rng, n, m).into_vec();
        Ok(self.select(&picked))
    }

    fn select(&self, indices: &[usize]) -> BanditDataset {
        BanditDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            folds: indices.iter().map(|&i| self.folds[i]).collect(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
            origin: self.origin.clone(),
        }
    }

    /// Concatenation; the result keeps the first dataset's origin tag and
    /// renumbers rows.
    pub fn concat(parts: &[&BanditDataset], origin: impl Into<String>) -> BanditDataset {
        let samples: Vec<LoggedSample> = parts
            .iter()
            .flat_map(|d| d.samples.iter().cloned())
            .collect();
        BanditDataset::new(samples, origin)
    }

    /// Number of samples the two datasets share (same origin and row id).
    pub fn overlap(&self, other: &BanditDataset) -> usize {
        if self.origin != other.origin {
            return 0;
        }
        let ids: HashSet<u64> = self.row_ids.iter().copied().collect();
        other.row_ids.iter().filter(|id| ids.contains(id)).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = self.context_dim().unwrap_or(0);
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..d).map(|j| format!("context_{j}")).collect();
        header.extend(["action", "reward", "propensity", "fold"].map(String::from));
        w.write_record(&header)?;
        for (s, fold) in self.samples.iter().zip(&self.folds) {
            let mut rec: Vec<String> = s.context.iter().map(|&v| fmt_real(v)).collect();
            rec.push(s.action.to_string());
            rec.push(fmt_real(s.reward));
            rec.push(fmt_real(s.propensity));
            rec.push(fold.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, origin: impl Into<String>) -> Result<BanditDataset> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let d = header.iter().filter(|h| h.starts_with("context_")).count();
        let expected: Vec<String> = (0..d)
            .map(|j| format!("context_{j}"))
            .chain(["action", "reward", "propensity", "fold"].map(String::from))
            .collect();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Format(format!(
                "unexpected dataset header {header:?}"
            )));
        }
        let mut samples = Vec::new();
        let mut folds = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad number {:?}", &rec[i])))
            };
            let context = (0..d).map(num).collect::<Result<Vec<f64>>>()?;
            let action = rec[d]
                .parse()
                .map_err(|_| Error::Format(format!("bad action {:?}", &rec[d])))?;
            samples.push(LoggedSample {
                context,
                action,
                reward: num(d + 1)?,
                propensity: num(d + 2)?,
            });
            folds.push(rec[d + 3].parse()?);
        }
        let mut ds = BanditDataset::new(samples, origin);
        ds.folds = folds;
        Ok(ds)
    }
}

pub(crate) fn s1_count(n: usize, fraction: f64) -> usize {
    // tolerance keeps 0.3 * 10 from rounding up to 4
    ((fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}
