//! Summary tables over a sweep's metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::bail;

use crate::sweep::{read_metrics, MetricsRow};

/// One (method, β) group of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: String,
    pub beta: f64,
    pub rows: Vec<MetricsRow>,
}

impl Cell {
    pub fn violations(&self) -> String {
        let v = self.rows.iter().filter(|r| r.violated).count();
        format!("{v}/{}", self.rows.len())
    }

    pub fn relative_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.relative_value).collect()
    }

    pub fn novelties(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.novelty).collect()
    }
}

/// Groups rows by (method, β) in order of first appearance.
pub fn group(rows: &[MetricsRow]) -> Vec<Cell> {
    let mut cells: Vec<Cell> = Vec::new();
    for r in rows {
        match cells
            .iter_mut()
            .find(|c| c.method == r.method && c.beta == r.beta)
        {
            Some(c) => c.rows.push(r.clone()),
            None => cells.push(Cell {
                method: r.method.clone(),
                beta: r.beta,
                rows: vec![r.clone()],
            }),
        }
    }
    cells
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for a single value.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// `mean (≥worst)`.
pub fn mean_worst(v: &[f64]) -> String {
    let worst = v.iter().cloned().fold(f64::INFINITY, f64::min);
    format!("{:.3} (≥{:.3})", mean(v), worst)
}

/// `mean (±std)`.
pub fn mean_std(v: &[f64]) -> String {
    format!("{:.3} (±{:.3})", mean(v), std_dev(v))
}

/// Method-by-β table with one formatted string per cell.
fn table(cells: &[Cell], f: impl Fn(&Cell) -> String) -> Vec<Vec<String>> {
    let mut methods: Vec<&str> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    for c in cells {
        if !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
        if !betas.contains(&c.beta) {
            betas.push(c.beta);
        }
    }
    let mut out = vec![std::iter::once("method".to_string())
        .chain(betas.iter().map(|b| format!("beta={b}")))
        .collect::<Vec<_>>()];
    for m in methods {
        let mut row = vec![m.to_string()];
        for &b in &betas {
            row.push(
                cells
                    .iter()
                    .find(|c| c.method == m && c.beta == b)
                    .map(&f)
                    .unwrap_or_else(|| "-".into()),
            );
        }
        out.push(row);
    }
    out
}

fn write_table(path: &Path, rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn markdown(title: &str, rows: &[Vec<String>]) -> String {
    let mut s = format!("## {title}\n\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(s, "| {} |", r.join(" | "));
        if i == 0 {
            let _ = writeln!(s, "|{}", "---|".repeat(r.len()));
        }
    }
    s.push('\n');
    s
}

/// Writes the summary tables into `results_dir/report/` and returns them as
/// markdown.
pub fn report(results_dir: &Path) -> anyhow::Result<String> {
    let path = results_dir.join("metrics.csv");
    if !path.exists() {
        bail!("no metrics.csv in {}", results_dir.display());
    }
    let rows = read_metrics(&path)?;
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    let cells = group(&rows);
    let dir = results_dir.join("report");
    fs::create_dir_all(&dir)?;

    let violations = table(&cells, Cell::violations);
    let relative = table(&cells, |c| mean_worst(&c.relative_values()));
    let novelty = table(&cells, |c| mean_std(&c.novelties()));
    write_table(&dir.join("violations.csv"), &violations)?;
    write_table(&dir.join("relative_value.csv"), &relative)?;
    write_table(&dir.join("novelty.csv"), &novelty)?;

    let mut w = csv::Writer::from_path(dir.join("long.csv"))?;
    w.write_record([
        "method",
        "beta",
        "metric",
        "n",
        "mean",
        "std",
        "ci95_low",
        "ci95_high",
    ])?;
    for c in &cells {
        for (metric, v) in [
            ("relative_value", c.relative_values()),
            ("novelty", c.novelties()),
        ] {
            let (m, s) = (mean(&v), std_dev(&v));
            let half = 1.96 * s / (v.len() as f64).sqrt();
            w.write_record([
                c.method.clone(),
                c.beta.to_string(),
                metric.to_string(),
                v.len().to_string(),
                format!("{m:.6}"),
                format!("{s:.6}"),
                format!("{:.6}", m - half),
                format!("{:.6}", m + half),
            ])?;
        }
    }
    w.flush()?;

    Ok([
        markdown("Safety violations", &violations),
        markdown("Relative value: mean (worst)", &relative),
        markdown("Novelty: mean (std)", &novelty),
    ]
    .concat())
}
