//! Experiment configuration and the two built-in profiles.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use safe_explore_core::estimators::HcopeConfig;
use safe_explore_core::{EnvironmentConfig, RewardModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OpgNaive,
    OpgCql,
    SafeOpg,
    DepsueK2,
    DepsueK5,
    NaiveSafeExploration,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::OpgNaive,
        Method::OpgCql,
        Method::SafeOpg,
        Method::DepsueK2,
        Method::DepsueK5,
        Method::NaiveSafeExploration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::OpgNaive => "opg_naive",
            Method::OpgCql => "opg_cql",
            Method::SafeOpg => "safe_opg",
            Method::DepsueK2 => "depsue_k2",
            Method::DepsueK5 => "depsue_k5",
            Method::NaiveSafeExploration => "naive_safe_exploration",
        }
    }

    /// Number of deployments; Safe OPG is the single-deployment case.
    pub fn deployments(self) -> usize {
        match self {
            Method::DepsueK2 => 2,
            Method::DepsueK5 => 5,
            _ => 1,
        }
    }

    pub fn uses_depsue(self) -> bool {
        matches!(self, Method::SafeOpg | Method::DepsueK2 | Method::DepsueK5)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .with_context(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyRule {
    /// C = threshold_factor · mean logged reward.
    pub threshold_factor: f64,
    pub delta: f64,
}

impl Default for SafetyRule {
    fn default() -> Self {
        Self {
            threshold_factor: 0.95,
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub beta_sweep: Vec<f64>,
    pub methods: Vec<Method>,
    pub n_logged: usize,
    pub n_seeds: usize,
    pub first_seed: u64,
    pub safety: SafetyRule,
    /// Used by the unconstrained baselines.
    pub opg: TrainConfig,
    /// Used by Safe OPG and every DEPSUE stage.
    pub safe_opg: TrainConfig,
    pub hcope: HcopeConfig,
    pub reward_model: RewardModelConfig,
    /// Novel-action share of the naive exploration baseline.
    pub naive_mix: f64,
    /// Fresh contexts used to score every policy against the true q.
    pub eval_contexts: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Small enough to sweep on a laptop core in minutes per cell.
    pub fn desk() -> Self {
        let steps = 2000;
        Self {
            environment: EnvironmentConfig::default(),
            beta_sweep: vec![-8.0, 0.0, 8.0],
            methods: vec![Method::OpgNaive, Method::OpgCql, Method::SafeOpg],
            n_logged: 20_000,
            n_seeds: 10,
            first_seed: 0,
            safety: SafetyRule::default(),
            opg: TrainConfig {
                steps,
                ..TrainConfig::opg()
            },
            // Five times fewer steps than the full protocol, so both rates are
            // scaled up to keep the total primal and dual travel comparable.
            safe_opg: TrainConfig {
                steps,
                eta_psi: 0.05,
                eta_lambda: 0.05,
                ..TrainConfig::safe_opg()
            },
            hcope: HcopeConfig::default(),
            reward_model: RewardModelConfig::default(),
            naive_mix: 0.05,
            eval_contexts: 50_000,
            output_dir: None,
        }
    }

    /// The full protocol: 1000 actions, 500k logged samples, 30 seeds.
    pub fn paper_scale() -> Self {
        Self {
            environment: EnvironmentConfig {
                d_x: 30,
                d_a: 20,
                n_actions: 1000,
                n_supported: 800,
                ..EnvironmentConfig::default()
            },
            beta_sweep: vec![-24.0, -16.0, -8.0, 0.0, 8.0, 16.0, 24.0],
            methods: Method::ALL.to_vec(),
            n_logged: 500_000,
            n_seeds: 30,
            opg: TrainConfig::opg(),
            safe_opg: TrainConfig::safe_opg(),
            eval_contexts: 500_000,
            ..Self::desk()
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_seeds as u64).map(move |i| self.first_seed + i)
    }

    /// Checks every field and reports each violation by name.
    pub fn validate(&self) -> anyhow::Result<()> {
        let mut problems = Vec::new();
        let mut check = |field: &str, r: Result<(), String>| {
            if let Err(e) = r {
                problems.push(format!("{field}: {e}"));
            }
        };
        check(
            "environment",
            self.environment.validate().map_err(|e| e.to_string()),
        );
        check(
            "beta_sweep",
            if self.beta_sweep.is_empty() {
                Err("must not be empty".into())
            } else if self.beta_sweep.iter().any(|b| !b.is_finite()) {
                Err("values must be finite".into())
            } else {
                Ok(())
            },
        );
        check(
            "methods",
            if self.methods.is_empty() {
                Err("must not be empty".into())
            } else {
                Ok(())
            },
        );
        check(
            "n_seeds",
            if self.n_seeds == 0 {
                Err("must be >= 1".into())
            } else {
                Ok(())
            },
        );
        let max_k = self
            .methods
            .iter()
            .map(|m| m.deployments())
            .max()
            .unwrap_or(1);
        check(
            "n_logged",
            if self.n_logged / max_k < 2 * safe_explore_core::depsue::MIN_STAGE_S2 {
                Err(format!("too small for {max_k} deployments"))
            } else {
                Ok(())
            },
        );
        check(
            "safety.threshold_factor",
            if self.safety.threshold_factor.is_finite() {
                Ok(())
            } else {
                Err("must be finite".into())
            },
        );
        check(
            "safety.delta",
            if self.safety.delta > 0.0 && self.safety.delta < 1.0 {
                Ok(())
            } else {
                Err("must lie in (0, 1)".into())
            },
        );
        check("opg", self.opg.validate().map_err(|e| e.to_string()));
        check(
            "safe_opg",
            self.safe_opg.validate().map_err(|e| e.to_string()),
        );
        check("hcope", self.hcope.validate().map_err(|e| e.to_string()));
        check(
            "reward_model",
            self.reward_model.validate().map_err(|e| e.to_string()),
        );
        check(
            "naive_mix",
            if (0.0..1.0).contains(&self.naive_mix) {
                Ok(())
            } else {
                Err("must lie in [0, 1)".into())
            },
        );
        check(
            "eval_contexts",
            if self.eval_contexts == 0 {
                Err("must be >= 1".into())
            } else {
                Ok(())
            },
        );
        if problems.is_empty() {
            Ok(())
        } else {
            bail!("invalid config:\n  {}", problems.join("\n  "))
        }
    }

    /// Hash of everything that affects results (the output path does not).
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
