//! Experiment configuration: a TOML file mirroring the command-line flags,
//! merged with the flags and resolved against per-command defaults.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Seed used when none is given, so documented commands reproduce.
pub const DEFAULT_SEED: u64 = 271_828;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    EstimateB,
    WeylExponent,
    VerifyBounds,
    Decompose,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::EstimateB => "estimate-b",
            Command::WeylExponent => "weyl-exponent",
            Command::VerifyBounds => "verify-bounds",
            Command::Decompose => "decompose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    /// Correlation exp(-t^2/2).
    Gauss,
    /// Correlation 1/cosh(t/2).
    Sech,
}

impl KernelChoice {
    pub fn spec(self) -> weyl_persistence::KernelSpec {
        match self {
            KernelChoice::Gauss => weyl_persistence::KernelSpec::GaussLimit,
            KernelChoice::Sech => weyl_persistence::KernelSpec::Sech,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SideChoice {
    Half,
    Whole,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Jsonl,
    Csv,
}

/// Every field is optional so that a file, the flags and the defaults can be
/// layered; a resolved snapshot has every field its command uses filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<u64>>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<SideChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<bool>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            kernel: None,
            n: None,
            t: None,
            step: None,
            trials: None,
            seed: None,
            workers: None,
            out: None,
            format: None,
            side: None,
            refine: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::ConfigInvalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::ConfigInvalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `overrides` win; the rest come from `self`.
    pub fn overridden_by(self, overrides: ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            schema_version: self.schema_version,
            kernel: overrides.kernel.or(self.kernel),
            n: overrides.n.or(self.n),
            t: overrides.t.or(self.t),
            step: overrides.step.or(self.step),
            trials: overrides.trials.or(self.trials),
            seed: overrides.seed.or(self.seed),
            workers: overrides.workers.or(self.workers),
            out: overrides.out.or(self.out),
            format: overrides.format.or(self.format),
            side: overrides.side.or(self.side),
            refine: overrides.refine.or(self.refine),
        }
    }

    /// Fills in the defaults of `command`, validates, and drops fields the
    /// command does not read.
    pub fn resolve(&self, command: Command) -> Result<ExperimentConfig, CliError> {
        let mut r = ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: Some(self.seed.unwrap_or(DEFAULT_SEED)),
            workers: self.workers,
            out: self.out.clone(),
            format: Some(self.format.unwrap_or_default()),
            ..Default::default()
        };
        match command {
            Command::EstimateB => {
                r.kernel = Some(self.kernel.unwrap_or(KernelChoice::Gauss));
                r.t = Some(self.t.clone().unwrap_or_else(|| vec![10.0, 15.0, 20.0, 25.0]));
                r.step = Some(self.step.unwrap_or(0.05));
                r.trials = Some(self.trials.unwrap_or(1_000_000));
            }
            Command::WeylExponent => {
                r.n = Some(self.n.clone().unwrap_or_else(|| vec![64, 100, 196, 256, 400]));
                r.step = Some(self.step.unwrap_or(0.05));
                r.trials = Some(self.trials.unwrap_or(1_000_000));
                r.side = Some(self.side.unwrap_or(SideChoice::Half));
                r.refine = Some(self.refine.unwrap_or(false));
            }
            Command::Decompose => {
                r.n = Some(self.n.clone().unwrap_or_else(|| vec![64, 100, 196]));
                r.step = Some(self.step.unwrap_or(0.05));
                r.trials = Some(self.trials.unwrap_or(1_000_000));
            }
            Command::VerifyBounds => {
                r.n = Some(self.n.clone().unwrap_or_else(|| vec![64, 100, 256, 1024]));
            }
        }
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::ConfigInvalid(msg));
        if let Some(step) = self.step {
            if !(step > 0.0 && step.is_finite()) {
                return bad(format!("step must be positive and finite, got {step}"));
            }
        }
        if self.trials == Some(0) {
            return bad("trials must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(t) = &self.t {
            if t.is_empty() {
                return bad("T list is empty".into());
            }
            if let Some(bad_t) = t.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
                return bad(format!("T values must be finite and nonnegative, got {bad_t}"));
            }
        }
        if let Some(n) = &self.n {
            if n.is_empty() {
                return bad("n list is empty".into());
            }
        }
        Ok(())
    }
}
