//! Run configuration files.
//!
//! A run is described by one TOML document with five sections:
//! `[environment]`, `[rewards]`, `[[constraints]]`, `[learner]` and
//! `[output]`. Every section is required and unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use lunacat_core::constraints::{ConstraintSet, ConstraintSpec};
use lunacat_core::rewards::RewardParams;
use lunacat_core::train::TrainingConfig;
use lunacat_sim::env::REWARD_TERMS;
use lunacat_sim::signals::CONSTRAINT_NAMES;
use lunacat_sim::EnvConfig;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Run directory. Relative paths are taken from the working directory.
    pub directory: PathBuf,
    /// Iterations between numbered checkpoints; 0 keeps only the latest.
    pub checkpoint_every: u64,
    /// Iterations between in-training evaluations; 0 disables them.
    pub eval_every: u64,
    /// Episodes per in-training evaluation.
    pub eval_episodes: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs/default"),
            checkpoint_every: 100,
            eval_every: 0,
            eval_episodes: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: EnvConfig,
    pub rewards: RewardParams,
    pub learner: TrainingConfig,
    pub output: OutputConfig,
    pub constraints: Vec<ConstraintSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            environment: EnvConfig::default(),
            rewards: RewardParams::default(),
            learner: TrainingConfig::default(),
            output: OutputConfig::default(),
            constraints: lunacat_sim::signals::default_constraints(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing configuration")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let usage = |section: &str, e: &dyn std::fmt::Display| UsageError(format!("[{section}]: {e}"));
        self.environment.validate().map_err(|e| usage("environment", &e))?;
        self.rewards.validate().map_err(|e| usage("rewards", &e))?;
        for name in self.rewards.weights.keys() {
            if !REWARD_TERMS.contains(&name.as_str()) {
                bail!(usage(
                    "rewards",
                    &format!("weights.{name}: unknown reward term (expected one of {REWARD_TERMS:?})")
                ));
            }
        }
        self.learner.validate().map_err(|e| usage("learner", &e))?;
        self.constraint_set()?;
        if self.output.directory.as_os_str().is_empty() {
            bail!(usage("output", &"directory: must not be empty"));
        }
        if self.output.eval_every > 0 && self.output.eval_episodes == 0 {
            bail!(usage("output", &"eval_episodes: must be positive when eval_every is set"));
        }
        Ok(())
    }

    /// The constraint set, checked against the environment's signal order.
    pub fn constraint_set(&self) -> anyhow::Result<ConstraintSet> {
        let usage = |e: String| UsageError(format!("[constraints]: {e}"));
        if self.constraints.len() != CONSTRAINT_NAMES.len() {
            bail!(usage(format!(
                "expected {} entries ({}), found {}",
                CONSTRAINT_NAMES.len(),
                CONSTRAINT_NAMES.join(", "),
                self.constraints.len()
            )));
        }
        for (i, (spec, expected)) in self.constraints.iter().zip(CONSTRAINT_NAMES).enumerate() {
            if self.constraints[..i].iter().any(|s| s.name == spec.name) {
                bail!(usage(format!("duplicate constraint name `{}`", spec.name)));
            }
            if spec.name != expected {
                bail!(usage(format!("entry {i}: expected `{expected}`, found `{}`", spec.name)));
            }
        }
        ConstraintSet::new(self.constraints.clone()).map_err(|e| usage(e.to_string()).into())
    }
}
