//! The training loop: curriculum, rollout collection, violation tracking,
//! advantage estimation and PPO updates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::constraints::{ConstraintError, ConstraintSet};
use crate::env::Environment;
use crate::normalizer::RunningNormalizer;
use crate::policy::{NetworkShape, PolicyError, PolicyParameters};
use crate::ppo::{ppo_update, PpoBatch, PpoConfig, PpoError, PpoStats};
use crate::rollout::{compute_gae, normalize_advantages, RolloutBatch, RolloutCollector, RolloutError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration}: {source}")]
    Rollout { iteration: u64, source: RolloutError },
    #[error("iteration {iteration}: {source}")]
    Constraint { iteration: u64, source: ConstraintError },
    #[error("iteration {iteration}: {source}")]
    Update { iteration: u64, source: PpoError },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("environment exposes {got} constraint signals ({names:?}) but {expected} constraints are configured")]
    ConstraintMismatch {
        names: Vec<String>,
        got: usize,
        expected: usize,
    },
    #[error("checkpoint does not match this run: {0}")]
    CheckpointMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub epochs_per_batch: usize,
    pub minibatch_count: usize,
    pub learning_rate: f64,
    /// Decay the learning rate linearly to zero over the run.
    pub linear_lr_decay: bool,
    pub entropy_coefficient: f64,
    pub value_coefficient: f64,
    pub max_grad_norm: f64,
    pub horizon_steps: usize,
    pub num_envs: usize,
    pub total_iterations: u64,
    pub seed: u64,
    pub normalize_observations: bool,
    pub hidden: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: ppo.clip_epsilon,
            epochs_per_batch: ppo.epochs_per_batch,
            minibatch_count: ppo.minibatch_count,
            learning_rate: 3e-4,
            linear_lr_decay: true,
            entropy_coefficient: ppo.entropy_coefficient,
            value_coefficient: ppo.value_coefficient,
            max_grad_norm: ppo.max_grad_norm,
            horizon_steps: 64,
            num_envs: 256,
            total_iterations: 2000,
            seed: 0,
            normalize_observations: true,
            hidden: NetworkShape::DESK_HIDDEN.to_vec(),
        }
    }
}

impl TrainingConfig {
    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip_epsilon: self.clip_epsilon,
            epochs_per_batch: self.epochs_per_batch,
            minibatch_count: self.minibatch_count,
            value_coefficient: self.value_coefficient,
            entropy_coefficient: self.entropy_coefficient,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if self.horizon_steps == 0 || self.num_envs == 0 {
            return bad("horizon_steps and num_envs must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be non-empty and positive");
        }
        self.ppo()
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }

    /// Learning rate used at `progress` in [0, 1].
    pub fn learning_rate_at(&self, progress: f64) -> f64 {
        if self.linear_lr_decay {
            self.learning_rate * (1.0 - progress).max(0.0)
        } else {
            self.learning_rate
        }
    }
}

/// One row of the metrics history.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub mean_reward: f64,
    pub reward_terms: Vec<f64>,
    pub violation_percent: Vec<f64>,
    pub pos_error: f64,
    pub rot_error: f64,
    pub delta_mean: f64,
    pub probabilities: Vec<f64>,
    pub learning_rate: f64,
    pub ppo: PpoStats,
}

impl MetricsRow {
    pub fn header(reward_terms: &[String], constraints: &[String]) -> Vec<String> {
        let mut h = vec!["iteration".to_string(), "mean_reward".to_string()];
        h.extend(reward_terms.iter().map(|t| format!("reward_{t}")));
        h.extend(constraints.iter().map(|c| format!("violation_pct_{c}")));
        h.extend(["pos_error", "rot_error", "delta_mean"].map(String::from));
        h.extend(constraints.iter().map(|c| format!("prob_{c}")));
        h.extend(
            [
                "learning_rate",
                "policy_loss",
                "value_loss",
                "entropy",
                "mean_ratio",
                "clip_fraction",
                "approx_kl",
                "grad_norm",
                "explained_variance",
            ]
            .map(String::from),
        );
        h
    }

    pub fn record(&self) -> Vec<String> {
        let mut r = vec![self.iteration.to_string(), self.mean_reward.to_string()];
        let floats = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>();
        r.extend(floats(&self.reward_terms));
        r.extend(floats(&self.violation_percent));
        r.extend(floats(&[self.pos_error, self.rot_error, self.delta_mean]));
        r.extend(floats(&self.probabilities));
        let p = &self.ppo;
        r.extend(floats(&[
            self.learning_rate,
            p.policy_loss,
            p.value_loss,
            p.entropy,
            p.mean_ratio,
            p.clip_fraction,
            p.approx_kl,
            p.grad_norm,
            p.explained_variance,
        ]));
        r
    }

    fn from_batch(iteration: u64, batch: &RolloutBatch, probabilities: Vec<f64>, learning_rate: f64, ppo: PpoStats) -> Self {
        let n = batch.len().max(1) as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let tracked: Vec<_> = batch.tracking.iter().flatten().collect();
        let (pos_error, rot_error) = if tracked.is_empty() {
            (0.0, 0.0)
        } else {
            let k = tracked.len() as f64;
            (
                tracked.iter().map(|t| t.position).sum::<f64>() / k,
                tracked.iter().map(|t| t.orientation).sum::<f64>() / k,
            )
        };
        Self {
            iteration,
            mean_reward: mean(&batch.raw_rewards),
            reward_terms: batch.reward_terms.iter().map(|t| mean(t)).collect(),
            violation_percent: batch.violation_percentages(),
            pos_error,
            rot_error,
            delta_mean: mean(&batch.deltas),
            probabilities,
            learning_rate,
            ppo,
        }
    }
}

pub struct Trainer<E: Environment> {
    config: TrainingConfig,
    collector: RolloutCollector<E>,
    params: PolicyParameters,
    normalizer: Option<RunningNormalizer>,
    constraints: ConstraintSet,
    iteration: u64,
    constraint_names: Vec<String>,
    reward_terms: Vec<String>,
}

impl<E: Environment> Trainer<E> {
    /// Builds a trainer over `envs`, whose constraint signals must line up
    /// with `constraints`.
    pub fn new(config: TrainingConfig, envs: Vec<E>, constraints: ConstraintSet) -> Result<Self, TrainError> {
        config.validate()?;
        let first = envs
            .first()
            .ok_or_else(|| TrainError::InvalidConfig("no environments".into()))?;
        let names = first.constraint_names();
        if names.len() != constraints.len() {
            return Err(TrainError::ConstraintMismatch {
                got: names.len(),
                expected: constraints.len(),
                names,
            });
        }
        let reward_terms = first.reward_terms();
        let shape = NetworkShape::new(first.observation_dim(), &config.hidden, first.action_dim());
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = PolicyParameters::new(shape, &mut init_rng)?;
        let normalizer = config
            .normalize_observations
            .then(|| RunningNormalizer::new(first.observation_dim()));
        let collector =
            RolloutCollector::new(envs, config.seed).map_err(|source| TrainError::Rollout { iteration: 0, source })?;
        Ok(Self {
            constraint_names: constraints.specs().iter().map(|s| s.name.clone()).collect(),
            config,
            collector,
            params,
            normalizer,
            constraints,
            iteration: 0,
            reward_terms,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn params(&self) -> &PolicyParameters {
        &self.params
    }

    pub fn normalizer(&self) -> Option<&RunningNormalizer> {
        self.normalizer.as_ref()
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.total_iterations
    }

    pub fn progress(&self) -> f64 {
        if self.config.total_iterations == 0 {
            1.0
        } else {
            (self.iteration as f64 / self.config.total_iterations as f64).min(1.0)
        }
    }

    pub fn metrics_header(&self) -> Vec<String> {
        MetricsRow::header(&self.reward_terms, &self.constraint_names)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            normalizer: self.normalizer.clone(),
            constraints: self
                .constraint_names
                .iter()
                .cloned()
                .zip(self.constraints.states().iter().copied())
                .collect(),
            progress: self.progress(),
            iteration: self.iteration,
        }
    }

    /// Continues from a saved state. Environments are not restored, so the
    /// continued run is not bit-identical to an uninterrupted one.
    pub fn restore(&mut self, ck: Checkpoint) -> Result<(), TrainError> {
        if ck.params.shape != self.params.shape {
            return Err(TrainError::CheckpointMismatch(format!(
                "network shape {:?} vs {:?}",
                ck.params.shape, self.params.shape
            )));
        }
        let names: Vec<String> = ck.constraints.iter().map(|(n, _)| n.clone()).collect();
        if names != self.constraint_names {
            return Err(TrainError::CheckpointMismatch(format!("constraints {names:?}")));
        }
        if ck.normalizer.is_some() != self.normalizer.is_some() {
            return Err(TrainError::CheckpointMismatch("observation normalisation setting".into()));
        }
        self.constraints
            .restore_states(ck.constraints.into_iter().map(|(_, s)| s).collect())
            .map_err(|source| TrainError::Constraint {
                iteration: ck.iteration,
                source,
            })?;
        self.params = ck.params;
        self.params.touch();
        self.normalizer = ck.normalizer;
        self.iteration = ck.iteration;
        Ok(())
    }

    /// Runs one collect/update iteration and returns its metrics row.
    pub fn step(&mut self) -> Result<MetricsRow, TrainError> {
        let iteration = self.iteration;
        let progress = self.progress();
        let probs = self
            .constraints
            .probabilities(progress)
            .map_err(|source| TrainError::Constraint { iteration, source })?;
        let (batch, raw_obs) = self
            .collector
            .collect(
                &self.params,
                self.normalizer.as_ref(),
                &self.constraints,
                &probs,
                self.config.horizon_steps,
            )
            .map_err(|source| TrainError::Rollout { iteration, source })?;
        if let Some(n) = &mut self.normalizer {
            n.update(&raw_obs);
        }
        self.constraints
            .update_cmax(&batch.violations)
            .map_err(|source| TrainError::Constraint { iteration, source })?;
        let (mut advantages, returns) = compute_gae(&batch, self.config.gamma, self.config.gae_lambda)
            .map_err(|source| TrainError::Rollout { iteration, source })?;
        normalize_advantages(&mut advantages);

        let lr = self.config.learning_rate_at(progress);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(iteration + 1);
        let ppo_batch = PpoBatch {
            obs: &batch.obs,
            actions: &batch.actions,
            old_log_probs: &batch.log_probs,
            advantages: &advantages,
            returns: &returns,
            old_values: &batch.values,
        };
        let stats = ppo_update(&mut self.params, &ppo_batch, &self.config.ppo(), lr, &mut rng)
            .map_err(|source| TrainError::Update { iteration, source })?;
        self.iteration += 1;
        Ok(MetricsRow::from_batch(iteration, &batch, probs, lr, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainingConfig::default().validate().unwrap();
    }

    #[test]
    fn gamma_one_is_rejected() {
        let c = TrainingConfig {
            gamma: 1.0,
            ..TrainingConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn learning_rate_decays_linearly() {
        let c = TrainingConfig::default();
        assert_eq!(c.learning_rate_at(0.0), 3e-4);
        assert!((c.learning_rate_at(0.5) - 1.5e-4).abs() < 1e-18);
        assert_eq!(c.learning_rate_at(1.0), 0.0);
    }
}
