//! Clipped-surrogate PPO update over a collected batch.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{accumulate_log_prob_grad, gaussian_entropy, gaussian_log_prob, PolicyError, PolicyParameters};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid PPO setting: {0}")]
    InvalidConfig(String),
    #[error("{what} has {got} entries, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub epochs_per_batch: usize,
    pub minibatch_count: usize,
    pub value_coefficient: f64,
    pub entropy_coefficient: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            epochs_per_batch: 5,
            minibatch_count: 4,
            value_coefficient: 1.0,
            entropy_coefficient: 0.005,
            max_grad_norm: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon.is_finite()) {
            return bad("clip_epsilon must be positive");
        }
        if self.epochs_per_batch == 0 || self.minibatch_count == 0 {
            return bad("epochs_per_batch and minibatch_count must be at least 1");
        }
        if !(self.value_coefficient >= 0.0 && self.entropy_coefficient >= 0.0 && self.max_grad_norm >= 0.0) {
            return bad("coefficients and max_grad_norm must be non-negative");
        }
        Ok(())
    }
}

/// Flattened training data for one update.
#[derive(Debug, Clone, Copy)]
pub struct PpoBatch<'a> {
    pub obs: &'a [f64],
    pub actions: &'a [f64],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
    /// Critic outputs at collection time, for explained variance.
    pub old_values: &'a [f64],
}

impl PpoBatch<'_> {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, obs_dim: usize, action_dim: usize) -> Result<(), PpoError> {
        let n = self.len();
        let checks = [
            ("observations", self.obs.len(), n * obs_dim),
            ("actions", self.actions.len(), n * action_dim),
            ("advantages", self.advantages.len(), n),
            ("returns", self.returns.len(), n),
            ("old values", self.old_values.len(), n),
        ];
        for (what, got, expected) in checks {
            if got != expected {
                return Err(PpoError::Length { what, got, expected });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub explained_variance: f64,
    pub minibatch_updates: usize,
    /// The update hit a non-finite value and the parameters were restored.
    pub aborted: bool,
}

pub fn explained_variance(predicted: &[f64], target: &[f64]) -> f64 {
    let n = target.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = target.iter().sum::<f64>() / n;
    let var_t = target.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    let resid: Vec<f64> = target.iter().zip(predicted).map(|(t, p)| t - p).collect();
    let rm = resid.iter().sum::<f64>() / n;
    let var_r = resid.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() / n;
    if var_t <= 1e-12 {
        0.0
    } else {
        1.0 - var_r / var_t
    }
}

struct MinibatchResult {
    policy_loss: f64,
    value_loss: f64,
    ratio_sum: f64,
    clipped: usize,
    kl_sum: f64,
    grad_norm: f64,
}

fn minibatch_step(
    params: &mut PolicyParameters,
    batch: &PpoBatch<'_>,
    idx: &[usize],
    config: &PpoConfig,
    lr: f64,
) -> Result<Option<MinibatchResult>, PpoError> {
    let (od, ad) = (params.shape.input_dim, params.shape.action_dim);
    let m = idx.len();
    let mut obs = Vec::with_capacity(m * od);
    for &i in idx {
        obs.extend_from_slice(&batch.obs[i * od..(i + 1) * od]);
    }
    let fwd = params.forward_batch(&obs, m)?;
    let mut d_means = vec![0.0; m * ad];
    let mut d_values = vec![0.0; m];
    let mut d_log_std = vec![-config.entropy_coefficient; ad];
    let inv_m = 1.0 / m as f64;
    let eps = config.clip_epsilon;
    let mut out = MinibatchResult {
        policy_loss: 0.0,
        value_loss: 0.0,
        ratio_sum: 0.0,
        clipped: 0,
        kl_sum: 0.0,
        grad_norm: 0.0,
    };
    for (k, &i) in idx.iter().enumerate() {
        let action = &batch.actions[i * ad..(i + 1) * ad];
        let log_prob = gaussian_log_prob(action, fwd.mean(k), &params.log_std);
        let log_ratio = log_prob - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        out.policy_loss -= unclipped.min(clipped) * inv_m;
        out.ratio_sum += ratio;
        out.kl_sum += (ratio - 1.0) - log_ratio;
        if (ratio - 1.0).abs() > eps {
            out.clipped += 1;
        }
        let active = !((adv > 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps));
        if active {
            accumulate_log_prob_grad(
                action,
                fwd.mean(k),
                &params.log_std,
                -ratio * adv * inv_m,
                &mut d_means[k * ad..(k + 1) * ad],
                &mut d_log_std,
            );
        }
        let dv = fwd.values[k] - batch.returns[i];
        out.value_loss += dv * dv * inv_m;
        d_values[k] = 2.0 * config.value_coefficient * dv * inv_m;
    }
    let entropy = gaussian_entropy(&params.log_std);
    let total = out.policy_loss + config.value_coefficient * out.value_loss - config.entropy_coefficient * entropy;
    if !total.is_finite() {
        return Ok(None);
    }
    let mut grads = params.backward(&fwd, &d_means, &d_values, &d_log_std)?;
    out.grad_norm = grads.global_norm();
    if !out.grad_norm.is_finite() {
        return Ok(None);
    }
    if config.max_grad_norm > 0.0 && out.grad_norm > config.max_grad_norm {
        grads.scale(config.max_grad_norm / out.grad_norm);
    }
    match params.optimizer_step(&grads, lr) {
        Ok(()) if params.all_finite() => Ok(Some(out)),
        Ok(()) | Err(PolicyError::Nn(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Runs `epochs_per_batch` passes of shuffled minibatch updates. On a
/// non-finite loss or parameter the whole update is undone and the returned
/// stats have `aborted` set.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParameters,
    batch: &PpoBatch<'_>,
    config: &PpoConfig,
    learning_rate: f64,
    rng: &mut R,
) -> Result<PpoStats, PpoError> {
    config.validate()?;
    batch.validate(params.shape.input_dim, params.shape.action_dim)?;
    let n = batch.len();
    let mut stats = PpoStats {
        explained_variance: explained_variance(batch.old_values, batch.returns),
        ..PpoStats::default()
    };
    if n == 0 {
        return Ok(stats);
    }
    let snapshot = params.clone();
    let chunks = config.minibatch_count.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut samples, mut clipped) = (0usize, 0usize);
    for _ in 0..config.epochs_per_batch {
        order.shuffle(rng);
        for c in 0..chunks {
            let idx = &order[c * n / chunks..(c + 1) * n / chunks];
            match minibatch_step(params, batch, idx, config, learning_rate)? {
                Some(r) => {
                    stats.policy_loss += r.policy_loss;
                    stats.value_loss += r.value_loss;
                    stats.mean_ratio += r.ratio_sum;
                    stats.approx_kl += r.kl_sum;
                    stats.grad_norm += r.grad_norm;
                    clipped += r.clipped;
                    samples += idx.len();
                    stats.minibatch_updates += 1;
                }
                None => {
                    log::warn!("non-finite loss during PPO update; restoring previous parameters");
                    *params = snapshot;
                    params.touch();
                    stats.aborted = true;
                    return Ok(stats);
                }
            }
        }
    }
    let updates = stats.minibatch_updates as f64;
    stats.policy_loss /= updates;
    stats.value_loss /= updates;
    stats.grad_norm /= updates;
    stats.mean_ratio /= samples as f64;
    stats.approx_kl /= samples as f64;
    stats.clip_fraction = clipped as f64 / samples as f64;
    stats.entropy = gaussian_entropy(&params.log_std);
    Ok(stats)
}
