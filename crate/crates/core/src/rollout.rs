//! Rollout storage, collection from a pool of environments, and advantage
//! estimation with constraint terminations.
//!
//! Arrays are time-major: transition `(t, e)` lives at index `t * num_envs + e`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constraints::{apply_termination, ConstraintError, ConstraintSet};
use crate::env::{Environment, TrackingError};
use crate::normalizer::RunningNormalizer;
use crate::policy::{sample_action, PolicyError, PolicyParameters};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("time-limit transition (t={t}, env={env}) has no bootstrap value")]
    MissingBootstrap { t: usize, env: usize },
    #[error("environment {env} reports {got} {what}, expected {expected}")]
    EnvShape {
        env: usize,
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("rollout needs at least one environment and one step")]
    Empty,
}

/// One stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord<'a> {
    pub obs: &'a [f64],
    pub action: &'a [f64],
    pub log_prob: f64,
    pub value: f64,
    pub raw_reward: f64,
    pub weighted_reward: f64,
    pub delta: f64,
    pub hard_reset_flag: bool,
    pub time_limit: bool,
    pub episode_step_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub horizon: usize,
    pub num_envs: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Observations as fed to the policy (normalised when enabled).
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub raw_rewards: Vec<f64>,
    pub weighted_rewards: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Episode ended by a hard constraint or an environment fault; no bootstrap.
    pub terminated: Vec<bool>,
    pub time_limits: Vec<bool>,
    /// Value of the final observation for time-limit transitions.
    pub bootstrap: Vec<Option<f64>>,
    pub episode_step: Vec<u32>,
    /// Value of each environment's observation after the last step.
    pub last_values: Vec<f64>,
    /// Violations indexed `[constraint][transition]`.
    pub violations: Vec<Vec<f64>>,
    /// Reward terms indexed `[term][transition]`.
    pub reward_terms: Vec<Vec<f64>>,
    pub tracking: Vec<Option<TrackingError>>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.horizon * self.num_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, t: usize, env: usize) -> usize {
        t * self.num_envs + env
    }

    pub fn record(&self, t: usize, env: usize) -> TransitionRecord<'_> {
        let i = self.index(t, env);
        TransitionRecord {
            obs: &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim],
            action: &self.actions[i * self.action_dim..(i + 1) * self.action_dim],
            log_prob: self.log_probs[i],
            value: self.values[i],
            raw_reward: self.raw_rewards[i],
            weighted_reward: self.weighted_rewards[i],
            delta: self.deltas[i],
            hard_reset_flag: self.terminated[i],
            time_limit: self.time_limits[i],
            episode_step_index: self.episode_step[i],
        }
    }

    /// Percentage of transitions in which each constraint was violated.
    pub fn violation_percentages(&self) -> Vec<f64> {
        self.violations
            .iter()
            .map(|v| 100.0 * v.iter().filter(|&&x| x > 0.0).count() as f64 / v.len().max(1) as f64)
            .collect()
    }
}

/// `(advantages, returns)` with the continuation factor `1 - delta_t` on every
/// bootstrap:
///
/// ```text
/// td_t = w_t + gamma * (1 - delta_t) * V_next - V_t
/// A_t  = td_t + gamma * lambda * (1 - delta_t) * A_{t+1}
/// ```
///
/// `V_next` is 0 after a termination. A time-limit truncation bootstraps from
/// the stored value with continuation 1. In both cases the recursion
/// restarts.
pub fn compute_gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), RolloutError> {
    let (horizon, n) = (batch.horizon, batch.num_envs);
    let mut adv = vec![0.0; horizon * n];
    for e in 0..n {
        let mut next_adv = 0.0;
        for t in (0..horizon).rev() {
            let i = t * n + e;
            let mut cont = 1.0 - batch.deltas[i];
            let (next_value, carries) = if batch.terminated[i] {
                (0.0, false)
            } else if batch.time_limits[i] {
                cont = 1.0;
                let v = batch.bootstrap[i].ok_or(RolloutError::MissingBootstrap { t, env: e })?;
                (v, false)
            } else if t + 1 == horizon {
                (batch.last_values[e], false)
            } else {
                (batch.values[i + n], true)
            };
            let td = batch.weighted_rewards[i] + gamma * cont * next_value - batch.values[i];
            let carried = if carries { next_adv } else { 0.0 };
            next_adv = td + gamma * lambda * cont * carried;
            adv[i] = next_adv;
        }
    }
    let returns = adv.iter().zip(&batch.values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Rescales to zero mean and unit (population) variance.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Derives the per-environment random stream used for action sampling.
pub fn action_stream(seed: u64, env: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ac71_0000_0000);
    rng.set_stream(env as u64);
    rng
}

/// Steps a pool of environments with the current policy.
pub struct RolloutCollector<E: Environment> {
    envs: Vec<E>,
    current_obs: Vec<Vec<f64>>,
    episode_steps: Vec<u32>,
    rngs: Vec<ChaCha8Rng>,
    obs_dim: usize,
    action_dim: usize,
}

impl<E: Environment> RolloutCollector<E> {
    pub fn new(mut envs: Vec<E>, seed: u64) -> Result<Self, RolloutError> {
        let first = envs.first().ok_or(RolloutError::Empty)?;
        let (obs_dim, action_dim) = (first.observation_dim(), first.action_dim());
        let current_obs = envs.iter_mut().map(|e| e.reset()).collect();
        let rngs = (0..envs.len()).map(|i| action_stream(seed, i)).collect();
        Ok(Self {
            episode_steps: vec![0; envs.len()],
            envs,
            current_obs,
            rngs,
            obs_dim,
            action_dim,
        })
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn envs(&self) -> &[E] {
        &self.envs
    }

    fn policy_input(&self, normalizer: Option<&RunningNormalizer>, rows: &[&[f64]]) -> Vec<f64> {
        let mut flat = Vec::with_capacity(rows.len() * self.obs_dim);
        for r in rows {
            flat.extend_from_slice(r);
        }
        match normalizer {
            Some(n) => n.normalize(&flat),
            None => flat,
        }
    }

    /// Collects `horizon` steps from every environment. Returns the batch and
    /// the raw observations seen by the policy (for normaliser updates).
    pub fn collect(
        &mut self,
        policy: &PolicyParameters,
        normalizer: Option<&RunningNormalizer>,
        constraints: &ConstraintSet,
        probs: &[f64],
        horizon: usize,
    ) -> Result<(RolloutBatch, Vec<f64>), RolloutError> {
        let n = self.envs.len();
        if horizon == 0 || n == 0 {
            return Err(RolloutError::Empty);
        }
        let total = horizon * n;
        let (od, ad) = (self.obs_dim, self.action_dim);
        let n_constraints = constraints.len();
        let n_terms = self.envs[0].reward_terms().len();
        let cmax = constraints.cmax();
        let mut batch = RolloutBatch {
            horizon,
            num_envs: n,
            obs_dim: od,
            action_dim: ad,
            obs: Vec::with_capacity(total * od),
            actions: Vec::with_capacity(total * ad),
            log_probs: Vec::with_capacity(total),
            values: Vec::with_capacity(total),
            raw_rewards: vec![0.0; total],
            weighted_rewards: vec![0.0; total],
            deltas: vec![0.0; total],
            terminated: vec![false; total],
            time_limits: vec![false; total],
            bootstrap: vec![None; total],
            episode_step: vec![0; total],
            last_values: vec![0.0; n],
            violations: vec![vec![0.0; total]; n_constraints],
            reward_terms: vec![vec![0.0; total]; n_terms],
            tracking: vec![None; total],
        };
        let mut raw_obs = Vec::with_capacity(total * od);

        for t in 0..horizon {
            let rows: Vec<&[f64]> = self.current_obs.iter().map(Vec::as_slice).collect();
            for r in &rows {
                raw_obs.extend_from_slice(r);
            }
            let input = self.policy_input(normalizer, &rows);
            let fwd = policy.forward_batch(&input, n)?;
            batch.obs.extend_from_slice(&input);
            batch.values.extend_from_slice(&fwd.values);

            let mut truncated: Vec<(usize, Vec<f64>)> = Vec::new();
            for e in 0..n {
                let i = t * n + e;
                let sample = sample_action(fwd.mean(e), &policy.log_std, &mut self.rngs[e]);
                batch.actions.extend_from_slice(&sample.action);
                batch.log_probs.push(sample.log_prob);
                batch.episode_step[i] = self.episode_steps[e];

                let mut end_episode = false;
                match self.envs[e].step(&sample.action) {
                    Ok(step) => {
                        if step.observation.len() != od {
                            return Err(RolloutError::EnvShape {
                                env: e,
                                what: "observation values",
                                got: step.observation.len(),
                                expected: od,
                            });
                        }
                        let violations = constraints.violations(&step.signals)?;
                        let outcome = constraints.evaluate(&violations, &cmax, probs)?;
                        let (weighted, delta) = apply_termination(step.reward, &outcome);
                        batch.raw_rewards[i] = step.reward;
                        batch.weighted_rewards[i] = weighted;
                        batch.deltas[i] = delta;
                        for (c, v) in violations.0.iter().enumerate() {
                            batch.violations[c][i] = *v;
                        }
                        for (k, v) in step.reward_terms.iter().enumerate().take(n_terms) {
                            batch.reward_terms[k][i] = *v;
                        }
                        batch.tracking[i] = step.tracking;
                        if outcome.hard_triggered {
                            batch.terminated[i] = true;
                            end_episode = true;
                        } else if step.time_limit {
                            batch.time_limits[i] = true;
                            truncated.push((e, step.observation.clone()));
                            end_episode = true;
                        }
                        self.current_obs[e] = step.observation;
                    }
                    Err(fault) => {
                        log::warn!("env {e} at step {}: {fault}; resetting", self.episode_steps[e]);
                        batch.terminated[i] = true;
                        end_episode = true;
                    }
                }
                if end_episode {
                    self.current_obs[e] = self.envs[e].reset();
                    self.episode_steps[e] = 0;
                } else {
                    self.episode_steps[e] += 1;
                }
            }

            if !truncated.is_empty() {
                let rows: Vec<&[f64]> = truncated.iter().map(|(_, o)| o.as_slice()).collect();
                let input = self.policy_input(normalizer, &rows);
                let fwd = policy.forward_batch(&input, rows.len())?;
                for ((e, _), v) in truncated.iter().zip(&fwd.values) {
                    batch.bootstrap[t * n + e] = Some(*v);
                }
            }
        }

        let rows: Vec<&[f64]> = self.current_obs.iter().map(Vec::as_slice).collect();
        let input = self.policy_input(normalizer, &rows);
        batch.last_values = policy.forward_batch(&input, n)?.values;
        Ok((batch, raw_obs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn empty_batch(horizon: usize, num_envs: usize) -> RolloutBatch {
        let total = horizon * num_envs;
        RolloutBatch {
            horizon,
            num_envs,
            obs_dim: 1,
            action_dim: 1,
            obs: vec![0.0; total],
            actions: vec![0.0; total],
            log_probs: vec![0.0; total],
            values: vec![0.0; total],
            raw_rewards: vec![0.0; total],
            weighted_rewards: vec![0.0; total],
            deltas: vec![0.0; total],
            terminated: vec![false; total],
            time_limits: vec![false; total],
            bootstrap: vec![None; total],
            episode_step: vec![0; total],
            last_values: vec![0.0; num_envs],
            violations: vec![],
            reward_terms: vec![],
            tracking: vec![None; total],
        }
    }

    #[test]
    fn full_termination_gives_one_step_advantage() {
        let mut b = empty_batch(4, 1);
        b.weighted_rewards = vec![0.0, 0.0, 0.0, 0.0];
        b.raw_rewards = vec![1.0, 2.0, 3.0, 4.0];
        b.values = vec![0.5, -0.2, 0.1, 0.9];
        b.deltas = vec![1.0; 4];
        b.last_values = vec![10.0];
        let (adv, ret) = compute_gae(&b, 0.99, 0.95).unwrap();
        for t in 0..4 {
            assert_eq!(adv[t], b.weighted_rewards[t] - b.values[t]);
            assert_eq!(ret[t], b.weighted_rewards[t]);
        }
    }

    #[test]
    fn constant_reward_geometric_sum() {
        let (gamma, r, h, v_boot) = (0.9, 1.5, 6, 2.0);
        let mut b = empty_batch(h, 1);
        b.weighted_rewards = vec![r; h];
        b.last_values = vec![v_boot];
        let (adv, _) = compute_gae(&b, gamma, 1.0).unwrap();
        let expected: f64 = (0..h).map(|t| gamma.powi(t as i32) * r).sum::<f64>() + gamma.powi(h as i32) * v_boot;
        assert!((adv[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn missing_bootstrap_is_rejected() {
        let mut b = empty_batch(3, 2);
        let i = b.index(1, 1);
        b.time_limits[i] = true;
        assert_eq!(
            compute_gae(&b, 0.99, 0.95),
            Err(RolloutError::MissingBootstrap { t: 1, env: 1 })
        );
    }

    #[test]
    fn advantage_normalisation() {
        let mut a: Vec<f64> = (0..50).map(|i| (i as f64).sin() * 3.0 + 1.0).collect();
        normalize_advantages(&mut a);
        let mean = a.iter().sum::<f64>() / 50.0;
        let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
