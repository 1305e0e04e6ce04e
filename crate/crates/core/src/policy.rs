//! Gaussian actor-critic built from two independent MLPs and a
//! state-independent log standard deviation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Adam, Linear, Mlp, MlpCache, NnError};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const HIDDEN_GAIN: f64 = 1.0;
pub const ACTION_HEAD_GAIN: f64 = 0.01;
pub const VALUE_HEAD_GAIN: f64 = 1.0;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
    #[error("forward pass belongs to parameter generation {cache}, current is {current}")]
    StaleForward { cache: u64, current: u64 },
    #[error("{what} has {got} values, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub action_dim: usize,
}

impl NetworkShape {
    pub const PAPER_HIDDEN: [usize; 3] = [512, 256, 128];
    pub const DESK_HIDDEN: [usize; 3] = [128, 64, 32];

    pub fn new(input_dim: usize, hidden: &[usize], action_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            action_dim,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.input_dim == 0 || self.action_dim == 0 {
            return Err(PolicyError::InvalidShape("input and action dims must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(PolicyError::InvalidShape("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
}

/// Diagonal Gaussian log-density of `action`.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), s)| {
            let z = (a - m) * (-s).exp();
            -0.5 * z * z - s - HALF_LOG_TWO_PI
        })
        .sum()
}

/// Partial derivatives of [`gaussian_log_prob`] with respect to the mean and
/// the log standard deviation, accumulated into the output slices scaled by
/// `scale`.
pub fn accumulate_log_prob_grad(
    action: &[f64],
    mean: &[f64],
    log_std: &[f64],
    scale: f64,
    d_mean: &mut [f64],
    d_log_std: &mut [f64],
) {
    for i in 0..action.len() {
        let inv_var = (-2.0 * log_std[i]).exp();
        let diff = action[i] - mean[i];
        d_mean[i] += scale * diff * inv_var;
        d_log_std[i] += scale * (diff * diff * inv_var - 1.0);
    }
}

/// Entropy of the diagonal Gaussian with the given log standard deviations.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 + HALF_LOG_TWO_PI).sum()
}

pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> ActionSample {
    let eps: Vec<f64> = (0..mean.len()).map(|_| StandardNormal.sample(rng)).collect();
    action_from_noise(mean, log_std, &eps)
}

/// `mean + exp(log_std) * eps`, with its exact log-density.
pub fn action_from_noise(mean: &[f64], log_std: &[f64], eps: &[f64]) -> ActionSample {
    let action: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .zip(eps)
        .map(|((m, s), e)| m + s.exp() * e)
        .collect();
    let log_prob = gaussian_log_prob(&action, mean, log_std);
    ActionSample {
        action,
        log_prob,
        mean: mean.to_vec(),
    }
}

/// Outputs of a batched forward pass, kept for [`PolicyParameters::backward`].
#[derive(Debug, Clone)]
pub struct PolicyForward {
    pub batch: usize,
    /// `[batch, action_dim]`.
    pub means: Vec<f64>,
    pub values: Vec<f64>,
    actor: MlpCache,
    critic: MlpCache,
    generation: u64,
}

impl PolicyForward {
    pub fn mean(&self, i: usize) -> &[f64] {
        let a = self.means.len() / self.batch.max(1);
        &self.means[i * a..(i + 1) * a]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradients {
    pub actor: Vec<Linear>,
    pub critic: Vec<Linear>,
    pub log_std: Vec<f64>,
}

impl PolicyGradients {
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.actor.iter().chain(&self.critic) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.log_std);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.actor.iter_mut().chain(self.critic.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.log_std);
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &PolicyGradients) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Actor, critic, action log-std and the optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub shape: NetworkShape,
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
    pub optimizer: Adam,
    generation: u64,
}

impl PolicyParameters {
    pub fn new<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Result<Self, PolicyError> {
        shape.validate()?;
        let actor = Mlp::new(
            shape.input_dim,
            &shape.hidden,
            shape.action_dim,
            HIDDEN_GAIN,
            ACTION_HEAD_GAIN,
            rng,
        );
        let critic = Mlp::new(shape.input_dim, &shape.hidden, 1, HIDDEN_GAIN, VALUE_HEAD_GAIN, rng);
        Ok(Self::from_parts(shape, actor, critic, vec![0.0; 0]))
    }

    /// Assembles parameters; an empty `log_std` means log(1) for every action.
    pub fn from_parts(shape: NetworkShape, actor: Mlp, critic: Mlp, mut log_std: Vec<f64>) -> Self {
        if log_std.is_empty() {
            log_std = vec![0.0; shape.action_dim];
        }
        let mut params = Self {
            shape,
            actor,
            critic,
            log_std,
            optimizer: Adam::new(&[]),
            generation: 0,
        };
        params.optimizer = Adam::new(&params.block_sizes());
        params
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.len()).collect()
    }

    /// Names of the parameter blocks, in [`Self::blocks`] order.
    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (net, mlp) in [("actor", &self.actor), ("critic", &self.critic)] {
            for i in 0..mlp.layers.len() {
                names.push(format!("{net}.{i}.weight"));
                names.push(format!("{net}.{i}.bias"));
            }
        }
        names.push("log_std".into());
        names
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.actor.layers.iter().chain(&self.critic.layers) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.log_std);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.actor.layers.iter_mut().chain(self.critic.layers.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.log_std);
        out
    }

    /// Marks cached forward passes as stale after an external edit.
    pub fn touch(&mut self) {
        self.generation += 1;
    }

    pub fn forward_batch(&self, obs: &[f64], batch: usize) -> Result<PolicyForward, PolicyError> {
        let actor = self.actor.forward(obs, batch)?;
        let critic = self.critic.forward(obs, batch)?;
        Ok(PolicyForward {
            batch,
            means: actor.output().to_vec(),
            values: critic.output().to_vec(),
            actor,
            critic,
            generation: self.generation,
        })
    }

    /// Single-observation forward pass: `(mean, value, cache)`.
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, f64, PolicyForward), PolicyError> {
        let out = self.forward_batch(obs, 1)?;
        Ok((out.means.clone(), out.values[0], out))
    }

    /// Reverse-mode gradients of a scalar loss given its partial derivatives
    /// at the outputs: the action means, the values and the log-std.
    pub fn backward(
        &self,
        fwd: &PolicyForward,
        grad_means: &[f64],
        grad_values: &[f64],
        grad_log_std: &[f64],
    ) -> Result<PolicyGradients, PolicyError> {
        if fwd.generation != self.generation {
            return Err(PolicyError::StaleForward {
                cache: fwd.generation,
                current: self.generation,
            });
        }
        if grad_log_std.len() != self.log_std.len() {
            return Err(PolicyError::Length {
                what: "log-std gradient",
                got: grad_log_std.len(),
                expected: self.log_std.len(),
            });
        }
        let (actor, _) = self.actor.backward(&fwd.actor, grad_means)?;
        let (critic, _) = self.critic.backward(&fwd.critic, grad_values)?;
        Ok(PolicyGradients {
            actor,
            critic,
            log_std: grad_log_std.to_vec(),
        })
    }

    pub fn optimizer_step(&mut self, grads: &PolicyGradients, lr: f64) -> Result<(), PolicyError> {
        let grad_blocks: Vec<Vec<f64>> = grads.blocks().into_iter().map(<[f64]>::to_vec).collect();
        let mut optimizer = std::mem::replace(&mut self.optimizer, Adam::new(&[]));
        let result = {
            let mut blocks = self.blocks_mut();
            optimizer.apply(&mut blocks, &grad_blocks, lr)
        };
        self.optimizer = optimizer;
        result?;
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        self.generation += 1;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Log-density of `action` under the policy for one observation.
pub fn policy_log_prob(params: &PolicyParameters, obs: &[f64], action: &[f64]) -> Result<f64, PolicyError> {
    let (mean, _, _) = params.forward(obs)?;
    Ok(gaussian_log_prob(action, &mean, &params.log_std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_gives_mode_density() {
        let mean = [0.3, -1.0];
        let log_std = [0.2, -0.5];
        let s = action_from_noise(&mean, &log_std, &[0.0, 0.0]);
        assert_eq!(s.action, mean.to_vec());
        let expected: f64 = log_std.iter().map(|l| -l - 0.5 * (2.0 * PI).ln()).sum();
        assert!((s.log_prob - expected).abs() < 1e-14);
    }

    #[test]
    fn tiny_std_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sample_action(&[1.0, 2.0], &[LOG_STD_MIN; 2], &mut rng);
        assert!((s.action[0] - 1.0).abs() < 1e-7 && (s.action[1] - 2.0).abs() < 1e-7);
        assert!(s.log_prob.is_finite());
    }

    #[test]
    fn same_seed_same_sample() {
        let draw = || sample_action(&[0.0; 3], &[0.0; 3], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(draw(), draw());
    }

    #[test]
    fn sampled_log_prob_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mean: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let log_std: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..1.0)).collect();
            let s = sample_action(&mean, &log_std, &mut rng);
            let again = gaussian_log_prob(&s.action, &mean, &log_std);
            assert!((again - s.log_prob).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_is_deterministic_for_fixed_seed() {
        let shape = NetworkShape::new(5, &[16, 16], 2);
        let a = PolicyParameters::new(shape.clone(), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = PolicyParameters::new(shape, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let obs = [0.1, -0.4, 2.0, 0.0, 1.5];
        let (ma, va, _) = a.forward(&obs).unwrap();
        let (mb, vb, _) = b.forward(&obs).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(va.to_bits(), vb.to_bits());
        assert_eq!(a.log_std, vec![0.0, 0.0]);
    }

    #[test]
    fn stale_forward_is_rejected() {
        let mut p = PolicyParameters::new(NetworkShape::new(3, &[4], 1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let fwd = p.forward_batch(&[0.0; 3], 1).unwrap();
        let g = p.backward(&fwd, &[1.0], &[1.0], &[0.0]).unwrap();
        p.optimizer_step(&g, 1e-3).unwrap();
        assert!(matches!(
            p.backward(&fwd, &[1.0], &[1.0], &[0.0]),
            Err(PolicyError::StaleForward { .. })
        ));
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = PolicyParameters::new(NetworkShape::new(2, &[4], 1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p.log_std[0] = 1.9999;
        let fwd = p.forward_batch(&[0.0; 2], 1).unwrap();
        let g = p.backward(&fwd, &[0.0], &[0.0], &[-1.0]).unwrap();
        p.optimizer_step(&g, 0.5).unwrap();
        assert_eq!(p.log_std[0], LOG_STD_MAX);
    }

    #[test]
    fn entropy_matches_closed_form() {
        let h = gaussian_entropy(&[0.0, 1.0]);
        let expected = 2.0 * 0.5 * (2.0 * PI * std::f64::consts::E).ln() + 1.0;
        assert!((h - expected).abs() < 1e-12);
    }

    #[test]
    fn block_names_align_with_blocks() {
        let p = PolicyParameters::new(NetworkShape::new(3, &[4, 5], 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.block_names().len(), p.blocks().len());
        assert_eq!(p.block_names()[0], "actor.0.weight");
        assert_eq!(p.block_sizes().last(), Some(&2));
    }
}
