//! A five-state chain with a rewarding but forbidden shortcut action, used to
//! check constraint terminations end to end against exact value iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::constraints::{ConstraintKind, ConstraintSet, ConstraintSpec};
use crate::env::{EnvFault, Environment, StepResult};
use crate::policy::sample_action;
use crate::rollout::action_stream;
use crate::train::{TrainError, Trainer, TrainingConfig};

pub const STATES: usize = 5;
pub const SAFE_REWARD: f64 = 1.0;
pub const SHORTCUT_REWARD: f64 = 2.0;
pub const TIME_LIMIT: u32 = 50;

/// The chain. State `s` moves to `s + 1 (mod 5)` whatever the action; a
/// positive action takes the shortcut, which pays more and raises the
/// `shortcut` constraint signal.
#[derive(Debug, Clone)]
pub struct ChainEnv {
    state: usize,
    steps: u32,
    rng: ChaCha8Rng,
}

impl ChainEnv {
    pub fn new(seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + index as u64);
        Self { state: 0, steps: 0, rng }
    }

    pub fn observation_of(state: usize) -> Vec<f64> {
        let mut o = vec![0.0; STATES];
        o[state] = 1.0;
        o
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Environment for ChainEnv {
    fn observation_dim(&self) -> usize {
        STATES
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn constraint_names(&self) -> Vec<String> {
        vec!["shortcut".into()]
    }

    fn reward_terms(&self) -> Vec<String> {
        vec!["chain".into()]
    }

    fn reset(&mut self) -> Vec<f64> {
        use rand::Rng;
        self.state = self.rng.random_range(0..STATES);
        self.steps = 0;
        Self::observation_of(self.state)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvFault> {
        let a = *action
            .first()
            .ok_or_else(|| EnvFault("empty action".into()))?;
        if !a.is_finite() {
            return Err(EnvFault(format!("non-finite action {a}")));
        }
        let shortcut = a > 0.0;
        let reward = if shortcut { SHORTCUT_REWARD } else { SAFE_REWARD };
        self.state = (self.state + 1) % STATES;
        self.steps += 1;
        Ok(StepResult {
            observation: Self::observation_of(self.state),
            reward,
            reward_terms: vec![reward],
            signals: vec![if shortcut { 1.0 } else { 0.0 }],
            time_limit: self.steps >= TIME_LIMIT,
            tracking: None,
        })
    }
}

/// Optimal state values of the chain by value iteration. With `constrained`
/// the shortcut ends the episode with zero reward.
pub fn value_iteration(gamma: f64, constrained: bool) -> Vec<f64> {
    let mut v = vec![0.0; STATES];
    for _ in 0..10_000 {
        let next: Vec<f64> = (0..STATES)
            .map(|s| {
                let cont = v[(s + 1) % STATES];
                let safe = SAFE_REWARD + gamma * cont;
                let shortcut = if constrained { 0.0 } else { SHORTCUT_REWARD + gamma * cont };
                safe.max(shortcut)
            })
            .collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change < 1e-13 {
            break;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TinyCmdpConfig {
    pub seed: u64,
    pub gamma: f64,
    pub iterations: u64,
    pub num_envs: usize,
    pub horizon_steps: usize,
    pub learning_rate: f64,
    pub cat_enabled: bool,
    /// Sampled steps per environment when measuring the final policy.
    pub eval_steps: usize,
}

impl TinyCmdpConfig {
    pub fn new(seed: u64, cat_enabled: bool) -> Self {
        Self {
            seed,
            gamma: 0.9,
            iterations: 200,
            num_envs: 64,
            horizon_steps: 32,
            learning_rate: 3e-3,
            cat_enabled,
            eval_steps: 200,
        }
    }

    fn training(&self) -> TrainingConfig {
        TrainingConfig {
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            entropy_coefficient: 0.0,
            horizon_steps: self.horizon_steps,
            num_envs: self.num_envs,
            total_iterations: self.iterations,
            seed: self.seed,
            normalize_observations: false,
            hidden: vec![32, 32],
            ..TrainingConfig::default()
        }
    }

    fn constraint(&self) -> ConstraintSpec {
        if self.cat_enabled {
            ConstraintSpec::hard("shortcut", 0.0)
        } else {
            let mut spec = ConstraintSpec::soft("shortcut", 0.0, 0.0, 0.0);
            spec.kind = ConstraintKind::Soft;
            spec
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TinyCmdpReport {
    pub config: TinyCmdpConfig,
    /// Fraction of sampled (stochastic) actions that take the shortcut.
    pub shortcut_rate: f64,
    /// Fraction of states where the policy mean takes the shortcut.
    pub greedy_shortcut_rate: f64,
    pub exact_values: Vec<f64>,
    pub learned_values: Vec<f64>,
    /// Mean over states of |V_learned - V_exact| / |V_exact|.
    pub value_relative_error: f64,
    /// Constraint violation percentage in the last training batch.
    pub final_violation_percent: f64,
}

impl TinyCmdpReport {
    pub fn render(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
        format!(
            "tinycmdp seed={} cat={} gamma={} iterations={} envs={}\n\
             shortcut_rate={:.6}\ngreedy_shortcut_rate={:.6}\n\
             exact_values=[{}]\nlearned_values=[{}]\n\
             value_relative_error={:.6}\nfinal_violation_percent={:.4}\n",
            self.config.seed,
            if self.config.cat_enabled { "enabled" } else { "disabled" },
            self.config.gamma,
            self.config.iterations,
            self.config.num_envs,
            self.shortcut_rate,
            self.greedy_shortcut_rate,
            fmt(&self.exact_values),
            fmt(&self.learned_values),
            self.value_relative_error,
            self.final_violation_percent,
        )
    }
}

pub fn run_tinycmdp(config: &TinyCmdpConfig) -> Result<TinyCmdpReport, TrainError> {
    let envs = (0..config.num_envs).map(|i| ChainEnv::new(config.seed, i)).collect();
    let constraints = ConstraintSet::new(vec![config.constraint()])
        .map_err(|source| TrainError::Constraint { iteration: 0, source })?;
    let mut trainer = Trainer::new(config.training(), envs, constraints)?;
    let mut final_violation_percent = 0.0;
    while !trainer.is_finished() {
        let row = trainer.step()?;
        final_violation_percent = row.violation_percent[0];
    }
    let params = trainer.params();

    let obs: Vec<f64> = (0..STATES).flat_map(ChainEnv::observation_of).collect();
    let fwd = params.forward_batch(&obs, STATES)?;
    let learned_values = fwd.values.clone();
    let greedy = (0..STATES).filter(|&s| fwd.mean(s)[0] > 0.0).count();

    let mut rng = action_stream(config.seed.wrapping_add(1), 0);
    let mut shortcuts = 0usize;
    let samples = config.eval_steps * config.num_envs;
    for k in 0..samples {
        let s = k % STATES;
        if sample_action(fwd.mean(s), &params.log_std, &mut rng).action[0] > 0.0 {
            shortcuts += 1;
        }
    }

    let exact_values = value_iteration(config.gamma, config.cat_enabled);
    let value_relative_error = exact_values
        .iter()
        .zip(&learned_values)
        .map(|(e, l)| (l - e).abs() / e.abs())
        .sum::<f64>()
        / STATES as f64;
    Ok(TinyCmdpReport {
        config: config.clone(),
        shortcut_rate: shortcuts as f64 / samples.max(1) as f64,
        greedy_shortcut_rate: greedy as f64 / STATES as f64,
        exact_values,
        learned_values,
        value_relative_error,
        final_violation_percent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_iteration_closed_forms() {
        for v in value_iteration(0.9, true) {
            assert!((v - 10.0).abs() < 1e-9);
        }
        for v in value_iteration(0.9, false) {
            assert!((v - 20.0).abs() < 1e-9);
        }
        assert_eq!(value_iteration(0.0, true), vec![1.0; STATES]);
        assert_eq!(value_iteration(0.0, false), vec![2.0; STATES]);
    }

    #[test]
    fn chain_signals_shortcut() {
        let mut env = ChainEnv::new(0, 0);
        env.reset();
        let s = env.state();
        let r = env.step(&[0.5]).unwrap();
        assert_eq!(r.reward, SHORTCUT_REWARD);
        assert_eq!(r.signals, vec![1.0]);
        assert_eq!(env.state(), (s + 1) % STATES);
        let r = env.step(&[-0.5]).unwrap();
        assert_eq!(r.reward, SAFE_REWARD);
        assert_eq!(r.signals, vec![0.0]);
    }
}
