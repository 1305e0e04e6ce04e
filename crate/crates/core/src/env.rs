//! Interface between the learner and vectorised environments.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("environment fault: {0}")]
pub struct EnvFault(pub String);

/// End-effector tracking errors reported by pose-tracking environments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackingError {
    /// Euclidean position error, m.
    pub position: f64,
    /// Orientation error, rad.
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    /// Scalar reward before constraint weighting.
    pub reward: f64,
    /// Values of the named reward terms, in [`Environment::reward_terms`] order.
    pub reward_terms: Vec<f64>,
    /// Raw constraint signals, in registration order.
    pub signals: Vec<f64>,
    /// Episode hit its time limit; the learner bootstraps from `observation`.
    pub time_limit: bool,
    pub tracking: Option<TrackingError>,
}

/// A resettable episodic environment with continuous actions. Each instance
/// owns its random stream.
pub trait Environment: Send {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn constraint_names(&self) -> Vec<String>;
    fn reward_terms(&self) -> Vec<String>;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvFault>;
}
