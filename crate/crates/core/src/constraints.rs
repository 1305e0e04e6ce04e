//! Constraint engine for constraints-as-terminations learning.
//!
//! Every constraint produces a scalar signal per step. Its violation is the
//! positive excess of the signal over the constraint limit. Violations are
//! normalised by a moving average of the per-batch maximum violation and
//! scaled by a scheduled termination probability; the largest of these
//! products is the termination variable `delta` in `[0, 1]`:
//!
//! ```text
//! delta = max_i  p_i * clip(c_i+ / c_i_max, 0, 1)
//! ```
//!
//! The learner weights the step reward by `1 - delta` and uses `delta` as a
//! continuous termination signal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Moving-average coefficient applied to `cmax` once per collected batch.
pub const DEFAULT_CMAX_EMA: f64 = 0.05;
/// Lower bound on `cmax`, in the constraint's native units.
pub const DEFAULT_CMAX_FLOOR: f64 = 1e-3;
/// Fraction of training after which soft constraints use `p_max`.
pub const DEFAULT_CURRICULUM_END: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("constraint `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("duplicate constraint name `{0}`")]
    DuplicateName(String),
    #[error("training progress {0} is outside [0, 1]")]
    ProgressOutOfRange(f64),
    #[error("empty violation batch")]
    EmptyBatch,
    #[error("negative or non-finite violation {0} in batch")]
    InvalidViolation(f64),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("termination probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("cmax {0} must be strictly positive")]
    NonPositiveCmax(f64),
    #[error("empty episode")]
    EmptyEpisode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Soft,
    Hard,
}

fn default_curriculum_end() -> f64 {
    DEFAULT_CURRICULUM_END
}

/// Static description of a single constraint. Immutable after registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub name: String,
    pub kind: ConstraintKind,
    /// Threshold in the signal's physical unit; signals above it violate.
    pub limit: f64,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default = "default_curriculum_end")]
    pub curriculum_end_fraction: f64,
}

impl ConstraintSpec {
    pub fn soft(name: impl Into<String>, limit: f64, p_min: f64, p_max: f64) -> Self {
        Self {
            name: name.into(),
            kind: ConstraintKind::Soft,
            limit,
            p_min,
            p_max,
            curriculum_end_fraction: DEFAULT_CURRICULUM_END,
        }
    }

    pub fn hard(name: impl Into<String>, limit: f64) -> Self {
        Self {
            name: name.into(),
            kind: ConstraintKind::Hard,
            limit,
            p_min: 1.0,
            p_max: 1.0,
            curriculum_end_fraction: DEFAULT_CURRICULUM_END,
        }
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        let bad = |reason: &str| ConstraintError::InvalidSpec {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(bad("name must not be empty"));
        }
        if !self.limit.is_finite() {
            return Err(bad("limit must be finite"));
        }
        if !(0.0..=1.0).contains(&self.p_min) || !(0.0..=1.0).contains(&self.p_max) {
            return Err(bad("probabilities must lie in [0, 1]"));
        }
        if self.p_min > self.p_max {
            return Err(bad("p_min must not exceed p_max"));
        }
        if !(self.curriculum_end_fraction > 0.0 && self.curriculum_end_fraction <= 1.0) {
            return Err(bad("curriculum_end_fraction must lie in (0, 1]"));
        }
        if self.kind == ConstraintKind::Hard && (self.p_min != 1.0 || self.p_max != 1.0) {
            return Err(bad("hard constraints require p_min = p_max = 1"));
        }
        Ok(())
    }
}

/// Positive part of `signal - limit`.
pub fn violation(signal: f64, limit: f64) -> f64 {
    (signal - limit).max(0.0)
}

/// Termination probability of `spec` at training `progress` in `[0, 1]`.
///
/// Ramps linearly from `p_min` to `p_max` over the first
/// `curriculum_end_fraction` of training and stays at `p_max` afterwards.
/// Hard constraints always return 1.
pub fn curriculum_probability(spec: &ConstraintSpec, progress: f64) -> Result<f64, ConstraintError> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(ConstraintError::ProgressOutOfRange(progress));
    }
    if spec.kind == ConstraintKind::Hard {
        return Ok(1.0);
    }
    let ramp = (progress / spec.curriculum_end_fraction).min(1.0);
    Ok(spec.p_min + (spec.p_max - spec.p_min) * ramp)
}

/// Moving-average tracker of the maximum violation of one constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintState {
    cmax: f64,
    pub ema_coefficient: f64,
    pub floor: f64,
    initialized: bool,
}

impl Default for ConstraintState {
    fn default() -> Self {
        Self::new(DEFAULT_CMAX_EMA, DEFAULT_CMAX_FLOOR)
    }
}

impl ConstraintState {
    pub fn new(ema_coefficient: f64, floor: f64) -> Self {
        assert!(ema_coefficient > 0.0 && ema_coefficient < 1.0);
        assert!(floor > 0.0);
        Self {
            cmax: floor,
            ema_coefficient,
            floor,
            initialized: false,
        }
    }

    /// Restores a tracker from persisted values.
    pub fn restored(cmax: f64, initialized: bool) -> Self {
        let mut state = Self::default();
        state.cmax = cmax.max(state.floor);
        state.initialized = initialized;
        state
    }

    /// Current normaliser. Before the first batch this is the floor, so any
    /// violation saturates the clip.
    pub fn cmax(&self) -> f64 {
        self.cmax
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn update(&mut self, batch_violations: &[f64]) -> Result<(), ConstraintError> {
        if batch_violations.is_empty() {
            return Err(ConstraintError::EmptyBatch);
        }
        let mut batch_max = 0.0_f64;
        for &v in batch_violations {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConstraintError::InvalidViolation(v));
            }
            batch_max = batch_max.max(v);
        }
        let target = batch_max.max(self.floor);
        if self.initialized {
            let a = self.ema_coefficient;
            self.cmax = (1.0 - a) * self.cmax + a * target;
        } else {
            self.cmax = target;
            self.initialized = true;
        }
        Ok(())
    }
}

/// Per-constraint violations `c_i+`, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationVector(pub Vec<f64>);

impl ViolationVector {
    pub fn from_signals(specs: &[ConstraintSpec], signals: &[f64]) -> Result<Self, ConstraintError> {
        if specs.len() != signals.len() {
            return Err(ConstraintError::LengthMismatch {
                what: "signals",
                got: signals.len(),
                expected: specs.len(),
            });
        }
        Ok(Self(
            specs
                .iter()
                .zip(signals)
                .map(|(spec, &s)| violation(s, spec.limit))
                .collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn any_violated(&self) -> bool {
        self.0.iter().any(|&v| v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminationOutcome {
    pub delta: f64,
    /// Index of the constraint attaining the maximum; first index on ties.
    pub triggering_constraint: Option<usize>,
    /// A hard constraint has positive violation; the environment must reset.
    pub hard_triggered: bool,
}

impl TerminationOutcome {
    pub const NONE: Self = Self {
        delta: 0.0,
        triggering_constraint: None,
        hard_triggered: false,
    };
}

/// Termination variable for one step.
pub fn compute_delta(
    violations: &ViolationVector,
    cmax: &[f64],
    probs: &[f64],
    kinds: &[ConstraintKind],
) -> Result<TerminationOutcome, ConstraintError> {
    let n = violations.len();
    for (what, got) in [("cmax", cmax.len()), ("probs", probs.len()), ("kinds", kinds.len())] {
        if got != n {
            return Err(ConstraintError::LengthMismatch {
                what,
                got,
                expected: n,
            });
        }
    }
    let mut outcome = TerminationOutcome::NONE;
    for i in 0..n {
        let (v, c, p) = (violations.0[i], cmax[i], probs[i]);
        if !(0.0..=1.0).contains(&p) {
            return Err(ConstraintError::ProbabilityOutOfRange(p));
        }
        if !(c > 0.0) {
            return Err(ConstraintError::NonPositiveCmax(c));
        }
        if v <= 0.0 {
            continue;
        }
        if kinds[i] == ConstraintKind::Hard {
            outcome.hard_triggered = true;
        }
        let d = p * (v / c).clamp(0.0, 1.0);
        if outcome.triggering_constraint.is_none() || d > outcome.delta {
            outcome.delta = d;
            outcome.triggering_constraint = Some(i);
        }
    }
    Ok(outcome)
}

/// Returns `((1 - delta) * reward, delta)`.
pub fn apply_termination(reward: f64, outcome: &TerminationOutcome) -> (f64, f64) {
    ((1.0 - outcome.delta) * reward, outcome.delta)
}

/// Registered constraints together with their `cmax` trackers.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    specs: Vec<ConstraintSpec>,
    states: Vec<ConstraintState>,
    kinds: Vec<ConstraintKind>,
}

impl ConstraintSet {
    pub fn new(specs: Vec<ConstraintSpec>) -> Result<Self, ConstraintError> {
        Self::with_tracking(specs, DEFAULT_CMAX_EMA, DEFAULT_CMAX_FLOOR)
    }

    pub fn with_tracking(
        specs: Vec<ConstraintSpec>,
        ema_coefficient: f64,
        floor: f64,
    ) -> Result<Self, ConstraintError> {
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            if specs[..i].iter().any(|s| s.name == spec.name) {
                return Err(ConstraintError::DuplicateName(spec.name.clone()));
            }
        }
        let kinds = specs.iter().map(|s| s.kind).collect();
        let states = vec![ConstraintState::new(ema_coefficient, floor); specs.len()];
        Ok(Self {
            specs,
            states,
            kinds,
        })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[ConstraintSpec] {
        &self.specs
    }

    pub fn states(&self) -> &[ConstraintState] {
        &self.states
    }

    pub fn restore_states(&mut self, states: Vec<ConstraintState>) -> Result<(), ConstraintError> {
        if states.len() != self.specs.len() {
            return Err(ConstraintError::LengthMismatch {
                what: "constraint states",
                got: states.len(),
                expected: self.specs.len(),
            });
        }
        self.states = states;
        Ok(())
    }

    pub fn kinds(&self) -> &[ConstraintKind] {
        &self.kinds
    }

    pub fn cmax(&self) -> Vec<f64> {
        self.states.iter().map(ConstraintState::cmax).collect()
    }

    pub fn probabilities(&self, progress: f64) -> Result<Vec<f64>, ConstraintError> {
        self.specs
            .iter()
            .map(|s| curriculum_probability(s, progress))
            .collect()
    }

    pub fn violations(&self, signals: &[f64]) -> Result<ViolationVector, ConstraintError> {
        ViolationVector::from_signals(&self.specs, signals)
    }

    /// Read-only evaluation; safe to call from rollout workers.
    pub fn evaluate(
        &self,
        violations: &ViolationVector,
        cmax: &[f64],
        probs: &[f64],
    ) -> Result<TerminationOutcome, ConstraintError> {
        compute_delta(violations, cmax, probs, &self.kinds)
    }

    /// Updates each tracker from the batch's violations, indexed
    /// `[constraint][sample]`.
    pub fn update_cmax(&mut self, per_constraint: &[Vec<f64>]) -> Result<(), ConstraintError> {
        if per_constraint.len() != self.states.len() {
            return Err(ConstraintError::LengthMismatch {
                what: "batch violations",
                got: per_constraint.len(),
                expected: self.states.len(),
            });
        }
        for (state, batch) in self.states.iter_mut().zip(per_constraint) {
            state.update(batch)?;
        }
        Ok(())
    }
}

/// Counts, per constraint, the steps with positive violation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViolationCounter {
    violated_steps: Vec<u64>,
    steps: u64,
}

impl ViolationCounter {
    pub fn new(constraints: usize) -> Self {
        Self {
            violated_steps: vec![0; constraints],
            steps: 0,
        }
    }

    pub fn record(&mut self, violations: &ViolationVector) {
        debug_assert_eq!(violations.len(), self.violated_steps.len());
        for (count, &v) in self.violated_steps.iter_mut().zip(&violations.0) {
            if v > 0.0 {
                *count += 1;
            }
        }
        self.steps += 1;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Percentage of recorded steps each constraint was violated.
    pub fn percentages(&self) -> Result<Vec<f64>, ConstraintError> {
        if self.steps == 0 {
            return Err(ConstraintError::EmptyEpisode);
        }
        Ok(self
            .violated_steps
            .iter()
            .map(|&c| 100.0 * c as f64 / self.steps as f64)
            .collect())
    }
}

/// Episode violation time: per-constraint percentage of steps with positive
/// violation, for a single episode.
pub fn violation_time_report(episode: &[ViolationVector]) -> Result<Vec<f64>, ConstraintError> {
    let first = episode.first().ok_or(ConstraintError::EmptyEpisode)?;
    let mut counter = ViolationCounter::new(first.len());
    for step in episode {
        if step.len() != first.len() {
            return Err(ConstraintError::LengthMismatch {
                what: "violation vector",
                got: step.len(),
                expected: first.len(),
            });
        }
        counter.record(step);
    }
    counter.percentages()
}

/// Per-episode violation time averaged across episodes.
pub fn average_violation_time(episodes: &[Vec<ViolationVector>]) -> Result<Vec<f64>, ConstraintError> {
    let mut total: Option<Vec<f64>> = None;
    for episode in episodes {
        let pct = violation_time_report(episode)?;
        match total.as_mut() {
            None => total = Some(pct),
            Some(acc) => {
                if acc.len() != pct.len() {
                    return Err(ConstraintError::LengthMismatch {
                        what: "episode constraints",
                        got: pct.len(),
                        expected: acc.len(),
                    });
                }
                acc.iter_mut().zip(pct).for_each(|(a, p)| *a += p);
            }
        }
    }
    let mut total = total.ok_or(ConstraintError::EmptyEpisode)?;
    let n = episodes.len() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rot_spec() -> ConstraintSpec {
        ConstraintSpec::soft("base_orientation", 0.3, 0.05, 0.9)
    }

    #[test]
    fn violation_is_positive_excess() {
        assert!((violation(0.30, 0.25) - 0.05).abs() < 1e-15);
        assert_eq!(violation(0.10, 0.25), 0.0);
        assert_eq!(violation(0.25, 0.25), 0.0);
    }

    #[test]
    fn curriculum_ramp_values() {
        let spec = rot_spec();
        assert_eq!(curriculum_probability(&spec, 0.0).unwrap(), 0.05);
        assert!((curriculum_probability(&spec, 0.6).unwrap() - 0.9).abs() < 1e-15);
        assert!((curriculum_probability(&spec, 0.3).unwrap() - 0.475).abs() < 1e-15);
        assert_eq!(curriculum_probability(&spec, 1.0).unwrap(), 0.9);
        assert!(curriculum_probability(&spec, 1.5).is_err());
        assert!(curriculum_probability(&spec, -0.1).is_err());
        let hard = ConstraintSpec::hard("fall", std::f64::consts::FRAC_PI_2);
        assert_eq!(curriculum_probability(&hard, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn cmax_initialisation_and_ema() {
        let mut s = ConstraintState::new(0.05, 1e-3);
        s.update(&[0.1, 0.4, 0.0]).unwrap();
        assert_eq!(s.cmax(), 0.4);
        let mut a = s;
        a.update(&[0.8]).unwrap();
        assert!((a.cmax() - 0.42).abs() < 1e-15);
        // Floor enters inside the max: 0.95 * 0.4 + 0.05 * 1e-3.
        let mut b = s;
        b.update(&[0.0, 0.0]).unwrap();
        assert!((b.cmax() - 0.38005).abs() < 1e-15);
        assert_eq!(s.clone().update(&[]), Err(ConstraintError::EmptyBatch));
        assert!(s.update(&[-1.0]).is_err());
    }

    #[test]
    fn delta_examples() {
        let kinds = [ConstraintKind::Soft, ConstraintKind::Soft];
        let out = compute_delta(&ViolationVector(vec![0.2]), &[0.2], &[0.9], &kinds[..1]).unwrap();
        assert_eq!(out.delta, 0.9);
        assert_eq!(out.triggering_constraint, Some(0));

        let out = compute_delta(&ViolationVector(vec![0.0, 0.0]), &[1.0, 1.0], &[0.5, 0.5], &kinds).unwrap();
        assert_eq!(out, TerminationOutcome::NONE);

        let out = compute_delta(&ViolationVector(vec![0.5, 0.1]), &[1.0, 1.0], &[0.25, 0.9], &kinds).unwrap();
        assert!((out.delta - 0.125).abs() < 1e-15);
        assert_eq!(out.triggering_constraint, Some(0));

        assert!(matches!(
            compute_delta(&ViolationVector(vec![0.5]), &[1.0, 1.0], &[0.25], &kinds[..1]),
            Err(ConstraintError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ties_go_to_first_registered() {
        let kinds = [ConstraintKind::Soft; 3];
        let out = compute_delta(&ViolationVector(vec![0.0, 1.0, 1.0]), &[1.0; 3], &[0.5; 3], &kinds).unwrap();
        assert_eq!(out.triggering_constraint, Some(1));
    }

    #[test]
    fn hard_violation_flags_reset_even_below_cmax() {
        let kinds = [ConstraintKind::Hard];
        let out = compute_delta(&ViolationVector(vec![0.05]), &[0.1], &[1.0], &kinds).unwrap();
        assert!(out.hard_triggered);
        assert!((out.delta - 0.5).abs() < 1e-15);
        let out = compute_delta(&ViolationVector(vec![0.2]), &[0.1], &[1.0], &kinds).unwrap();
        assert!(out.hard_triggered);
        assert_eq!(out.delta, 1.0);
    }

    #[test]
    fn termination_weights_reward() {
        let mk = |delta| TerminationOutcome {
            delta,
            triggering_constraint: None,
            hard_triggered: false,
        };
        assert_eq!(apply_termination(2.0, &mk(0.0)), (2.0, 0.0));
        assert_eq!(apply_termination(2.0, &mk(1.0)), (0.0, 1.0));
        assert_eq!(apply_termination(2.0, &mk(0.25)), (1.5, 0.25));
    }

    #[test]
    fn violation_time_counts() {
        let clean = vec![ViolationVector(vec![0.0]); 1000];
        assert_eq!(violation_time_report(&clean).unwrap(), vec![0.0]);
        let mut one = clean.clone();
        one[17] = ViolationVector(vec![0.3]);
        assert!((violation_time_report(&one).unwrap()[0] - 0.1).abs() < 1e-12);
        assert_eq!(violation_time_report(&[]), Err(ConstraintError::EmptyEpisode));
        let avg = average_violation_time(&[clean, one]).unwrap();
        assert!((avg[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn set_rejects_bad_tables() {
        let mut hard = ConstraintSpec::hard("fall", 1.0);
        hard.p_min = 0.5;
        assert!(ConstraintSet::new(vec![hard]).is_err());
        let dup = vec![rot_spec(), rot_spec()];
        assert_eq!(
            ConstraintSet::new(dup).unwrap_err(),
            ConstraintError::DuplicateName("base_orientation".into())
        );
        let mut inverted = rot_spec();
        inverted.p_min = 0.95;
        assert!(ConstraintSet::new(vec![inverted]).is_err());
    }

    proptest! {
        #[test]
        fn delta_bounded_and_monotone(
            v in proptest::collection::vec(0.0f64..2.0, 1..12),
            bump in 0.0f64..1.0,
            idx in 0usize..12,
            seed_probs in proptest::collection::vec(0.0f64..=1.0, 12),
            seed_cmax in proptest::collection::vec(1e-3f64..2.0, 12),
        ) {
            let n = v.len();
            let kinds = vec![ConstraintKind::Soft; n];
            let probs = &seed_probs[..n];
            let cmax = &seed_cmax[..n];
            let base = compute_delta(&ViolationVector(v.clone()), cmax, probs, &kinds).unwrap();
            prop_assert!((0.0..=1.0).contains(&base.delta));
            let mut bumped = v.clone();
            bumped[idx % n] += bump;
            let after = compute_delta(&ViolationVector(bumped), cmax, probs, &kinds).unwrap();
            prop_assert!(after.delta >= base.delta);
        }

        #[test]
        fn delta_invariant_to_joint_rescaling(
            v in proptest::collection::vec(0.0f64..2.0, 1..8),
            cmax in proptest::collection::vec(1e-2f64..2.0, 8),
            probs in proptest::collection::vec(0.0f64..=1.0, 8),
            scale in 1e-3f64..1e3,
        ) {
            let n = v.len();
            let kinds = vec![ConstraintKind::Soft; n];
            let a = compute_delta(&ViolationVector(v.clone()), &cmax[..n], &probs[..n], &kinds).unwrap();
            let vs: Vec<f64> = v.iter().map(|x| x * scale).collect();
            let cs: Vec<f64> = cmax[..n].iter().map(|x| x * scale).collect();
            let b = compute_delta(&ViolationVector(vs), &cs, &probs[..n], &kinds).unwrap();
            prop_assert!((a.delta - b.delta).abs() < 1e-12);
        }

        #[test]
        fn curriculum_is_clamped_and_continuous(
            p_min in 0.0f64..0.5, span in 0.0f64..0.5, end in 0.05f64..=1.0, t in 0.0f64..=1.0,
        ) {
            let spec = ConstraintSpec { curriculum_end_fraction: end, ..ConstraintSpec::soft("c", 0.0, p_min, p_min + span) };
            let p = curriculum_probability(&spec, t).unwrap();
            prop_assert!(p >= spec.p_min - 1e-15 && p <= spec.p_max + 1e-15);
            if t >= end { prop_assert!((p - spec.p_max).abs() < 1e-12); }
            let eps = 1e-9;
            let q = curriculum_probability(&spec, (t + eps).min(1.0)).unwrap();
            prop_assert!(q >= p && q - p <= span / end * eps + 1e-12);
        }

        #[test]
        fn cmax_never_below_floor(batches in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 1..5), 1..30)) {
            let mut s = ConstraintState::default();
            for b in &batches {
                s.update(b).unwrap();
                prop_assert!(s.cmax() >= DEFAULT_CMAX_FLOOR);
            }
        }
    }
}
