//! Constraint signals, in the order of [`CONSTRAINT_NAMES`].

use lunacat_core::constraints::ConstraintSpec;

use crate::actuation::Joints;
use crate::dynamics::SimState;
use crate::model::{RobotModel, NUM_JOINTS};

pub const NUM_CONSTRAINTS: usize = 11;

pub const CONSTRAINT_NAMES: [&str; NUM_CONSTRAINTS] = [
    "joint_position",
    "joint_velocity",
    "joint_torque",
    "base_velocity",
    "base_orientation",
    "foot_force_std",
    "body_contact",
    "fall",
    "min_height",
    "max_height",
    "foot_impact",
];

pub const JOINT_POSITION: usize = 0;
pub const JOINT_VELOCITY: usize = 1;
pub const JOINT_TORQUE: usize = 2;
pub const BASE_VELOCITY: usize = 3;
pub const BASE_ORIENTATION: usize = 4;
pub const FOOT_FORCE_STD: usize = 5;
pub const BODY_CONTACT: usize = 6;
pub const FALL: usize = 7;
pub const MIN_HEIGHT: usize = 8;
pub const MAX_HEIGHT: usize = 9;
pub const FOOT_IMPACT: usize = 10;

/// The default constraint set: six soft constraints ramped from 0.05 to
/// their maximum probability, then five hard ones.
///
/// Joint signals are already expressed as excess over the per-joint limits
/// of the robot model, so their limit is zero. The minimum-height signal is
/// the negated clearance.
pub fn default_constraints() -> Vec<ConstraintSpec> {
    vec![
        ConstraintSpec::soft("joint_position", 0.0, 0.05, 0.9),
        ConstraintSpec::soft("joint_velocity", 0.0, 0.05, 0.9),
        ConstraintSpec::soft("joint_torque", 0.0, 0.05, 0.25),
        ConstraintSpec::soft("base_velocity", 0.25, 0.05, 0.25),
        ConstraintSpec::soft("base_orientation", 0.3, 0.05, 0.9),
        ConstraintSpec::soft("foot_force_std", 15.0, 0.05, 0.25),
        ConstraintSpec::hard("body_contact", 0.0),
        ConstraintSpec::hard("fall", std::f64::consts::FRAC_PI_2),
        ConstraintSpec::hard("min_height", -0.12),
        ConstraintSpec::hard("max_height", 0.55),
        ConstraintSpec::hard("foot_impact", 60.0),
    ]
}

/// Quantities accumulated over the physics substeps of one policy step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepExtremes {
    /// Largest `|tau_j| - tau_nominal_j` over joints and substeps.
    pub torque_excess: f64,
    /// Largest raw foot normal force, N.
    pub max_foot_force: f64,
    /// Deepest non-foot penetration, m.
    pub nonfoot_penetration: f64,
}

impl StepExtremes {
    pub fn start() -> Self {
        Self {
            torque_excess: f64::NEG_INFINITY,
            max_foot_force: 0.0,
            nonfoot_penetration: 0.0,
        }
    }

    pub fn record(&mut self, torques: &Joints, model: &RobotModel, foot_normals: [f64; 2], nonfoot: f64) {
        for j in 0..NUM_JOINTS {
            self.torque_excess = self.torque_excess.max(torques[j].abs() - model.nominal_torque[j]);
        }
        self.max_foot_force = self.max_foot_force.max(foot_normals[0]).max(foot_normals[1]);
        self.nonfoot_penetration = self.nonfoot_penetration.max(nonfoot);
    }
}

/// Population standard deviation of the per-foot forces.
pub fn force_std(forces: [f64; 2]) -> f64 {
    0.5 * (forces[0] - forces[1]).abs()
}

pub fn constraint_signals(
    state: &SimState,
    model: &RobotModel,
    extremes: &StepExtremes,
    filtered_foot_forces: [f64; 2],
    clearance: f64,
) -> [f64; NUM_CONSTRAINTS] {
    let excess = |values: &Joints, limits: &Joints| {
        (0..NUM_JOINTS)
            .map(|j| values[j].abs() - limits[j])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let b = &state.base;
    let mut s = [0.0; NUM_CONSTRAINTS];
    s[JOINT_POSITION] = excess(&state.q, &model.position_limits);
    s[JOINT_VELOCITY] = excess(&state.qd, &model.velocity_limits);
    s[JOINT_TORQUE] = extremes.torque_excess;
    s[BASE_VELOCITY] = b.vx.hypot(b.vz);
    s[BASE_ORIENTATION] = b.pitch.abs();
    s[FOOT_FORCE_STD] = force_std(filtered_foot_forces);
    s[BODY_CONTACT] = extremes.nonfoot_penetration;
    s[FALL] = b.pitch.abs();
    s[MIN_HEIGHT] = -clearance;
    s[MAX_HEIGHT] = clearance;
    s[FOOT_IMPACT] = extremes.max_foot_force;
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::BaseState;
    use lunacat_core::constraints::{ConstraintKind, ConstraintSet};

    fn violations(state: &SimState) -> Vec<f64> {
        let model = RobotModel::default();
        let mut ex = StepExtremes::start();
        ex.record(&[0.0; 6], &model, [6.5, 6.5], 0.0);
        let signals = constraint_signals(state, &model, &ex, [6.5, 6.5], 0.38);
        ConstraintSet::new(default_constraints()).unwrap().violations(&signals).unwrap().0
    }

    fn nominal() -> SimState {
        SimState {
            base: BaseState {
                z: 0.38,
                ..BaseState::default()
            },
            q: RobotModel::default().default_positions,
            qd: [0.0; 6],
        }
    }

    #[test]
    fn default_set_matches_names_and_kinds() {
        let specs = default_constraints();
        let names: Vec<_> = specs.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, CONSTRAINT_NAMES);
        assert!(specs[..6].iter().all(|s| s.kind == ConstraintKind::Soft));
        assert!(specs[6..].iter().all(|s| s.kind == ConstraintKind::Hard));
    }

    #[test]
    fn nominal_stance_violates_nothing() {
        assert!(violations(&nominal()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn base_speed_excess() {
        let mut s = nominal();
        s.base.vx = 0.3;
        let v = violations(&s);
        assert!((v[BASE_VELOCITY] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn pitch_excess_is_soft_only() {
        let mut s = nominal();
        s.base.pitch = -0.35;
        let v = violations(&s);
        assert!((v[BASE_ORIENTATION] - 0.05).abs() < 1e-12);
        assert_eq!(v[FALL], 0.0);
    }

    #[test]
    fn force_std_of_two_feet() {
        assert_eq!(force_std([10.0, 40.0]), 15.0);
        assert_eq!(force_std([7.0, 7.0]), 0.0);
    }
}
