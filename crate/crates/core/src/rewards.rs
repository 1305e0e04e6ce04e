//! Reward kernels for whole-body end-effector pose tracking.
//!
//! All functions are pure. Orientation errors are available for spatial
//! (unit quaternion) and planar (angle) poses.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on quaternion norm for [`UnitQuaternion::new`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// Length constant of the base distance reward, in metres.
pub const BASE_REWARD_LENGTH: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("quaternion norm {0} is not 1 within tolerance")]
    NonUnitQuaternion(f64),
    #[error("cannot compare planar and spatial orientations")]
    MixedOrientation,
    #[error("joint {0} is assigned to more than one group")]
    OverlappingPartition(usize),
    #[error("joint {0} is not assigned to any group")]
    IncompletePartition(usize),
    #[error("joint index {0} out of range")]
    JointOutOfRange(usize),
    #[error("unknown reward component `{0}`")]
    UnknownComponent(String),
    #[error("reward component `{0}` has no weight")]
    MissingWeight(String),
    #[error("reward parameter `{0}` must be strictly positive")]
    NonPositiveParameter(&'static str),
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, RewardError> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
            return Err(RewardError::NonUnitQuaternion(norm));
        }
        Ok(Self { w, x, y, z })
    }

    /// Rotation of `angle` radians about `axis` (need not be normalised).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (0.5 * angle).sin_cos();
        Self {
            w: c,
            x: s * axis[0] / n,
            y: s * axis[1] / n,
            z: s * axis[2] / n,
        }
    }

    pub fn components(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: (a.w * b.x + a.x * b.w) + (a.y * b.z - a.z * b.y),
            y: (a.w * b.y + a.y * b.w) + (a.z * b.x - a.x * b.z),
            z: (a.w * b.z + a.z * b.w) + (a.x * b.y - a.y * b.x),
        }
    }

    /// Rotation angle in `[0, pi]`, taking the shortest arc.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientation {
    Planar(f64),
    Spatial(UnitQuaternion),
}

/// Squared Euclidean distance `|p - target|^2`.
pub fn position_error(p: &[f64], target: &[f64]) -> Result<f64, RewardError> {
    if p.len() != target.len() {
        return Err(RewardError::DimensionMismatch(p.len(), target.len()));
    }
    Ok(p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Magnitude of the relative rotation between two unit quaternions.
pub fn quaternion_error(q: &UnitQuaternion, target: &UnitQuaternion) -> f64 {
    q.conjugate().mul(target).angle()
}

/// `|wrap(theta - target)|`.
pub fn planar_angle_error(theta: f64, target: f64) -> f64 {
    wrap_angle(theta - target).abs()
}

pub fn orientation_error(q: &Orientation, target: &Orientation) -> Result<f64, RewardError> {
    match (q, target) {
        (Orientation::Planar(a), Orientation::Planar(b)) => Ok(planar_angle_error(*a, *b)),
        (Orientation::Spatial(a), Orientation::Spatial(b)) => Ok(quaternion_error(a, b)),
        _ => Err(RewardError::MixedOrientation),
    }
}

fn default_weights() -> BTreeMap<String, f64> {
    BTreeMap::from([("task".to_string(), 1.0), ("power".to_string(), 1.0)])
}

/// Sensitivities and weights of the tracking and power rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    /// Position error scale, m^2.
    pub sigma_pos: f64,
    /// Orientation error scale, rad.
    pub sigma_rot: f64,
    /// Horizontal radius from which the arm reaches the target, m.
    pub reach_radius: f64,
    /// Sigmoid steepness of the base gate, 1/m.
    pub gate_steepness: f64,
    pub omega_legs: f64,
    pub omega_arm: f64,
    /// Power normalisers, W.
    pub mu_legs: f64,
    pub mu_arm: f64,
    #[serde(default = "default_weights")]
    pub weights: BTreeMap<String, f64>,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            sigma_pos: 0.25,
            sigma_rot: 0.5,
            reach_radius: 0.6,
            gate_steepness: 10.0,
            omega_legs: 0.1,
            omega_arm: 0.1,
            mu_legs: 40.0,
            mu_arm: 10.0,
            weights: default_weights(),
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RewardError> {
        let fields = [
            ("sigma_pos", self.sigma_pos),
            ("sigma_rot", self.sigma_rot),
            ("reach_radius", self.reach_radius),
            ("gate_steepness", self.gate_steepness),
            ("omega_legs", self.omega_legs),
            ("omega_arm", self.omega_arm),
            ("mu_legs", self.mu_legs),
            ("mu_arm", self.mu_arm),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(RewardError::NonPositiveParameter(name));
            }
        }
        Ok(())
    }
}

/// `exp(-e_pos / sigma_pos) * exp(-e_rot / sigma_rot)`.
pub fn pose_reward(e_pos: f64, e_rot: f64, params: &RewardParams) -> f64 {
    (-e_pos / params.sigma_pos).exp() * (-e_rot / params.sigma_rot).exp()
}

/// Sigmoid gate `1 / (1 + exp(-k (d_base - r)))`.
pub fn base_gate(d_base: f64, params: &RewardParams) -> f64 {
    1.0 / (1.0 + (-params.gate_steepness * (d_base - params.reach_radius)).exp())
}

/// Base distance reward, clamped at 1 inside the reach radius.
pub fn base_reward(d_base: f64, params: &RewardParams) -> f64 {
    (-(d_base - params.reach_radius) / BASE_REWARD_LENGTH).exp().min(1.0)
}

pub fn task_reward(r_pose: f64, gate: f64, r_base: f64) -> f64 {
    r_pose * (gate * r_base)
}

/// Disjoint assignment of joints to the leg and arm groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointGroups {
    pub legs: Vec<usize>,
    pub arm: Vec<usize>,
}

impl JointGroups {
    pub fn validate(&self, joint_count: usize) -> Result<(), RewardError> {
        let mut seen = vec![false; joint_count];
        for &j in self.legs.iter().chain(&self.arm) {
            let slot = seen.get_mut(j).ok_or(RewardError::JointOutOfRange(j))?;
            if *slot {
                return Err(RewardError::OverlappingPartition(j));
            }
            *slot = true;
        }
        match seen.iter().position(|s| !s) {
            Some(j) => Err(RewardError::IncompletePartition(j)),
            None => Ok(()),
        }
    }
}

/// Sum of per-joint mechanical power magnitudes `|qd_j * tau_j|` over `joints`.
pub fn group_power(joint_vels: &[f64], joint_torques: &[f64], joints: &[usize]) -> f64 {
    joints
        .iter()
        .map(|&j| (joint_vels[j] * joint_torques[j]).abs())
        .sum()
}

/// Positive power reward: high when mechanical power is low.
pub fn power_reward(
    joint_vels: &[f64],
    joint_torques: &[f64],
    groups: &JointGroups,
    params: &RewardParams,
) -> Result<f64, RewardError> {
    if joint_vels.len() != joint_torques.len() {
        return Err(RewardError::DimensionMismatch(
            joint_vels.len(),
            joint_torques.len(),
        ));
    }
    groups.validate(joint_vels.len())?;
    let legs = group_power(joint_vels, joint_torques, &groups.legs);
    let arm = group_power(joint_vels, joint_torques, &groups.arm);
    Ok(power_reward_from_sums(legs, arm, params))
}

pub fn power_reward_from_sums(legs_power: f64, arm_power: f64, params: &RewardParams) -> f64 {
    params.omega_legs * (-legs_power / params.mu_legs).exp()
        + params.omega_arm * (-arm_power / params.mu_arm).exp()
}

/// Weighted sum of named reward components.
pub fn total_step_reward(
    components: &BTreeMap<String, f64>,
    weights: &BTreeMap<String, f64>,
) -> Result<f64, RewardError> {
    if let Some(name) = weights.keys().find(|k| !components.contains_key(*k)) {
        return Err(RewardError::UnknownComponent(name.clone()));
    }
    components
        .iter()
        .map(|(name, value)| {
            weights
                .get(name)
                .map(|w| w * value)
                .ok_or_else(|| RewardError::MissingWeight(name.clone()))
        })
        .sum()
}
