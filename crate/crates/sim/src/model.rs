//! Robot parameters and planar kinematics.
//!
//! Frames: world `x` points forward and `z` up. The base pitch `theta`
//! rotates body axes counter-clockwise, so the body `x` axis is
//! `(cos theta, sin theta)` in the world. Joint angles follow the same sense.
//! Leg angles are measured from the body's downward axis; arm angles from the
//! body `x` axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_JOINTS: usize = 6;
pub const HIP_L: usize = 0;
pub const KNEE_L: usize = 1;
pub const HIP_R: usize = 2;
pub const KNEE_R: usize = 3;
pub const ARM_1: usize = 4;
pub const ARM_2: usize = 5;
pub const LEG_JOINTS: [usize; 4] = [HIP_L, KNEE_L, HIP_R, KNEE_R];
pub const ARM_JOINTS: [usize; 2] = [ARM_1, ARM_2];
pub const MOON_GRAVITY: f64 = 9.81 / 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid robot model: {0}")]
pub struct ModelError(pub String);

pub type Vec2 = [f64; 2];

pub fn rotate(theta: f64, v: Vec2) -> Vec2 {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// `omega x r` for a rotation rate about the out-of-plane axis.
pub fn cross_rate(omega: f64, r: Vec2) -> Vec2 {
    [-omega * r[1], omega * r[0]]
}

/// Planar moment of `f` applied at lever `r`.
pub fn moment(r: Vec2, f: Vec2) -> f64 {
    r[0] * f[1] - r[1] * f[0]
}

fn down(angle: f64) -> Vec2 {
    [angle.sin(), -angle.cos()]
}

fn down_derivative(angle: f64) -> Vec2 {
    [angle.cos(), angle.sin()]
}

fn along(angle: f64) -> Vec2 {
    [angle.cos(), angle.sin()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotModel {
    /// Nominal base mass, kg (randomised per reset).
    pub base_mass: f64,
    /// Nominal base pitch inertia, kg m^2 (scaled with the mass).
    pub base_inertia: f64,
    /// Base rectangle half-length and half-height, m.
    pub base_half_extent: Vec2,
    /// Hip attachment points (rear, front), body frame, m.
    pub hips: [Vec2; 2],
    pub thigh_length: f64,
    pub shank_length: f64,
    /// Arm mount, body frame, m.
    pub arm_mount: Vec2,
    pub arm_lengths: Vec2,
    /// Fixed offsets added to the arm joint angles.
    pub arm_offsets: Vec2,
    pub reflected_inertia: [f64; NUM_JOINTS],
    pub position_limits: [f64; NUM_JOINTS],
    /// Joints are stopped this far past their limits.
    pub limit_tolerance: f64,
    pub velocity_limits: [f64; NUM_JOINTS],
    pub nominal_torque: [f64; NUM_JOINTS],
    pub absolute_torque: [f64; NUM_JOINTS],
    pub kp: [f64; NUM_JOINTS],
    pub kd: [f64; NUM_JOINTS],
    pub default_positions: [f64; NUM_JOINTS],
    pub action_scale: [f64; NUM_JOINTS],
    pub action_clip: f64,
    pub gravity: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        let legs_arm = |l: f64, a: f64| [l, l, l, l, a, a];
        Self {
            base_mass: 8.0,
            base_inertia: 0.2,
            base_half_extent: [0.25, 0.05],
            hips: [[-0.2, -0.05], [0.2, -0.05]],
            thigh_length: 0.2,
            shank_length: 0.2,
            arm_mount: [0.0, 0.05],
            arm_lengths: [0.55, 0.25],
            arm_offsets: [std::f64::consts::FRAC_PI_2, -std::f64::consts::PI],
            reflected_inertia: legs_arm(0.05, 0.01),
            position_limits: legs_arm(2.0, 2.6),
            limit_tolerance: 0.1,
            velocity_limits: [15.0; NUM_JOINTS],
            nominal_torque: legs_arm(20.0, 6.0),
            absolute_torque: legs_arm(30.0, 9.0),
            kp: legs_arm(40.0, 15.0),
            kd: legs_arm(1.5, 0.6),
            default_positions: [0.6, -1.2, 0.6, -1.2, 0.0, 0.0],
            action_scale: legs_arm(0.4, 0.6),
            action_clip: 5.0,
            gravity: MOON_GRAVITY,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("base_mass", self.base_mass),
            ("base_inertia", self.base_inertia),
            ("thigh_length", self.thigh_length),
            ("shank_length", self.shank_length),
            ("arm_lengths[0]", self.arm_lengths[0]),
            ("arm_lengths[1]", self.arm_lengths[1]),
            ("action_clip", self.action_clip),
            ("limit_tolerance", self.limit_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError(format!("{name} must be positive, got {v}")));
            }
        }
        let arrays = [
            ("reflected_inertia", &self.reflected_inertia),
            ("position_limits", &self.position_limits),
            ("velocity_limits", &self.velocity_limits),
            ("nominal_torque", &self.nominal_torque),
            ("absolute_torque", &self.absolute_torque),
            ("kp", &self.kp),
            ("kd", &self.kd),
            ("action_scale", &self.action_scale),
        ];
        for (name, a) in arrays {
            if let Some(v) = a.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(ModelError(format!("every {name} entry must be positive, got {v}")));
            }
        }
        if (self.gravity / MOON_GRAVITY - 1.0).abs() > 0.01 {
            return Err(ModelError(format!(
                "gravity must be within 1% of {MOON_GRAVITY}, got {}",
                self.gravity
            )));
        }
        for j in 0..NUM_JOINTS {
            if self.default_positions[j].abs() > self.position_limits[j] {
                return Err(ModelError(format!("default position of joint {j} is outside its limits")));
            }
        }
        Ok(())
    }

    pub fn leg_joints(leg: usize) -> (usize, usize) {
        (2 * leg, 2 * leg + 1)
    }

    /// Knee and foot positions in the body frame.
    pub fn leg_points(&self, leg: usize, q_hip: f64, q_knee: f64) -> (Vec2, Vec2) {
        let hip = self.hips[leg];
        let t = down(q_hip);
        let s = down(q_hip + q_knee);
        let knee = [hip[0] + self.thigh_length * t[0], hip[1] + self.thigh_length * t[1]];
        let foot = [knee[0] + self.shank_length * s[0], knee[1] + self.shank_length * s[1]];
        (knee, foot)
    }

    /// Columns `d foot / d q_hip` and `d foot / d q_knee`, body frame.
    pub fn leg_jacobian(&self, q_hip: f64, q_knee: f64) -> (Vec2, Vec2) {
        let t = down_derivative(q_hip);
        let s = down_derivative(q_hip + q_knee);
        let dk = [self.shank_length * s[0], self.shank_length * s[1]];
        let dh = [self.thigh_length * t[0] + dk[0], self.thigh_length * t[1] + dk[1]];
        (dh, dk)
    }

    /// Absolute arm link angles in the body frame.
    pub fn arm_angles(&self, q1: f64, q2: f64) -> Vec2 {
        let a1 = q1 + self.arm_offsets[0];
        [a1, a1 + q2 + self.arm_offsets[1]]
    }

    /// Elbow and tip positions in the body frame, and the tip angle.
    pub fn arm_points(&self, q1: f64, q2: f64) -> (Vec2, Vec2, f64) {
        let [a1, a2] = self.arm_angles(q1, q2);
        let (u1, u2) = (along(a1), along(a2));
        let m = self.arm_mount;
        let elbow = [m[0] + self.arm_lengths[0] * u1[0], m[1] + self.arm_lengths[0] * u1[1]];
        let tip = [elbow[0] + self.arm_lengths[1] * u2[0], elbow[1] + self.arm_lengths[1] * u2[1]];
        (elbow, tip, a2)
    }

    pub fn base_corners(&self) -> [Vec2; 4] {
        let [hx, hz] = self.base_half_extent;
        [[-hx, -hz], [hx, -hz], [hx, hz], [-hx, hz]]
    }

    /// Nominal end-effector angle relative to the body.
    pub fn default_ee_angle(&self) -> f64 {
        self.arm_angles(self.default_positions[ARM_1], self.default_positions[ARM_2])[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_is_valid() {
        RobotModel::default().validate().unwrap();
    }

    #[test]
    fn default_stance_puts_feet_under_hips() {
        let m = RobotModel::default();
        for leg in 0..2 {
            let (_, foot) = m.leg_points(leg, 0.6, -1.2);
            assert!((foot[0] - m.hips[leg][0]).abs() < 1e-12);
            assert!(foot[1] < m.hips[leg][1] - 0.3);
        }
    }

    #[test]
    fn leg_jacobian_matches_finite_differences() {
        let m = RobotModel::default();
        let (qh, qk, h) = (0.37, -0.81, 1e-6);
        let (dh, dk) = m.leg_jacobian(qh, qk);
        let f = |a, b| m.leg_points(0, a, b).1;
        for c in 0..2 {
            let nh = (f(qh + h, qk)[c] - f(qh - h, qk)[c]) / (2.0 * h);
            let nk = (f(qh, qk + h)[c] - f(qh, qk - h)[c]) / (2.0 * h);
            assert!((nh - dh[c]).abs() < 1e-8);
            assert!((nk - dk[c]).abs() < 1e-8);
        }
    }

    #[test]
    fn rotation_and_moment_conventions() {
        let r = rotate(std::f64::consts::FRAC_PI_2, [1.0, 0.0]);
        assert!(r[0].abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
        assert_eq!(moment([1.0, 0.0], [0.0, 1.0]), 1.0);
        assert_eq!(cross_rate(2.0, [1.0, 0.0]), [-0.0, 2.0]);
    }

    #[test]
    fn lunar_gravity_enforced() {
        let m = RobotModel {
            gravity: 9.81,
            ..RobotModel::default()
        };
        assert!(m.validate().is_err());
    }
}
