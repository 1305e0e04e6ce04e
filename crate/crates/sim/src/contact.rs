//! Penalty-based ground contact.

use serde::{Deserialize, Serialize};

use crate::model::{rotate, RobotModel, Vec2, ARM_1, ARM_2};
use crate::terrain::TerrainField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    /// Normal stiffness, N/m.
    pub stiffness: f64,
    /// Normal damping, N s/m.
    pub damping: f64,
    pub friction: f64,
    /// Tangential speed at which friction saturates, m/s.
    pub slip_velocity: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 4000.0,
            damping: 80.0,
            friction: 0.8,
            slip_velocity: 0.05,
        }
    }
}

/// Ground reaction on one foot as `[tangential, normal]`.
///
/// `penetration_rate` is the rate at which the foot sinks into the ground and
/// `tangential_velocity` the foot's horizontal speed. The normal force is
/// never negative and vanishes when the foot is above the surface.
pub fn foot_force(penetration: f64, penetration_rate: f64, tangential_velocity: f64, params: &ContactParams) -> Vec2 {
    if penetration <= 0.0 {
        return [0.0, 0.0];
    }
    let normal = (params.stiffness * penetration + params.damping * penetration_rate).max(0.0);
    let slip = (tangential_velocity / params.slip_velocity).clamp(-1.0, 1.0);
    [-params.friction * normal * slip, normal]
}

/// Normal force of [`foot_force`] evaluated at the end of a step.
///
/// `penetration_rate` is the rate the foot would have at the end of the step
/// without its own normal force, and `compliance` how much a unit normal
/// force lowers that rate over the step. Zero compliance gives the explicit
/// law.
pub fn implicit_normal(penetration: f64, penetration_rate: f64, compliance: f64, params: &ContactParams) -> f64 {
    if penetration <= 0.0 {
        return 0.0;
    }
    let free = params.stiffness * penetration + params.damping * penetration_rate;
    (free / (1.0 + params.damping * compliance.max(0.0))).max(0.0)
}

/// Regularized Coulomb friction evaluated at the end of a step, given the
/// tangential velocity the foot would have without its own friction and the
/// velocity change per unit friction force over the step.
pub fn implicit_friction(normal: f64, tangential_velocity: f64, compliance: f64, params: &ContactParams) -> f64 {
    let limit = params.friction * normal;
    if limit <= 0.0 {
        return 0.0;
    }
    let viscous = limit / params.slip_velocity;
    let magnitude = (viscous * tangential_velocity.abs() / (1.0 + viscous * compliance.max(0.0))).min(limit);
    -magnitude * tangential_velocity.signum()
}

/// [`foot_force`] solved implicitly for a single foot whose tangential and
/// normal compliances over the step are `compliance`.
pub fn foot_force_implicit(
    penetration: f64,
    penetration_rate: f64,
    tangential_velocity: f64,
    params: &ContactParams,
    compliance: Vec2,
) -> Vec2 {
    let normal = implicit_normal(penetration, penetration_rate, compliance[1], params);
    [implicit_friction(normal, tangential_velocity, compliance[0], params), normal]
}

/// Deepest penetration of any non-foot point (base corners, knees, elbow, arm
/// tip) below the terrain; zero when none touches.
pub fn nonfoot_penetration(
    model: &RobotModel,
    terrain: &TerrainField,
    position: Vec2,
    pitch: f64,
    q: &[f64; 6],
) -> f64 {
    let mut points: Vec<Vec2> = model.base_corners().to_vec();
    for leg in 0..2 {
        let (h, k) = RobotModel::leg_joints(leg);
        points.push(model.leg_points(leg, q[h], q[k]).0);
    }
    let (elbow, tip, _) = model.arm_points(q[ARM_1], q[ARM_2]);
    points.push(elbow);
    points.push(tip);
    points
        .iter()
        .map(|p| {
            let w = rotate(pitch, *p);
            let (x, z) = (position[0] + w[0], position[1] + w[1]);
            terrain.height(x) - z
        })
        .fold(0.0, f64::max)
}
