//! Reduced-order rigid-body dynamics: a rigid base carrying massless legs and
//! arm whose joints have reflected rotor inertia.

use thiserror::Error;

use crate::actuation::Joints;
use crate::contact::{implicit_friction, implicit_normal, nonfoot_penetration, ContactParams};
use crate::model::{moment, rotate, RobotModel, Vec2, ARM_JOINTS, NUM_JOINTS};
use crate::terrain::TerrainField;

pub const SUBSTEP: f64 = 0.005;

/// Gauss-Seidel sweeps over the feet when solving contact forces.
const CONTACT_SWEEPS: usize = 8;

/// Base `x`, `z`, pitch followed by the joints.
const DOF: usize = 3 + NUM_JOINTS;
type Generalized = [f64; DOF];

#[derive(Debug, Error, Clone, PartialEq)]
#[error("non-finite simulation state")]
pub struct PhysicsFault;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaseState {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
    pub vx: f64,
    pub vz: f64,
    pub pitch_rate: f64,
}

impl BaseState {
    pub fn position(&self) -> Vec2 {
        [self.x, self.z]
    }

    pub fn velocity(&self) -> Vec2 {
        [self.vx, self.vz]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimState {
    pub base: BaseState,
    /// Joint angles ordered hip/knee rear, hip/knee front, arm 1, arm 2.
    pub q: Joints,
    pub qd: Joints,
}

impl SimState {
    pub fn is_finite(&self) -> bool {
        let b = &self.base;
        [b.x, b.z, b.pitch, b.vx, b.vz, b.pitch_rate]
            .iter()
            .chain(&self.q)
            .chain(&self.qd)
            .all(|v| v.is_finite())
    }
}

/// Mass properties after randomisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties {
    pub mass: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactState {
    /// World-frame ground reaction on each foot, N.
    pub foot_forces: [Vec2; 2],
    pub in_contact: [bool; 2],
    pub nonfoot_penetration: f64,
}

/// World position of a foot together with the world-frame
/// Jacobian columns of its leg joints.
struct FootKinematics {
    position: Vec2,
    lever: Vec2,
    jacobian: (Vec2, Vec2),
}

fn foot_kinematics(state: &SimState, model: &RobotModel, leg: usize) -> FootKinematics {
    let (h, k) = RobotModel::leg_joints(leg);
    let b = &state.base;
    let (_, foot_b) = model.leg_points(leg, state.q[h], state.q[k]);
    let (jh, jk) = model.leg_jacobian(state.q[h], state.q[k]);
    let lever = rotate(b.pitch, foot_b);
    let (jh, jk) = (rotate(b.pitch, jh), rotate(b.pitch, jk));
    FootKinematics {
        position: [b.x + lever[0], b.z + lever[1]],
        lever,
        jacobian: (jh, jk),
    }
}

/// World foot positions (rear, front).
pub fn foot_positions(state: &SimState, model: &RobotModel) -> [Vec2; 2] {
    [0, 1].map(|leg| foot_kinematics(state, model, leg).position)
}

impl FootKinematics {
    /// Rows mapping generalized velocity to the foot's world `x` and `z` velocity.
    fn rows(&self, leg: usize) -> [Generalized; 2] {
        let (h, k) = RobotModel::leg_joints(leg);
        let (jh, jk) = self.jacobian;
        let mut rows = [[0.0; DOF]; 2];
        for (axis, row) in rows.iter_mut().enumerate() {
            row[axis] = 1.0;
            row[2] = if axis == 0 { -self.lever[1] } else { self.lever[0] };
            row[3 + h] = jh[axis];
            row[3 + k] = jk[axis];
        }
        rows
    }
}

fn dot(a: &Generalized, b: &Generalized) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn weighted(a: &Generalized, w: &Generalized, b: &Generalized) -> f64 {
    a.iter().zip(w).zip(b).map(|((x, m), y)| x * m * y).sum()
}

/// Contact forces acting over the next step of length `dt` when the joints
/// apply `torques`.
///
/// The generalized mass is diagonal, so the velocity each foot would reach
/// under gravity, torques and the other foot's reaction is cheap to predict.
/// Normal and friction forces follow the penalty law evaluated at that end
/// of step velocity, solved by Gauss-Seidel sweeps over the feet. For heavy
/// feet this is the explicit law; for light legs it stays stable and lets a
/// planted foot hold.
pub fn contact_forces(
    state: &SimState,
    torques: &Joints,
    model: &RobotModel,
    mass: &MassProperties,
    terrain: &TerrainField,
    params: &ContactParams,
    dt: f64,
) -> ContactState {
    let mut out = ContactState {
        nonfoot_penetration: nonfoot_penetration(model, terrain, state.base.position(), state.base.pitch, &state.q),
        ..ContactState::default()
    };
    let mut inv: Generalized = [0.0; DOF];
    inv[0] = 1.0 / mass.mass;
    inv[1] = inv[0];
    inv[2] = 1.0 / mass.inertia;
    for j in 0..NUM_JOINTS {
        inv[3 + j] = 1.0 / model.reflected_inertia[j];
    }
    let b = &state.base;
    let mut u: Generalized = [0.0; DOF];
    u[..3].copy_from_slice(&[b.vx, b.vz, b.pitch_rate]);
    u[3..].copy_from_slice(&state.qd);
    let mut free: Generalized = [0.0; DOF];
    free[1] = -mass.mass * model.gravity;
    free[2] = -ARM_JOINTS.iter().map(|&j| torques[j]).sum::<f64>();
    free[3..].copy_from_slice(torques);
    for i in 0..DOF {
        u[i] += dt * inv[i] * free[i];
    }

    let mut active = Vec::with_capacity(2);
    for leg in 0..2 {
        let foot = foot_kinematics(state, model, leg);
        let penetration = terrain.height(foot.position[0]) - foot.position[1];
        if penetration > 0.0 {
            out.in_contact[leg] = true;
            active.push((leg, penetration, terrain.slope(foot.position[0]), foot.rows(leg)));
        }
    }
    let push = |u: &mut Generalized, row: &Generalized, force: f64| {
        for i in 0..DOF {
            u[i] += dt * inv[i] * row[i] * force;
        }
    };
    for _ in 0..CONTACT_SWEEPS {
        for (leg, penetration, slope, [rx, rz]) in &active {
            let f = &mut out.foot_forces[*leg];
            let vx = dot(rx, &u) - dt * weighted(rx, &inv, rz) * f[1];
            let vz = dot(rz, &u) - dt * weighted(rz, &inv, rz) * f[1];
            let compliance = dt * (weighted(rz, &inv, rz) - slope * weighted(rx, &inv, rz));
            let normal = implicit_normal(*penetration, slope * vx - vz, compliance, params);
            push(&mut u, rz, normal - f[1]);
            f[1] = normal;

            let xx = weighted(rx, &inv, rx);
            let vt = dot(rx, &u) - dt * xx * f[0];
            let friction = implicit_friction(normal, vt, dt * xx, params);
            push(&mut u, rx, friction - f[0]);
            f[0] = friction;
        }
    }
    out
}

/// Advances the state by `dt` with semi-implicit Euler and returns the
/// contact forces that acted during the step.
///
/// The base receives gravity, the foot reactions (force and moment about its
/// centre of mass) and the reaction of the arm joint torques. Leg joints
/// feel `J^T f` from their foot's ground reaction. While neither foot
/// touches the ground the base acceleration is constant over the step and
/// its pose is advanced with the exact `v dt + a dt^2 / 2` update, so
/// flight follows the ballistic parabola to rounding error. Joints stop at
/// their limits plus the model tolerance, losing their velocity.
pub fn substep(
    state: &mut SimState,
    torques: &Joints,
    model: &RobotModel,
    mass: &MassProperties,
    terrain: &TerrainField,
    params: &ContactParams,
    dt: f64,
) -> Result<ContactState, PhysicsFault> {
    let contacts = contact_forces(state, torques, model, mass, terrain, params, dt);
    let mut force = [0.0, -mass.mass * model.gravity];
    let mut torque = -ARM_JOINTS.iter().map(|&j| torques[j]).sum::<f64>();
    let mut joint_acc = *torques;
    let mut airborne = true;
    for leg in 0..2 {
        let f = contacts.foot_forces[leg];
        if f == [0.0, 0.0] {
            continue;
        }
        airborne = false;
        let foot = foot_kinematics(state, model, leg);
        force[0] += f[0];
        force[1] += f[1];
        torque += moment(foot.lever, f);
        let (h, k) = RobotModel::leg_joints(leg);
        joint_acc[h] += foot.jacobian.0[0] * f[0] + foot.jacobian.0[1] * f[1];
        joint_acc[k] += foot.jacobian.1[0] * f[0] + foot.jacobian.1[1] * f[1];
    }

    let acc = [force[0] / mass.mass, force[1] / mass.mass, torque / mass.inertia];
    let b = &mut state.base;
    b.vx += acc[0] * dt;
    b.vz += acc[1] * dt;
    b.pitch_rate += acc[2] * dt;
    b.x += b.vx * dt;
    b.z += b.vz * dt;
    b.pitch += b.pitch_rate * dt;
    if airborne {
        let half = 0.5 * dt * dt;
        b.x -= acc[0] * half;
        b.z -= acc[1] * half;
        b.pitch -= acc[2] * half;
    }

    for j in 0..NUM_JOINTS {
        state.qd[j] += joint_acc[j] / model.reflected_inertia[j] * dt;
        state.q[j] += state.qd[j] * dt;
        let stop = model.position_limits[j] + model.limit_tolerance;
        if state.q[j].abs() > stop {
            state.q[j] = state.q[j].clamp(-stop, stop);
            state.qd[j] = 0.0;
        }
    }
    if state.is_finite() {
        Ok(contacts)
    } else {
        Err(PhysicsFault)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::TerrainParams;

    fn flying_state() -> SimState {
        SimState {
            base: BaseState {
                x: 0.3,
                z: 5.0,
                pitch: 0.2,
                vx: 0.4,
                vz: 1.1,
                pitch_rate: -0.3,
            },
            q: RobotModel::default().default_positions,
            qd: [0.0; 6],
        }
    }

    #[test]
    fn zero_gravity_free_body_is_uniform_motion() {
        let model = RobotModel {
            gravity: 0.0,
            ..RobotModel::default()
        };
        let terrain = TerrainField::flat(&TerrainParams::flat());
        let mass = MassProperties { mass: 8.0, inertia: 0.2 };
        let mut s = flying_state();
        s.base.vx = 0.0;
        s.base.vz = 0.0;
        s.base.pitch_rate = 0.0;
        let start = s;
        for _ in 0..200 {
            substep(&mut s, &[0.0; 6], &model, &mass, &terrain, &ContactParams::default(), SUBSTEP).unwrap();
        }
        assert_eq!(s, start);
    }

    #[test]
    fn arm_torque_reacts_on_base() {
        let model = RobotModel::default();
        let terrain = TerrainField::flat(&TerrainParams::flat());
        let mass = MassProperties { mass: 8.0, inertia: 0.2 };
        let mut s = flying_state();
        s.base.pitch_rate = 0.0;
        let mut tau = [0.0; 6];
        tau[4] = 1.0;
        substep(&mut s, &tau, &model, &mass, &terrain, &ContactParams::default(), SUBSTEP).unwrap();
        assert!((s.base.pitch_rate + SUBSTEP / 0.2).abs() < 1e-12);
        assert!((s.qd[4] - SUBSTEP / 0.01).abs() < 1e-12);
    }

    #[test]
    fn nan_torque_is_a_fault() {
        let model = RobotModel::default();
        let terrain = TerrainField::flat(&TerrainParams::flat());
        let mass = MassProperties { mass: 8.0, inertia: 0.2 };
        let mut s = flying_state();
        let mut tau = [0.0; 6];
        tau[0] = f64::NAN;
        assert_eq!(
            substep(&mut s, &tau, &model, &mass, &terrain, &ContactParams::default(), SUBSTEP),
            Err(PhysicsFault)
        );
    }
}
