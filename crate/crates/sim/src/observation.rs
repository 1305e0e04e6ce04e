//! Observation vector layout and noise.
//!
//! | slice   | content                                         |
//! |---------|-------------------------------------------------|
//! | 0..2    | gravity direction in the body frame             |
//! | 2..4    | base linear velocity in the body frame          |
//! | 4       | pitch rate                                      |
//! | 5..11   | joint positions relative to the defaults        |
//! | 11..17  | joint velocities                                |
//! | 17..23  | previous action                                 |
//! | 23..25  | foot contact flags (rear, front)                |
//! | 25..36  | terrain height minus base height at 11 points   |
//! | 36..39  | command in the body frame (dx, dz, dangle)      |
//!
//! The gravity block is `(-sin pitch, -cos pitch)`, i.e. `(0, -1)` when level.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actuation::Joints;
use crate::command::CommandPose;
use crate::dynamics::{BaseState, SimState};
use crate::model::{rotate, RobotModel};
use crate::terrain::TerrainField;
use lunacat_core::rewards::wrap_angle;

pub const OBS_DIM: usize = 39;
pub const HEIGHT_SCAN_POINTS: usize = 11;
pub const HEIGHT_SCAN_HALF_SPAN: f64 = 0.5;

pub const GRAVITY: std::ops::Range<usize> = 0..2;
pub const LINEAR_VELOCITY: std::ops::Range<usize> = 2..4;
pub const PITCH_RATE: usize = 4;
pub const JOINT_POSITIONS: std::ops::Range<usize> = 5..11;
pub const JOINT_VELOCITIES: std::ops::Range<usize> = 11..17;
pub const PREVIOUS_ACTION: std::ops::Range<usize> = 17..23;
pub const CONTACTS: std::ops::Range<usize> = 23..25;
pub const HEIGHT_SCAN: std::ops::Range<usize> = 25..36;
pub const COMMAND: std::ops::Range<usize> = 36..39;

/// Standard deviations of the additive Gaussian noise per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub gravity: f64,
    pub velocity: f64,
    pub joint_position: f64,
    pub joint_velocity: f64,
    pub height_scan: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            gravity: 0.02,
            velocity: 0.05,
            joint_position: 0.01,
            joint_velocity: 0.1,
            height_scan: 0.01,
        }
    }
}

impl NoiseParams {
    pub fn none() -> Self {
        Self {
            gravity: 0.0,
            velocity: 0.0,
            joint_position: 0.0,
            joint_velocity: 0.0,
            height_scan: 0.0,
        }
    }
}

/// Command pose expressed relative to the base: `R(-pitch) (p* - p_base)`
/// and the wrapped angle difference.
pub fn command_in_body(base: &BaseState, command: &CommandPose) -> [f64; 3] {
    let d = rotate(-base.pitch, [command.x - base.x, command.z - base.z]);
    [d[0], d[1], wrap_angle(command.angle - base.pitch)]
}

/// Inverse of [`command_in_body`].
pub fn command_from_body(base: &BaseState, body: [f64; 3]) -> CommandPose {
    let d = rotate(base.pitch, [body[0], body[1]]);
    CommandPose {
        x: base.x + d[0],
        z: base.z + d[1],
        angle: wrap_angle(body[2] + base.pitch),
    }
}

pub fn height_scan(base: &BaseState, terrain: &TerrainField) -> [f64; HEIGHT_SCAN_POINTS] {
    let c = base.pitch.cos();
    std::array::from_fn(|i| {
        let s = -HEIGHT_SCAN_HALF_SPAN + 2.0 * HEIGHT_SCAN_HALF_SPAN * i as f64 / (HEIGHT_SCAN_POINTS - 1) as f64;
        terrain.height(base.x + s * c) - base.z
    })
}

pub struct ObservationInput<'a> {
    pub state: &'a SimState,
    pub command: &'a CommandPose,
    pub terrain: &'a TerrainField,
    pub model: &'a RobotModel,
    pub previous_action: &'a Joints,
    pub contacts: [bool; 2],
}

pub fn build_observation<R: Rng + ?Sized>(input: &ObservationInput<'_>, noise: &NoiseParams, rng: &mut R) -> Vec<f64> {
    let s = input.state;
    let b = &s.base;
    let mut obs = Vec::with_capacity(OBS_DIM);
    let (sin, cos) = b.pitch.sin_cos();
    obs.extend_from_slice(&[-sin, -cos]);
    obs.extend_from_slice(&rotate(-b.pitch, b.velocity()));
    obs.push(b.pitch_rate);
    obs.extend((0..6).map(|j| s.q[j] - input.model.default_positions[j]));
    obs.extend_from_slice(&s.qd);
    obs.extend_from_slice(input.previous_action);
    obs.extend(input.contacts.iter().map(|&c| if c { 1.0 } else { 0.0 }));
    obs.extend_from_slice(&height_scan(b, input.terrain));
    obs.extend_from_slice(&command_in_body(b, input.command));
    debug_assert_eq!(obs.len(), OBS_DIM);

    let groups = [
        (GRAVITY, noise.gravity),
        (LINEAR_VELOCITY, noise.velocity),
        (PITCH_RATE..PITCH_RATE + 1, noise.velocity),
        (JOINT_POSITIONS, noise.joint_position),
        (JOINT_VELOCITIES, noise.joint_velocity),
        (HEIGHT_SCAN, noise.height_scan),
    ];
    for (range, sigma) in groups {
        if sigma > 0.0 {
            for v in &mut obs[range] {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::TerrainParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn level_state() -> SimState {
        let model = RobotModel::default();
        SimState {
            base: BaseState {
                x: 0.2,
                z: 0.4,
                ..BaseState::default()
            },
            q: model.default_positions,
            qd: [0.0; 6],
        }
    }

    #[test]
    fn layout_and_level_pose() {
        let model = RobotModel::default();
        let terrain = TerrainField::flat(&TerrainParams::flat());
        let state = level_state();
        let command = CommandPose { x: 1.0, z: 0.6, angle: 0.2 };
        let input = ObservationInput {
            state: &state,
            command: &command,
            terrain: &terrain,
            model: &model,
            previous_action: &[0.0; 6],
            contacts: [true, false],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = build_observation(&input, &NoiseParams::none(), &mut rng);
        assert_eq!(obs.len(), OBS_DIM);
        assert_eq!(&obs[GRAVITY], &[-0.0, -1.0]);
        assert_eq!(&obs[CONTACTS], &[1.0, 0.0]);
        assert!(obs[HEIGHT_SCAN].iter().all(|&h| (h + 0.4).abs() < 1e-15));
        let cmd = &obs[COMMAND];
        assert!((cmd[0] - 0.8).abs() < 1e-12 && (cmd[1] - 0.2).abs() < 1e-12 && (cmd[2] - 0.2).abs() < 1e-12);
        assert!(obs[JOINT_POSITIONS].iter().all(|&q| q == 0.0));
    }

    #[test]
    fn noise_free_observation_is_deterministic() {
        let model = RobotModel::default();
        let terrain = TerrainField::generate(1, &TerrainParams::default()).unwrap();
        let state = level_state();
        let command = CommandPose::default();
        let input = ObservationInput {
            state: &state,
            command: &command,
            terrain: &terrain,
            model: &model,
            previous_action: &[0.1; 6],
            contacts: [true, true],
        };
        let a = build_observation(&input, &NoiseParams::none(), &mut ChaCha8Rng::seed_from_u64(1));
        let b = build_observation(&input, &NoiseParams::none(), &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        let c = build_observation(&input, &NoiseParams::default(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_ne!(a, c);
        assert_eq!(&a[PREVIOUS_ACTION], &c[PREVIOUS_ACTION]);
    }

    #[test]
    fn body_frame_round_trip() {
        let base = BaseState {
            x: -1.3,
            z: 0.37,
            pitch: 0.41,
            ..BaseState::default()
        };
        let c = CommandPose { x: 0.4, z: 0.9, angle: -2.9 };
        let back = command_from_body(&base, command_in_body(&base, &c));
        assert!((back.x - c.x).abs() < 1e-12 && (back.z - c.z).abs() < 1e-12);
        assert!((back.angle - c.angle).abs() < 1e-12);
    }
}
