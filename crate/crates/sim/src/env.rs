//! The pose-tracking environment.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use lunacat_core::env::{EnvFault, Environment, StepResult, TrackingError};
use lunacat_core::rewards::{
    base_gate, base_reward, planar_angle_error, pose_reward, power_reward_from_sums, total_step_reward, task_reward,
    RewardParams,
};

use crate::actuation::{joint_targets, pd_torque, DelayLine, Joints};
use crate::command::{sample_command, CommandParams, CommandPose};
use crate::contact::ContactParams;
use crate::dynamics::{contact_forces, substep, BaseState, MassProperties, SimState, SUBSTEP};
use crate::model::{rotate, ModelError, RobotModel, ARM_1, ARM_2, ARM_JOINTS, LEG_JOINTS, NUM_JOINTS};
use crate::observation::{build_observation, NoiseParams, ObservationInput, OBS_DIM};
use crate::signals::{constraint_signals, StepExtremes, CONSTRAINT_NAMES, NUM_CONSTRAINTS};
use crate::terrain::{TerrainError, TerrainField, TerrainParams};

pub const REWARD_TERMS: [&str; 2] = ["task", "power"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error("invalid environment setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationParams {
    /// Base mass is scaled by a factor drawn from `1 +- mass_fraction`.
    pub mass_fraction: f64,
    /// Upper bound of the per-episode action delay, s.
    pub max_action_delay: f64,
    /// Spawn position is drawn from `+- spawn_range`, m.
    pub spawn_range: f64,
}

impl Default for RandomizationParams {
    fn default() -> Self {
        Self {
            mass_fraction: 0.1,
            max_action_delay: 0.04,
            spawn_range: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub model: RobotModel,
    pub terrain: TerrainParams,
    pub contact: ContactParams,
    pub noise: NoiseParams,
    pub command: CommandParams,
    pub randomization: RandomizationParams,
    /// Policy steps per episode (10 ms each).
    pub episode_steps: u32,
    /// Settling time after placing the robot at reset, s.
    pub settle_time: f64,
    /// Time constant of the foot-force low-pass filter, s.
    pub foot_force_time_constant: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            model: RobotModel::default(),
            terrain: TerrainParams::default(),
            contact: ContactParams::default(),
            noise: NoiseParams::default(),
            command: CommandParams::default(),
            randomization: RandomizationParams::default(),
            episode_steps: 1000,
            settle_time: 0.5,
            foot_force_time_constant: 0.05,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.model.validate()?;
        self.terrain.validate()?;
        let r = &self.randomization;
        let checks = [
            (self.episode_steps > 0, "episode_steps must be positive"),
            (self.settle_time >= 0.0, "settle_time must be non-negative"),
            (self.foot_force_time_constant > 0.0, "foot_force_time_constant must be positive"),
            ((0.0..1.0).contains(&r.mass_fraction), "mass_fraction must lie in [0, 1)"),
            (r.max_action_delay >= 0.0, "max_action_delay must be non-negative"),
            (r.spawn_range >= 0.0, "spawn_range must be non-negative"),
            (
                self.command.height_max >= self.command.height_min,
                "command height_max must not be below height_min",
            ),
            (
                self.contact.stiffness > 0.0 && self.contact.slip_velocity > 0.0,
                "contact stiffness and slip_velocity must be positive",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(SimError::Invalid(msg.to_string())),
            None => Ok(()),
        }
    }
}

pub const SUBSTEPS_PER_STEP: u64 = 2;
pub const STEP_DT: f64 = SUBSTEP * SUBSTEPS_PER_STEP as f64;

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    pub ee_position: [f64; 2],
    pub ee_angle: f64,
    pub position_error: f64,
    pub orientation_error: f64,
    pub foot_forces: [f64; 2],
    pub torques: Joints,
    pub signals: [f64; NUM_CONSTRAINTS],
    pub task: f64,
    pub power: f64,
}

pub struct LunaEnv {
    config: EnvConfig,
    rewards: RewardParams,
    rng: ChaCha8Rng,
    terrain: TerrainField,
    state: SimState,
    mass: MassProperties,
    delay: DelayLine,
    substeps: u64,
    steps: u32,
    previous_action: Joints,
    filtered_forces: [f64; 2],
    contacts: [bool; 2],
    command: CommandPose,
    info: StepInfo,
}

impl LunaEnv {
    /// Environment `index` of a pool seeded with `seed`; each index gets its
    /// own random stream.
    pub fn new(config: EnvConfig, rewards: RewardParams, seed: u64, index: usize) -> Result<Self, SimError> {
        config.validate()?;
        rewards
            .validate()
            .map_err(|e| SimError::Invalid(format!("rewards: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let terrain = if config.terrain.regenerate_on_reset {
            TerrainField::flat(&config.terrain)
        } else {
            TerrainField::generate(rng.random(), &config.terrain)?
        };
        let model = &config.model;
        Ok(Self {
            mass: MassProperties {
                mass: model.base_mass,
                inertia: model.base_inertia,
            },
            delay: DelayLine::new(0, model.default_positions),
            state: SimState::default(),
            substeps: 0,
            steps: 0,
            previous_action: [0.0; NUM_JOINTS],
            filtered_forces: [0.0; 2],
            contacts: [false; 2],
            command: CommandPose::default(),
            info: StepInfo::default(),
            config,
            rewards,
            rng,
            terrain,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn set_state(&mut self, state: SimState) {
        self.state = state;
    }

    pub fn terrain(&self) -> &TerrainField {
        &self.terrain
    }

    pub fn command(&self) -> &CommandPose {
        &self.command
    }

    pub fn set_command(&mut self, command: CommandPose) {
        self.command = command;
    }

    pub fn mass(&self) -> &MassProperties {
        &self.mass
    }

    pub fn delay_substeps(&self) -> u64 {
        self.delay.delay_substeps()
    }

    pub fn contacts(&self) -> [bool; 2] {
        self.contacts
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn episode_time(&self) -> f64 {
        self.steps as f64 * STEP_DT
    }

    pub fn last_info(&self) -> &StepInfo {
        &self.info
    }

    pub fn clearance(&self) -> f64 {
        self.state.base.z - self.terrain.height(self.state.base.x)
    }

    /// End-effector position and angle in the world frame.
    pub fn ee_pose(&self) -> ([f64; 2], f64) {
        let model = &self.config.model;
        let b = &self.state.base;
        let (_, tip, angle) = model.arm_points(self.state.q[ARM_1], self.state.q[ARM_2]);
        let w = rotate(b.pitch, tip);
        ([b.x + w[0], b.z + w[1]], b.pitch + angle)
    }

    /// Places the robot with default joints so its lower foot touches the
    /// ground, then lets it settle under PD control.
    fn place_and_settle(&mut self, x: f64) {
        let model = &self.config.model;
        let q = model.default_positions;
        let z = (0..2)
            .map(|leg| {
                let (h, k) = RobotModel::leg_joints(leg);
                let (_, foot) = model.leg_points(leg, q[h], q[k]);
                self.terrain.height(x + foot[0]) - foot[1]
            })
            .fold(f64::NEG_INFINITY, f64::max);
        self.state = SimState {
            base: BaseState {
                x,
                z,
                ..BaseState::default()
            },
            q,
            qd: [0.0; NUM_JOINTS],
        };
        let settle = (self.config.settle_time / SUBSTEP).round() as usize;
        for _ in 0..settle {
            let tau = pd_torque(&q, &self.state.q, &self.state.qd, model);
            if substep(
                &mut self.state,
                &tau,
                model,
                &self.mass,
                &self.terrain,
                &self.config.contact,
                SUBSTEP,
            )
            .is_err()
            {
                break;
            }
        }
    }

    fn observe(&mut self) -> Vec<f64> {
        let input = ObservationInput {
            state: &self.state,
            command: &self.command,
            terrain: &self.terrain,
            model: &self.config.model,
            previous_action: &self.previous_action,
            contacts: self.contacts,
        };
        build_observation(&input, &self.config.noise, &mut self.rng)
    }

    fn fault(&self, what: &str) -> EnvFault {
        EnvFault(format!("{what} at t={:.2}s", self.episode_time()))
    }
}

impl Environment for LunaEnv {
    fn observation_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_dim(&self) -> usize {
        NUM_JOINTS
    }

    fn constraint_names(&self) -> Vec<String> {
        CONSTRAINT_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn reward_terms(&self) -> Vec<String> {
        REWARD_TERMS.iter().map(|s| s.to_string()).collect()
    }

    fn reset(&mut self) -> Vec<f64> {
        if self.config.terrain.regenerate_on_reset {
            let seed = self.rng.random();
            self.terrain = TerrainField::generate(seed, &self.config.terrain).expect("terrain parameters validated");
        }
        let model = &self.config.model;
        let r = &self.config.randomization;
        let scale = if r.mass_fraction > 0.0 {
            self.rng.random_range(1.0 - r.mass_fraction..=1.0 + r.mass_fraction)
        } else {
            1.0
        };
        self.mass = MassProperties {
            mass: model.base_mass * scale,
            inertia: model.base_inertia * scale,
        };
        let max_delay = (r.max_action_delay / SUBSTEP).round() as u64;
        let delay = self.rng.random_range(0..=max_delay);
        self.delay = DelayLine::new(delay, model.default_positions);
        let x = if r.spawn_range > 0.0 {
            self.rng.random_range(-r.spawn_range..=r.spawn_range)
        } else {
            0.0
        };
        self.place_and_settle(x);
        let model = &self.config.model;
        let hold = pd_torque(&model.default_positions, &self.state.q, &self.state.qd, model);
        let contacts = contact_forces(&self.state, &hold, model, &self.mass, &self.terrain, &self.config.contact, SUBSTEP);
        self.filtered_forces = [contacts.foot_forces[0][1], contacts.foot_forces[1][1]];
        self.contacts = contacts.in_contact;
        let default_angle = self.config.model.default_ee_angle();
        self.command = sample_command(
            self.state.base.x,
            &self.terrain,
            default_angle,
            &self.config.command,
            &mut self.rng,
        );
        self.substeps = 0;
        self.steps = 0;
        self.previous_action = [0.0; NUM_JOINTS];
        self.info = StepInfo::default();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvFault> {
        if action.len() != NUM_JOINTS {
            return Err(self.fault(&format!("action has {} values", action.len())));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(self.fault("non-finite action"));
        }
        let model = &self.config.model;
        let clip = model.action_clip;
        let action: Joints = std::array::from_fn(|j| action[j].clamp(-clip, clip));
        self.delay.push(self.substeps, joint_targets(&action, model));

        let mut extremes = StepExtremes::start();
        let (mut legs_power, mut arm_power) = (0.0, 0.0);
        let mut torques = [0.0; NUM_JOINTS];
        let alpha = SUBSTEP / self.config.foot_force_time_constant;
        for _ in 0..SUBSTEPS_PER_STEP {
            let targets = self.delay.current(self.substeps);
            torques = pd_torque(&targets, &self.state.q, &self.state.qd, model);
            legs_power += LEG_JOINTS.iter().map(|&j| (self.state.qd[j] * torques[j]).abs()).sum::<f64>();
            arm_power += ARM_JOINTS.iter().map(|&j| (self.state.qd[j] * torques[j]).abs()).sum::<f64>();
            let contacts = substep(
                &mut self.state,
                &torques,
                model,
                &self.mass,
                &self.terrain,
                &self.config.contact,
                SUBSTEP,
            )
            .map_err(|e| self.fault(&e.to_string()))?;
            let normals = [contacts.foot_forces[0][1], contacts.foot_forces[1][1]];
            for (f, n) in self.filtered_forces.iter_mut().zip(normals) {
                *f += alpha * (n - *f);
            }
            extremes.record(&torques, model, normals, contacts.nonfoot_penetration);
            self.contacts = contacts.in_contact;
            self.substeps += 1;
        }
        let n = SUBSTEPS_PER_STEP as f64;
        let after = contact_forces(&self.state, &torques, model, &self.mass, &self.terrain, &self.config.contact, SUBSTEP);
        extremes.nonfoot_penetration = extremes.nonfoot_penetration.max(after.nonfoot_penetration);
        self.contacts = after.in_contact;
        self.steps += 1;
        self.previous_action = action;

        let (ee, ee_angle) = self.ee_pose();
        let c = self.command;
        let squared = (ee[0] - c.x).powi(2) + (ee[1] - c.z).powi(2);
        let rot_error = planar_angle_error(ee_angle, c.angle);
        let d_base = (self.state.base.x - c.x).abs();
        let p = &self.rewards;
        let task = task_reward(pose_reward(squared, rot_error, p), base_gate(d_base, p), base_reward(d_base, p));
        let power = power_reward_from_sums(legs_power / n, arm_power / n, p);
        let components = BTreeMap::from([("task".to_string(), task), ("power".to_string(), power)]);
        let reward = total_step_reward(&components, &p.weights).map_err(|e| self.fault(&e.to_string()))?;

        let clearance = self.clearance();
        let signals = constraint_signals(&self.state, model, &extremes, self.filtered_forces, clearance);
        self.info = StepInfo {
            ee_position: ee,
            ee_angle,
            position_error: squared.sqrt(),
            orientation_error: rot_error,
            foot_forces: self.filtered_forces,
            torques,
            signals,
            task,
            power,
        };
        let observation = self.observe();
        Ok(StepResult {
            observation,
            reward,
            reward_terms: vec![task, power],
            signals: signals.to_vec(),
            time_limit: self.steps >= self.config.episode_steps,
            tracking: Some(TrackingError {
                position: self.info.position_error,
                orientation: rot_error,
            }),
        })
    }
}
