use lunacat_core::constraints::ConstraintSet;
use lunacat_core::env::Environment;
use lunacat_sim::actuation::pd_torque;
use lunacat_sim::contact::ContactParams;
use lunacat_sim::dynamics::{contact_forces, substep, BaseState, MassProperties, SimState, SUBSTEP};
use lunacat_sim::model::{RobotModel, MOON_GRAVITY};
use lunacat_sim::observation::{command_from_body, command_in_body, NoiseParams, COMMAND, OBS_DIM};
use lunacat_sim::signals::default_constraints;
use lunacat_sim::terrain::{TerrainField, TerrainParams};
use lunacat_sim::{EnvConfig, LunaEnv};
use lunacat_core::rewards::RewardParams;

fn flat_config() -> EnvConfig {
    EnvConfig {
        terrain: TerrainParams::flat(),
        noise: NoiseParams::none(),
        ..EnvConfig::default()
    }
}

fn nominal_mass() -> MassProperties {
    let m = RobotModel::default();
    MassProperties {
        mass: m.base_mass,
        inertia: m.base_inertia,
    }
}

#[test]
fn ballistic_flight_matches_closed_form() {
    let model = RobotModel::default();
    let terrain = TerrainField::flat(&TerrainParams::flat());
    let (z0, vz0, x0, vx0) = (10.0, 0.8, -0.4, 0.35);
    let mut state = SimState {
        base: BaseState {
            x: x0,
            z: z0,
            vx: vx0,
            vz: vz0,
            pitch: 0.1,
            pitch_rate: 0.2,
        },
        q: model.default_positions,
        qd: [0.0; 6],
    };
    let steps = (1.0 / SUBSTEP).round() as usize;
    let mut worst: f64 = 0.0;
    for k in 1..=steps {
        substep(&mut state, &[0.0; 6], &model, &nominal_mass(), &terrain, &ContactParams::default(), SUBSTEP).unwrap();
        let t = k as f64 * SUBSTEP;
        let z = z0 + vz0 * t - 0.5 * MOON_GRAVITY * t * t;
        worst = worst.max((state.base.z - z).abs()).max((state.base.x - (x0 + vx0 * t)).abs());
    }
    assert!(worst < 1e-6, "max deviation {worst}");
    assert!((MOON_GRAVITY - 1.635).abs() < 1e-12);
}

#[test]
fn free_flight_conserves_energy() {
    let model = RobotModel::default();
    let terrain = TerrainField::flat(&TerrainParams::flat());
    let mass = nominal_mass();
    let mut state = SimState {
        base: BaseState {
            z: 20.0,
            vx: 1.0,
            vz: 2.0,
            pitch_rate: 0.5,
            ..BaseState::default()
        },
        q: model.default_positions,
        qd: [0.0; 6],
    };
    let energy = |s: &SimState| {
        let b = &s.base;
        0.5 * mass.mass * (b.vx * b.vx + b.vz * b.vz) + 0.5 * mass.inertia * b.pitch_rate * b.pitch_rate
            + mass.mass * model.gravity * b.z
    };
    let e0 = energy(&state);
    for second in 0..3 {
        let start = energy(&state);
        for _ in 0..200 {
            substep(&mut state, &[0.0; 6], &model, &mass, &terrain, &ContactParams::default(), SUBSTEP).unwrap();
        }
        let drift = (energy(&state) - start).abs() / start.abs();
        assert!(drift < 0.005, "second {second}: drift {drift}");
    }
    assert!((energy(&state) - e0).abs() / e0 < 0.005);
}

#[test]
fn settled_stance_carries_the_weight() {
    let model = RobotModel::default();
    let terrain = TerrainField::flat(&TerrainParams::flat());
    let mass = nominal_mass();
    let contact = ContactParams::default();
    let q = model.default_positions;
    let mut state = SimState {
        base: BaseState {
            z: 0.38,
            ..BaseState::default()
        },
        q,
        qd: [0.0; 6],
    };
    for _ in 0..400 {
        let tau = pd_torque(&q, &state.q, &state.qd, &model);
        substep(&mut state, &tau, &model, &mass, &terrain, &contact, SUBSTEP).unwrap();
    }
    let tau = pd_torque(&q, &state.q, &state.qd, &model);
    let c = contact_forces(&state, &tau, &model, &mass, &terrain, &contact, SUBSTEP);
    let total = c.foot_forces[0][1] + c.foot_forces[1][1];
    let weight = mass.mass * model.gravity;
    assert!((total - weight).abs() / weight < 0.02, "normals {total} vs weight {weight}");
    assert!(c.in_contact.iter().all(|&b| b));
    assert!(c.foot_forces.iter().all(|f| f[1] >= 0.0));
}

#[test]
fn reset_on_flat_ground_touches_down_quickly() {
    let config = EnvConfig {
        settle_time: 0.2,
        ..flat_config()
    };
    let mut env = LunaEnv::new(config, RewardParams::default(), 4, 0).unwrap();
    env.reset();
    assert_eq!(env.contacts(), [true, true]);
}

#[test]
fn zero_action_after_reset_keeps_constraints_satisfied() {
    let mut env = LunaEnv::new(EnvConfig::default(), RewardParams::default(), 11, 3).unwrap();
    let set = ConstraintSet::new(default_constraints()).unwrap();
    for _ in 0..5 {
        env.reset();
        for _ in 0..100 {
            let r = env.step(&[0.0; 6]).unwrap();
            let v = set.violations(&r.signals).unwrap();
            assert!(v.0.iter().all(|&x| x == 0.0), "signals {:?}", r.signals);
        }
    }
}

#[test]
fn mass_randomisation_stays_in_band() {
    let config = EnvConfig {
        settle_time: 0.0,
        ..EnvConfig::default()
    };
    let nominal = config.model.base_mass;
    let mut env = LunaEnv::new(config, RewardParams::default(), 0, 0).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    let mut delays = std::collections::BTreeSet::new();
    for _ in 0..10_000 {
        env.reset();
        lo = lo.min(env.mass().mass);
        hi = hi.max(env.mass().mass);
        delays.insert(env.delay_substeps());
    }
    assert!(lo >= 0.9 * nominal && hi <= 1.1 * nominal);
    assert!(lo < 0.91 * nominal && hi > 1.09 * nominal);
    assert_eq!(delays.into_iter().collect::<Vec<_>>(), (0..=8).collect::<Vec<_>>());
}

#[test]
fn commands_stay_in_sampling_region() {
    let mut env = LunaEnv::new(
        EnvConfig {
            settle_time: 0.0,
            ..EnvConfig::default()
        },
        RewardParams::default(),
        1,
        0,
    )
    .unwrap();
    let default_angle = RobotModel::default().default_ee_angle();
    let n = 10_000;
    let (mut sx, mut sz, mut sa) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        env.reset();
        let c = *env.command();
        let base_x = env.state().base.x;
        let ground = env.terrain().height(c.x);
        let (dx, dz, da) = (c.x - base_x, c.z - ground - 0.4, c.angle - default_angle);
        assert!(dx.abs() <= 1.2 + 1e-9);
        assert!(dz.abs() <= 0.3 + 1e-9);
        assert!(da.abs() <= 30f64.to_radians() + 1e-12);
        sx += dx;
        sz += dz;
        sa += da;
    }
    let nf = n as f64;
    let se = |half: f64| half / 3f64.sqrt() / nf.sqrt();
    assert!((sx / nf).abs() < 3.0 * se(1.2));
    assert!((sz / nf).abs() < 3.0 * se(0.3));
    assert!((sa / nf).abs() < 3.0 * se(30f64.to_radians()));
}

#[test]
fn observation_layout_and_command_inverse() {
    let mut env = LunaEnv::new(EnvConfig::default(), RewardParams::default(), 2, 0).unwrap();
    let obs = env.reset();
    assert_eq!(obs.len(), OBS_DIM);
    assert_eq!(env.observation_dim(), 2 + 2 + 1 + 6 + 6 + 6 + 2 + 11 + 3);
    let base = env.state().base;
    let c = *env.command();
    let back = command_from_body(&base, command_in_body(&base, &c));
    assert!((back.x - c.x).abs() < 1e-9 && (back.z - c.z).abs() < 1e-9 && (back.angle - c.angle).abs() < 1e-9);
    let body = &obs[COMMAND];
    let expect = command_in_body(&base, &c);
    for i in 0..3 {
        assert_eq!(body[i], expect[i]);
    }
}

#[test]
fn command_at_end_effector_gives_zero_error_and_full_task_reward() {
    let config = EnvConfig {
        randomization: lunacat_sim::env::RandomizationParams {
            max_action_delay: 0.0,
            ..Default::default()
        },
        model: RobotModel {
            arm_mount: [0.2, 0.05],
            ..RobotModel::default()
        },
        ..flat_config()
    };
    let start = |rewards: RewardParams| {
        let mut env = LunaEnv::new(config.clone(), rewards, 5, 0).unwrap();
        env.reset();
        let mut state = *env.state();
        state.base.vx = 0.0;
        env.set_state(state);
        let (ee, angle) = env.ee_pose();
        env.set_command(lunacat_sim::command::CommandPose { x: ee[0], z: ee[1], angle });
        env
    };
    let probe = start(RewardParams::default());
    let d_base = (probe.state().base.x - probe.command().x).abs();
    let rewards = RewardParams {
        reach_radius: d_base - 2e-3,
        gate_steepness: 1e5,
        ..RewardParams::default()
    };
    let mut env = start(rewards);
    let r = env.step(&[0.0; 6]).unwrap();
    let info = env.last_info();
    assert!(info.position_error < 1e-3, "{}", info.position_error);
    assert!(r.reward_terms[0] > 0.99);
}

#[test]
fn episode_ends_after_ten_seconds() {
    let mut env = LunaEnv::new(flat_config(), RewardParams::default(), 3, 0).unwrap();
    env.reset();
    for k in 1..=1000 {
        let r = env.step(&[0.0; 6]).unwrap();
        assert_eq!(r.time_limit, k == 1000);
    }
    assert!((env.episode_time() - 10.0).abs() < 1e-9);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let run = || {
        let mut env = LunaEnv::new(EnvConfig::default(), RewardParams::default(), 77, 5).unwrap();
        let mut trace = env.reset();
        for k in 0..300 {
            let a: Vec<f64> = (0..6).map(|j| ((k * 7 + j) as f64 * 0.37).sin()).collect();
            let r = env.step(&a).unwrap();
            trace.extend(r.observation);
            trace.push(r.reward);
        }
        trace
    };
    assert_eq!(run(), run());
}
