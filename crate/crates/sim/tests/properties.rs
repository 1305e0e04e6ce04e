use proptest::prelude::*;

use lunacat_sim::command::CommandPose;
use lunacat_sim::contact::{foot_force, foot_force_implicit, ContactParams};
use lunacat_sim::dynamics::BaseState;
use lunacat_sim::observation::{command_from_body, command_in_body};
use lunacat_sim::terrain::{TerrainField, TerrainParams};

proptest! {
    #[test]
    fn body_frame_command_round_trips(
        x in -5.0f64..5.0, z in 0.0f64..1.0, pitch in -1.5f64..1.5,
        cx in -5.0f64..5.0, cz in 0.0f64..1.0, ca in -0.6f64..0.6,
    ) {
        let base = BaseState { x, z, pitch, ..BaseState::default() };
        let c = CommandPose { x: cx, z: cz, angle: ca };
        let back = command_from_body(&base, command_in_body(&base, &c));
        prop_assert!((back.x - c.x).abs() < 1e-9);
        prop_assert!((back.z - c.z).abs() < 1e-9);
        prop_assert!((back.angle - c.angle).abs() < 1e-9);
    }

    #[test]
    fn terrain_respects_amplitude_bound(seed in any::<u64>()) {
        let params = TerrainParams::default();
        let t = TerrainField::generate(seed, &params).unwrap();
        prop_assert!(t.max_abs_height() <= params.max_amplitude + 1e-12);
    }

    #[test]
    fn contact_never_pulls_and_friction_is_bounded(
        pen in -0.05f64..0.05, rate in -2.0f64..2.0, v in -3.0f64..3.0,
        inv_t in 0.01f64..50.0, inv_n in 0.01f64..50.0,
    ) {
        let p = ContactParams::default();
        for f in [foot_force(pen, rate, v, &p), foot_force_implicit(pen, rate, v, &p, [inv_t * 0.005, inv_n * 0.005])] {
            prop_assert!(f[1] >= 0.0);
            prop_assert!(f[0].abs() <= p.friction * f[1] + 1e-12);
            prop_assert!(f[0] * v <= 0.0);
            if pen <= 0.0 {
                prop_assert_eq!(f, [0.0, 0.0]);
            }
        }
    }
}
