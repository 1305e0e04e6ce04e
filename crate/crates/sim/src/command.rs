//! End-effector pose commands.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::terrain::TerrainField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommandParams {
    /// Targets are drawn within this horizontal distance of the base, m.
    pub horizontal_range: f64,
    /// Target height band above the terrain under the target, m.
    pub height_min: f64,
    pub height_max: f64,
    /// Half-width of the orientation band around the default EE angle, rad.
    pub angle_range: f64,
}

impl Default for CommandParams {
    fn default() -> Self {
        Self {
            horizontal_range: 1.2,
            height_min: 0.1,
            height_max: 0.7,
            angle_range: 30f64.to_radians(),
        }
    }
}

/// Target end-effector pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommandPose {
    pub x: f64,
    pub z: f64,
    pub angle: f64,
}

/// Maps unit-interval draws `u` onto the sampling region.
pub fn command_from_unit(
    u: [f64; 3],
    base_x: f64,
    terrain: &TerrainField,
    default_angle: f64,
    params: &CommandParams,
) -> CommandPose {
    let x = base_x + params.horizontal_range * (2.0 * u[0] - 1.0);
    let ground = terrain.height(x);
    CommandPose {
        x,
        z: ground + params.height_min + (params.height_max - params.height_min) * u[1],
        angle: default_angle + params.angle_range * (2.0 * u[2] - 1.0),
    }
}

pub fn sample_command<R: Rng + ?Sized>(
    base_x: f64,
    terrain: &TerrainField,
    default_angle: f64,
    params: &CommandParams,
    rng: &mut R,
) -> CommandPose {
    let u = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    command_from_unit(u, base_x, terrain, default_angle, params)
}
