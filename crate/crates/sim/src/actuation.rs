//! Joint PD control and the action delay line.

use std::collections::VecDeque;

use crate::model::{RobotModel, NUM_JOINTS};

pub type Joints = [f64; NUM_JOINTS];

/// Joint targets `q_default + scale * action` for an already clipped action.
pub fn joint_targets(action: &[f64], model: &RobotModel) -> Joints {
    std::array::from_fn(|j| model.default_positions[j] + model.action_scale[j] * action[j])
}

/// `kp (q* - q) - kd qd`, saturated at the absolute torque limits.
pub fn pd_torque(targets: &Joints, q: &Joints, qd: &Joints, model: &RobotModel) -> Joints {
    std::array::from_fn(|j| {
        let tau = model.kp[j] * (targets[j] - q[j]) - model.kd[j] * qd[j];
        tau.clamp(-model.absolute_torque[j], model.absolute_torque[j])
    })
}

/// Holds joint targets back by a whole number of physics substeps.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    delay: u64,
    pending: VecDeque<(u64, Joints)>,
    active: Joints,
}

impl DelayLine {
    pub fn new(delay_substeps: u64, initial: Joints) -> Self {
        Self {
            delay: delay_substeps,
            pending: VecDeque::new(),
            active: initial,
        }
    }

    pub fn delay_substeps(&self) -> u64 {
        self.delay
    }

    /// Queues `targets` issued at substep `now`.
    pub fn push(&mut self, now: u64, targets: Joints) {
        self.pending.push_back((now + self.delay, targets));
    }

    /// Targets in force at substep `now`.
    pub fn current(&mut self, now: u64) -> Joints {
        while let Some(&(due, t)) = self.pending.front() {
            if due > now {
                break;
            }
            self.active = t;
            self.pending.pop_front();
        }
        self.active
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_gain(kp: f64, kd: f64, limit: f64) -> RobotModel {
        RobotModel {
            kp: [kp; 6],
            kd: [kd; 6],
            absolute_torque: [limit; 6],
            ..RobotModel::default()
        }
    }

    #[test]
    fn setpoint_gives_zero_torque() {
        let m = RobotModel::default();
        let q = m.default_positions;
        assert_eq!(pd_torque(&q, &q, &[0.0; 6], &m), [0.0; 6]);
    }

    #[test]
    fn proportional_law() {
        let m = single_gain(40.0, 0.0, 30.0);
        let tau = pd_torque(&[0.1; 6], &[0.0; 6], &[0.0; 6], &m);
        for t in tau {
            assert!((t - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn torque_saturates() {
        let m = single_gain(40.0, 1.0, 30.0);
        assert_eq!(pd_torque(&[100.0; 6], &[0.0; 6], &[0.0; 6], &m), [30.0; 6]);
        assert_eq!(pd_torque(&[-100.0; 6], &[0.0; 6], &[0.0; 6], &m), [-30.0; 6]);
    }

    #[test]
    fn delay_line_releases_on_time() {
        let mut d = DelayLine::new(3, [0.0; 6]);
        d.push(10, [1.0; 6]);
        assert_eq!(d.current(12), [0.0; 6]);
        assert_eq!(d.current(13), [1.0; 6]);
        let mut z = DelayLine::new(0, [0.0; 6]);
        z.push(4, [2.0; 6]);
        assert_eq!(z.current(4), [2.0; 6]);
    }
}
