//! Constraint terminations, reward kernels, policy networks and the
//! constrained PPO learner.

pub mod checkpoint;
pub mod constraints;
pub mod env;
pub mod gradcheck;
pub mod nn;
pub mod normalizer;
pub mod policy;
pub mod ppo;
pub mod rewards;
pub mod rollout;
pub mod tinycmdp;
pub mod train;
