//! A planar legged manipulator on procedurally rough lunar terrain.
//!
//! The robot is a rigid base with two two-joint legs and a two-joint arm.
//! Environments implement [`lunacat_core::env::Environment`].

pub mod actuation;
pub mod command;
pub mod contact;
pub mod dynamics;
pub mod env;
pub mod model;
pub mod observation;
pub mod signals;
pub mod terrain;

pub use env::{EnvConfig, LunaEnv};
