//! Command-line front end and the vehicle platoon benchmark.

pub mod commands;
pub mod config;
pub mod platoon;
pub mod verify;
