pub mod cli;
pub mod conditioning;
pub mod config;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod pnm;
pub mod samplers;
pub mod schedule;
pub mod toyworld;
