//! Packet-level simulator for LEO inter-satellite networks with joint route
//! and bandwidth search and drift-plus-penalty link scheduling.
//!
//! The pipeline runs `constellation` (snapshots) → `traffic` (aggregated
//! flows) → `allocator` (routes and bandwidths) → `simulator` (slot engine
//! driving the `scheduler`) → `qos` (scores and fairness). `config` and
//! `commands` wrap it for the command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod commands;
pub mod config;
pub mod constellation;
pub mod qos;
pub mod scheduler;
pub mod seed;
pub mod simulator;
pub mod traffic;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Constellation(#[from] constellation::ConstellationError),
    #[error(transparent)]
    Traffic(#[from] traffic::TrafficError),
    #[error(transparent)]
    Qos(#[from] qos::QosError),
    #[error(transparent)]
    Scheduler(#[from] scheduler::SchedulerError),
    #[error(transparent)]
    Alloc(#[from] allocator::AllocError),
    #[error(transparent)]
    Sim(#[from] simulator::SimError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Plan(String),
    #[error("failed to parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
