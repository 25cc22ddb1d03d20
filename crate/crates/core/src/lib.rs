//! Round-synchronous simulation of single-message-per-round information
//! spreading on vertex-connected clique chains, with rank-based and
//! shuffle-augmented broadcast policies, fault injection, property
//! checking, and a sweep harness.

pub mod acceptance;
pub mod analysis;
pub mod cli;
pub mod engine;
pub mod harness;
pub mod protocols;
pub mod rng;
pub mod topology;

pub use engine::{run, RunTrace, SimConfig, SimState};
pub use protocols::{PhaseKind, PhasePlan, Protocol, RankDistribution};
pub use topology::{build_gnk, Topology};
