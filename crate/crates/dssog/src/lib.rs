//! Distributed stochastic minimax optimization over gossip networks.
//!
//! This crate implements the diffusion stochastic same-sample optimistic
//! gradient method (DSS-OG) together with its centralized form (CSS-OG),
//! the classical stochastic extragradient / optimistic baselines
//! (S-EG, S-PEG, S-OG, GDA, AGDA), theorem-prescribed step-size planners,
//! and a simulator that records the diagnostic quantities the convergence
//! analysis of these methods is stated in terms of (primal gradient norm,
//! dual optimality gap, network deviation, iterate increment).
//!
//! The problem layer ships three stochastic minimax oracles:
//! a quadratic saddle family with a closed-form inner maximizer, a bilinear
//! rotation problem used for divergence contrast, and a one-dimensional
//! Wasserstein GAN that learns the mean and variance of a Gaussian.

pub mod cli;
pub mod config;
pub mod linalg;
pub mod optim;
pub mod problems;
pub mod rng;
pub mod simulator;
pub mod topology;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("spectral failure: {0}")]
    Spectral(String),
    #[error("diagnostic failure: {0}")]
    Diagnostic(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use optim::{
    plan_theorem1, plan_theorem2, ssog_direction, AgentPair, Algo, CentralState, NetworkState,
    PlanInputs, StepPlan,
};
pub use problems::{ProblemOracle, Sample};
pub use simulator::{best_iterate, dual_gap, rate_probe, run_experiment};
pub use topology::{
    averaging_rule, build_random_connected, build_ring, perron_vector, validate_assumption6,
    CombinationMatrix, Graph, SpectralInfo,
};
