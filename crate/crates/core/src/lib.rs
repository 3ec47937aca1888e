//! Simulation and analysis of an M/M/1 processor-sharing queue whose
//! service rate `mu + eps * p(X(t))` is modulated by a finite-state
//! Markov environment.
//!
//! The crate is organised bottom-up:
//!
//! * [`env`]: the Markov environment, its stationary law, covariance
//!   structure and stationary path sampling.
//! * [`mm1`]: closed-form M/M/1 busy-period analytics used as oracles.
//! * [`sim`]: exact event-driven simulation of the standard queue, the
//!   perturbed queue and the coupled pair.
//! * [`expansion`]: Monte Carlo and quadrature estimators for every
//!   coefficient of the second-order expansions in `eps`.
//! * [`lab`]: the config-driven experiment driver behind the `pslab` binary.

pub mod env;
pub mod error;
pub mod expansion;
pub mod lab;
pub mod mm1;
pub mod parallel;
pub mod quad;
pub mod rng;
pub mod sim;
pub mod stats;

pub use env::{EnvTrajectory, MarkovEnv, PMoments, StationaryLaw};
pub use error::{Error, Result};
pub use expansion::{CoefficientEstimate, Estimators, ExpansionResult, Method};
pub use mm1::{BusyStats, QueueParams};
pub use rng::{ReplicationRng, StreamKey};
pub use sim::{BusyPeriodPath, Level1Decomposition, PerturbedBusyRecord};

/// Version string written into every report header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
