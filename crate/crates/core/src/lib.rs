//! Decentralized average-reward TD learning with local update steps.
//!
//! The crate simulates a team of agents that evaluate a fixed joint policy
//! from a shared trajectory and private rewards, exchanging parameters with
//! graph neighbors only every `K` samples. It also computes the exact TD
//! fixed point of tabular instances and the constants that govern the
//! consensus-error and convergence bounds, so runs can be checked against
//! ground truth.
//!
//! Module map:
//!
//! * [`model`]: multi-agent MDPs, joint policies, features, sampling.
//! * [`topology`]: graphs, consensus weights and the step-size condition.
//! * [`fixedpoint`]: stationary distribution, `w*`, mixing time, bound
//!   constants and the Lyapunov solver.
//! * [`algorithms`]: local TD, vanilla and batching runners.
//! * [`metrics`]: objective error, MSBE, consensus error, `||Q||`.
//! * [`experiments`]: synthetic and navigation settings, trial harness.
//! * [`io`]: configuration files, CSV and SVG output.
//! * [`cli`]: the `localtd` command line.

pub mod algorithms;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod fixedpoint;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod topology;

pub use algorithms::{run, run_on_env, AlgorithmKind, InitSpec, RunConfig, RunTrace};
pub use error::{Error, Result};
pub use fixedpoint::{compute_fixed_point, FixedPoint};
pub use metrics::{Metric, MetricsRow, TraceOptions, TrialId};
pub use model::{Environment, FeatureMap, JointPolicy, MultiAgentMdp, TabularProblem};
pub use topology::{ConsensusMatrix, ConsensusScheme, Graph, GraphKind};
