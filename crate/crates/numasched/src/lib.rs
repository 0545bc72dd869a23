//! Discrete-time simulator for online VM placement on a cluster of dual-NUMA
//! machines, plus the schedulers that drive it: packing heuristics, a
//! permutation-equivariant dueling Q-network, and a flat MLP baseline.
//!
//! The crate is organised around a small core:
//!
//! * [`cluster`] owns the resource accounting for `m` machines with two NUMA
//!   nodes each and `D` resource dimensions per node.
//! * [`workload`] defines VM requests and traces, loads external CSV traces,
//!   and generates synthetic and adversarial instances.
//! * [`env`] turns a trace slice into an episodic decision process with
//!   first-come-first-served semantics and wait-time rewards.
//! * [`schedulers`] are policies mapping observations to placement actions.
//! * [`qnet`] holds the hand-rolled network arithmetic (forward, backward,
//!   Adam) for both architectures and the permutation machinery.
//! * [`drl`] is the replay/training loop (double DQN, n-step returns).
//! * [`oracle`] computes exact offline optima for small instances and exports
//!   LP files for external solvers.
//! * [`metrics`] aggregates runs and evaluates worst-case bound instances.

pub mod cluster;
pub mod drl;
pub mod env;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod qnet;
pub mod rng;
pub mod schedulers;
pub mod workload;

pub use cluster::{Action, ClusterConfig, ClusterState, NumaMask, Placement};
pub use env::{EpisodeResult, Observation, SchedEnv, StepOutcome};
pub use error::{Error, Result};
pub use workload::{EpisodeSpec, Split, VmRequest, WorkloadTrace};
