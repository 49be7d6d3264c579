//! HALO engine: prompt refinement, hierarchical planning over subtasks, and
//! Monte Carlo tree search over role-playing agent workflows.

pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod events;
pub mod gateway;
pub mod model;
pub mod prompts;
pub mod reasoning;
pub mod refinery;
pub mod search;
pub mod trace;

pub use error::{EngineError, Result};
pub use model::*;
pub use config::EngineConfig;
pub use engine::{replay, replay_trace, run_query, ReplayError, RunFailure, RunReport};
pub use reasoning::{RunBudget, RunOutcome, StopReason};
pub use trace::WorkflowTrace;
