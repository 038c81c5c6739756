//! Synthesis of multi-turn tool-use training trajectories from simulated
//! environments.
//!
//! The pieces, bottom up:
//!
//! - [`apigraph`]: tool catalogues with prerequisite edges and a sampler
//!   that steers toward a target tool while staying legal.
//! - [`simenv`]: deterministic seeded environments that execute calls.
//! - [`callparse`]: the bracketed call-list syntax and tagged messages.
//! - [`agents`]: reasoner and critic backends.
//! - [`synthesis`]: collapsing a turn trace into one advanced tool and
//!   writing the user query for it.
//! - [`chain`]: validating reasoner output against ground truth, with
//!   critic-guided retries.
//! - [`pipeline`]: multi-round trajectories, export and audit.

pub mod agents;
pub mod apigraph;
pub mod call;
pub mod callparse;
pub mod chain;
pub mod pipeline;
pub mod simenv;
pub mod synthesis;
pub mod value;

pub use apigraph::{ApiGraph, ParamKind, ParamSpec, ToolSpec};
pub use call::ToolCall;
pub use value::Value;
