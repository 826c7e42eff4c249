//! Deterministic discrete-event simulation of the whole cluster.
//!
//! A [`scenario::Scenario`] describes hardware, templates, queues,
//! configuration, an initial VM population, a workload (explicit job list
//! or seeded generator) and optional mid-run directives. [`engine::run`]
//! replays it on an integer-second clock, producing a totally ordered
//! [`event::EventLog`] and [`metrics::Metrics`]; identical (scenario,
//! seed) pairs produce byte-identical logs.

pub mod engine;
pub mod event;
pub mod generator;
pub mod metrics;
pub mod scenario;

pub use engine::{run, RunOutput, SimError};
pub use event::{Event, EventKind, EventLog};
pub use metrics::{export_metrics, queue_time_table, Metrics, PathSummary};
pub use scenario::{Scenario, ScenarioError};
