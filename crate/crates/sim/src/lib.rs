//! Deterministic discrete-event simulation of bprel nodes, with scenario
//! files, an event log, metrics, and codec inspection helpers used by the
//! `bprel` command-line tool.

pub mod dump;
pub mod error;
pub mod inspect;
pub mod log;
pub mod metrics;
pub mod scenario;
pub mod sim;

pub use error::{Result, SimError};
pub use metrics::{summarize, Metrics};
pub use scenario::{
    builtin, eo_random_scenario, eo_scenario, lunar_random_scenario, lunar_scenario, Scenario,
};
pub use sim::{run, RunResult, Simulator};
