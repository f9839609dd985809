//! Algorithm-configuration harness: a sandboxed target wrapper, a racing
//! configurator with adaptive capping, validation and experiment diagnostics.

pub mod cli;
pub mod cnf;
pub mod configurator;
pub mod diagnostics;
pub mod evaluation;
pub mod result;
pub mod sandbox;
pub mod scenario;
pub mod space;
pub mod synthetic;
pub mod wrapper;

pub use configurator::{aggregate_cost, configure, race_challenger, Trajectory};
pub use result::{Metric, RunResult, RunStatus};
pub use scenario::{check_scenario, Scenario};
pub use space::{ConfigSpace, Configuration};
pub use wrapper::{emit_result, RunRequest, Wrapper};
