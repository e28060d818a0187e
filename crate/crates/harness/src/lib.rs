//! Scenario runner, trace recorder and trace checker for the simulator.

pub mod checks;
pub mod generate;
pub mod runner;
pub mod scenario;
pub mod trace;

pub use checks::{verify_trace, Check, Verdict};
pub use runner::{run_scenario, RunError, RunOutput, Simulation};
pub use scenario::Scenario;
