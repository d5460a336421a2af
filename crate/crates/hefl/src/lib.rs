//! Host side of the encrypted federated averaging engine: configuration
//! files, synthetic data, the in-process and TCP runners, and the
//! experiment harness behind the `hefl` binary.

pub mod config;
pub mod data;
pub mod federation;
pub mod harness;
pub mod keys;
pub mod transport;

pub use config::RunConfig;
pub use federation::{run_federation, RunReport};
pub use harness::{run_grid, ExperimentGrid, GridReport};
