//! Operator tooling for federated trajectory matching: the `ftm` command,
//! batch runs with versioned reports, and parameter sweeps.

pub mod bench;
pub mod cli;
pub mod report;
pub mod run;
pub mod stats;

pub use report::{Aggregates, QueryRecord, RunReport, RunSettings, SCHEMA_VERSION};
pub use run::{run_batch, shard_round_robin, Batch, LocalOwners};
