//! Federated trajectory matching: plaintext geometry, bounded planar Laplace
//! perturbation, grid filtering, partition pruning, and the secure verification
//! contract.

pub mod geometry;
pub mod ingest;
pub mod quantize;
pub mod privacy;
pub mod grid;
pub mod publish;
pub mod registry;
pub mod partition;
pub mod verify;
pub mod plan;
pub mod synth;
