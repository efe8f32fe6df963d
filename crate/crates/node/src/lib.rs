//! Data-owner server and federation client speaking the framed wire protocol.

pub mod audit;
pub mod client;
pub mod config;
pub mod owner;
pub mod stream;
pub mod wire;

pub use client::{query_federation, query_owner, ClientConfig, ClientError, FederationError, FederationResult, OwnerReport};
pub use config::{ConfigError, OwnerConfig};
pub use owner::{OwnerError, OwnerServer, OwnerState};
