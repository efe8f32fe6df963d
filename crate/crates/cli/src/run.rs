//! Batch execution against owner servers, plus in-process owners for
//! benchmarks and tests.

use std::sync::Arc;
use std::time::Instant;

use ftm_core::geometry::Trajectory;
use ftm_core::grid::{build_index, GridSpec, IndexError};
use ftm_core::partition::PartitionParams;
use ftm_core::verify::SecureBackend;
use ftm_node::{query_federation, ClientConfig, FederationError, FederationResult, OwnerError, OwnerServer, OwnerState};
use thiserror::Error;

use crate::report::{QueryRecord, RunReport, RunSettings};

#[derive(Debug, Error)]
pub enum LocalOwnerError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Owner(#[from] OwnerError),
    #[error("cannot bind a loopback listener: {0}")]
    Bind(#[from] std::io::Error),
}

/// Owner servers on ephemeral loopback ports, one per shard.
pub struct LocalOwners {
    servers: Vec<OwnerServer>,
}

impl LocalOwners {
    pub fn start(
        shards: Vec<Vec<Trajectory>>,
        spec: GridSpec,
        tau: f64,
        partition: PartitionParams,
        backend: Arc<dyn SecureBackend>,
    ) -> Result<Self, LocalOwnerError> {
        let mut servers = Vec::with_capacity(shards.len());
        for db in shards {
            let index = build_index(&db, tau, spec)?;
            let state = OwnerState::new(db, index, partition, backend.clone())?;
            servers.push(OwnerServer::start(Arc::new(state), "127.0.0.1:0".parse().expect("literal address"))?);
        }
        Ok(Self { servers })
    }

    pub fn addrs(&self) -> Vec<String> {
        self.servers.iter().map(|s| s.addr().to_string()).collect()
    }

    pub fn servers(&self) -> &[OwnerServer] {
        &self.servers
    }

    pub fn shutdown(self) {
        for s in self.servers {
            s.shutdown();
        }
    }
}

/// Deals trajectories round-robin into `k` shards.
pub fn shard_round_robin(corpus: &[Trajectory], k: usize) -> Vec<Vec<Trajectory>> {
    let k = k.max(1);
    let mut shards = vec![Vec::with_capacity(corpus.len() / k + 1); k];
    for (i, t) in corpus.iter().enumerate() {
        shards[i % k].push(t.clone());
    }
    shards
}

/// Seed for the `i`-th query of a batch.
pub fn query_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

pub struct Batch {
    pub report: RunReport,
    pub results: Vec<FederationResult>,
}

pub fn settings_for(cfg: &ClientConfig, owners: usize, seed: u64) -> RunSettings {
    RunSettings {
        mode: cfg.plan.clone(),
        epsilon: cfg.params.epsilon,
        delta: cfg.params.delta,
        rho: cfg.params.rho,
        p0: cfg.params.p0,
        tau: cfg.tau,
        radius: cfg.bound.radius,
        cell_side: cfg.bound.cell_side,
        owners,
        seed,
    }
}

fn run_one(owners: &[String], q: &Trajectory, cfg: &ClientConfig, seed: u64) -> Result<(QueryRecord, FederationResult), FederationError> {
    let start = Instant::now();
    let r = query_federation(owners, q, cfg, seed)?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    Ok((QueryRecord::from_result(&q.id, &r, wall), r))
}

/// Runs every query against every owner. Queries run one at a time unless
/// `parallel` is set; records keep query order either way.
pub fn run_batch(
    owners: &[String],
    queries: &[Trajectory],
    cfg: &ClientConfig,
    seed: u64,
    parallel: bool,
) -> Result<Batch, FederationError> {
    let outcomes: Vec<Result<(QueryRecord, FederationResult), FederationError>> = if parallel {
        let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
        let chunk = queries.len().div_ceil(workers).max(1);
        std::thread::scope(|scope| {
            let handles: Vec<_> = queries
                .chunks(chunk)
                .enumerate()
                .map(|(c, qs)| {
                    scope.spawn(move || {
                        qs.iter()
                            .enumerate()
                            .map(|(j, q)| run_one(owners, q, cfg, query_seed(seed, c * chunk + j)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("query worker panicked"))
                .collect()
        })
    } else {
        queries
            .iter()
            .enumerate()
            .map(|(i, q)| run_one(owners, q, cfg, query_seed(seed, i)))
            .collect()
    };
    let mut records = Vec::with_capacity(outcomes.len());
    let mut results = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let (rec, res) = o?;
        records.push(rec);
        results.push(res);
    }
    Ok(Batch {
        report: RunReport::new(settings_for(cfg, owners.len(), seed), records),
        results,
    })
}
