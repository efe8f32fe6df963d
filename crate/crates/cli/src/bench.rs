//! Parameter sweeps: one aggregate row per configuration cell.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use ftm_core::geometry::Trajectory;
use ftm_core::partition::PartitionParams;
use ftm_core::privacy::PrivacyParams;
use ftm_core::synth::{generate_corpus, generate_queries, CorpusConfig, QueryConfig};
use ftm_core::verify::{make_backend, BackendConfig};
use ftm_node::{ClientConfig, FederationError};
use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::report::RunReport;
use crate::run::{run_batch, shard_round_robin, LocalOwnerError, LocalOwners};
use crate::stats::{linear_fit, spearman, Correlation, LinearFit};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error(transparent)]
    Owners(#[from] LocalOwnerError),
    #[error("cell {cell}: {source}")]
    Query {
        cell: String,
        #[source]
        source: FederationError,
    },
}

/// How a database size maps onto owners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShardPolicy {
    /// One corpus of the given size dealt round-robin across owners.
    Split,
    /// Every owner holds its own corpus of the given size.
    Equal,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub sampling_rates: Vec<f64>,
    pub alphas: Vec<f64>,
    pub sizes: Vec<usize>,
    pub owner_counts: Vec<usize>,
    pub modes: Vec<String>,
    pub queries: usize,
    pub tau: f64,
    pub delta: f64,
    pub rho: f64,
    pub p0: f64,
    pub seed: u64,
    pub shards: ShardPolicy,
    /// Template for synthetic corpora; `trajectories` and `seed` are set per cell.
    pub corpus: CorpusConfig,
    /// Template for queries; `sampling_rate` is set per cell.
    pub query: QueryConfig,
    /// A fixed database used instead of synthetic corpora.
    pub db: Option<Arc<Vec<Trajectory>>>,
    pub backend: String,
    pub backend_config: BackendConfig,
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.01],
            sampling_rates: vec![0.2],
            alphas: vec![0.5],
            sizes: vec![1000],
            owner_counts: vec![1],
            modes: vec!["filtered".into()],
            queries: 100,
            tau: 50.0,
            delta: 1e-5,
            rho: 0.6,
            p0: 0.81,
            seed: 1,
            shards: ShardPolicy::Split,
            corpus: CorpusConfig::default(),
            query: QueryConfig::default(),
            db: None,
            backend: "simulated-ideal".into(),
            backend_config: BackendConfig::default(),
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub epsilon: f64,
    pub sampling_rate: f64,
    pub alpha: f64,
    pub size: usize,
    pub owners: usize,
    pub mode: String,
}

impl Cell {
    pub fn label(&self) -> String {
        format!(
            "eps={}/rate={}/alpha={}/n={}/owners={}/{}",
            self.epsilon, self.sampling_rate, self.alpha, self.size, self.owners, self.mode
        )
    }
}

#[derive(Debug, Clone)]
pub enum CellOutcome {
    Ran(RunReport),
    Infeasible(String),
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn report(&self) -> Option<&RunReport> {
        match &self.outcome {
            CellOutcome::Ran(r) => Some(r),
            CellOutcome::Infeasible(_) => None,
        }
    }
}

fn validate(cfg: &SweepConfig) -> Result<(), BenchError> {
    let empty = [
        ("epsilons", cfg.epsilons.is_empty()),
        ("sampling rates", cfg.sampling_rates.is_empty()),
        ("alphas", cfg.alphas.is_empty()),
        ("sizes", cfg.sizes.is_empty()),
        ("owner counts", cfg.owner_counts.is_empty()),
        ("modes", cfg.modes.is_empty()),
    ];
    if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
        return Err(BenchError::Config(format!("no {name} given")));
    }
    if cfg.owner_counts.contains(&0) {
        return Err(BenchError::Config("owner count must be at least 1".into()));
    }
    if let Some(r) = cfg.sampling_rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(BenchError::Config(format!("sampling rate {r} is outside (0, 1]")));
    }
    if cfg.db.is_some() && cfg.shards == ShardPolicy::Equal {
        return Err(BenchError::Config("equal shards need synthetic corpora, not --db".into()));
    }
    Ok(())
}

fn prefixed(mut corpus: Vec<Trajectory>, prefix: &str) -> Vec<Trajectory> {
    for t in &mut corpus {
        t.id = format!("{prefix}{}", t.id);
    }
    corpus
}

/// Owner shards and the corpus queries are drawn from.
fn data_for(cfg: &SweepConfig, size: usize, owners: usize) -> (Vec<Vec<Trajectory>>, Vec<Trajectory>) {
    if let Some(db) = &cfg.db {
        let corpus: Vec<Trajectory> = db.iter().take(size).cloned().collect();
        return (shard_round_robin(&corpus, owners), corpus);
    }
    let gen = |j: usize| {
        generate_corpus(&CorpusConfig {
            trajectories: size,
            seed: cfg.corpus.seed.wrapping_add(j as u64),
            ..cfg.corpus.clone()
        })
    };
    match cfg.shards {
        ShardPolicy::Split => {
            let corpus = gen(0);
            (shard_round_robin(&corpus, owners), corpus)
        }
        ShardPolicy::Equal => {
            let shards: Vec<_> = (0..owners).map(|j| prefixed(gen(j), &format!("o{j}-"))).collect();
            let source = shards[0].clone();
            (shards, source)
        }
    }
}

fn client_for(cfg: &SweepConfig, epsilon: f64, mode: &str) -> Result<ClientConfig, String> {
    let params = PrivacyParams::new(epsilon, cfg.delta, cfg.rho, cfg.p0).map_err(|e| e.to_string())?;
    let mut c = ClientConfig::new(cfg.corpus.origin, cfg.tau, params).map_err(|e| e.to_string())?;
    if c.bound.cell_side <= cfg.tau {
        return Err(format!("cell side {:.3} m is not above tau {} m", c.bound.cell_side, cfg.tau));
    }
    c.plan = mode.to_string();
    c.backend = make_backend(&cfg.backend, &cfg.backend_config).map_err(|e| e.to_string())?;
    Ok(c)
}

/// Runs every cell of the grid in order, calling `on_cell` as each finishes.
/// Infeasible cells are reported and skipped; protocol failures stop the sweep.
pub fn sweep(cfg: &SweepConfig, mut on_cell: impl FnMut(&CellResult)) -> Result<Vec<CellResult>, BenchError> {
    validate(cfg)?;
    let sizes: Vec<usize> = match &cfg.db {
        Some(db) => cfg.sizes.iter().map(|&s| s.min(db.len())).collect(),
        None => cfg.sizes.clone(),
    };
    let mut out = Vec::new();
    let mut emit = |r: CellResult, out: &mut Vec<CellResult>| {
        on_cell(&r);
        out.push(r);
    };
    for &size in &sizes {
        for &owners in &cfg.owner_counts {
            let (shards, source) = data_for(cfg, size, owners);
            let workloads: Vec<Vec<Trajectory>> = cfg
                .sampling_rates
                .iter()
                .map(|&rate| {
                    let q = QueryConfig {
                        sampling_rate: rate,
                        ..cfg.query.clone()
                    };
                    generate_queries(&source, &cfg.corpus, cfg.queries, &q, cfg.seed)
                })
                .collect();
            for &epsilon in &cfg.epsilons {
                for &alpha in &cfg.alphas {
                    let cell = |rate: f64, mode: &str| Cell {
                        epsilon,
                        sampling_rate: rate,
                        alpha,
                        size,
                        owners,
                        mode: mode.to_string(),
                    };
                    let feasible = client_for(cfg, epsilon, &cfg.modes[0]).and_then(|c| {
                        PartitionParams::new(alpha).map(|p| (c, p)).map_err(|e| e.to_string())
                    });
                    let (base, partition) = match feasible {
                        Ok(v) => v,
                        Err(reason) => {
                            for &rate in &cfg.sampling_rates {
                                for mode in &cfg.modes {
                                    let outcome = CellOutcome::Infeasible(reason.clone());
                                    emit(CellResult { cell: cell(rate, mode), outcome }, &mut out);
                                }
                            }
                            continue;
                        }
                    };
                    let local = LocalOwners::start(shards.clone(), base.spec(), cfg.tau, partition, base.backend.clone())?;
                    let addrs = local.addrs();
                    for (&rate, queries) in cfg.sampling_rates.iter().zip(&workloads) {
                        for mode in &cfg.modes {
                            let c = cell(rate, mode);
                            let mut client = base.clone();
                            client.plan = mode.clone();
                            info!("running {}", c.label());
                            let batch = match run_batch(&addrs, queries, &client, cfg.seed, cfg.parallel) {
                                Ok(b) => b,
                                Err(source) => {
                                    local.shutdown();
                                    return Err(BenchError::Query { cell: c.label(), source });
                                }
                            };
                            emit(CellResult { cell: c, outcome: CellOutcome::Ran(batch.report) }, &mut out);
                        }
                    }
                    local.shutdown();
                }
            }
        }
    }
    Ok(out)
}

/// Column order of the CSV output.
pub const CSV_COLUMNS: [&str; 19] = [
    "cell",
    "mode",
    "epsilon",
    "sampling_rate",
    "alpha",
    "db_size",
    "owners",
    "queries",
    "retention",
    "bytes",
    "bytes_up",
    "bytes_down",
    "wall_ms",
    "n_r",
    "partitions",
    "comparisons",
    "published_grids",
    "infeasible",
    "note",
];

#[derive(Serialize)]
struct Row<'a> {
    cell: String,
    mode: &'a str,
    epsilon: f64,
    sampling_rate: f64,
    alpha: f64,
    db_size: usize,
    owners: usize,
    queries: Option<usize>,
    retention: Option<f64>,
    bytes: Option<f64>,
    bytes_up: Option<f64>,
    bytes_down: Option<f64>,
    wall_ms: Option<f64>,
    n_r: Option<f64>,
    partitions: Option<f64>,
    comparisons: Option<f64>,
    published_grids: Option<f64>,
    infeasible: bool,
    note: &'a str,
}

/// Writes one row per cell with the columns in [`CSV_COLUMNS`]; metric
/// columns are per-query means and stay empty for infeasible cells.
pub fn write_csv<W: Write>(w: W, results: &[CellResult]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in results {
        let c = &r.cell;
        let a = r.report().map(|rep| &rep.aggregates);
        let note = match &r.outcome {
            CellOutcome::Infeasible(reason) => reason.as_str(),
            CellOutcome::Ran(_) => "",
        };
        wr.serialize(Row {
            cell: c.label(),
            mode: &c.mode,
            epsilon: c.epsilon,
            sampling_rate: c.sampling_rate,
            alpha: c.alpha,
            db_size: c.size,
            owners: c.owners,
            queries: a.map(|a| a.queries),
            retention: a.map(|a| a.mean_retention),
            bytes: a.map(|a| a.mean_bytes()),
            bytes_up: a.map(|a| a.mean_bytes_up),
            bytes_down: a.map(|a| a.mean_bytes_down),
            wall_ms: a.map(|a| a.mean_wall_ms),
            n_r: a.map(|a| a.mean_surviving_partitions),
            partitions: a.map(|a| a.mean_partitions),
            comparisons: a.map(|a| a.mean_comparisons),
            published_grids: a.map(|a| a.mean_published_grids),
            infeasible: r.report().is_none(),
            note,
        })?;
    }
    wr.flush()?;
    Ok(())
}

type ModeKey = (u64, u64, u64, usize, usize);

fn mode_key(c: &Cell) -> ModeKey {
    (c.epsilon.to_bits(), c.sampling_rate.to_bits(), c.alpha.to_bits(), c.size, c.owners)
}

/// Cells whose per-query result sets differ between modes.
pub fn mode_disagreements(results: &[CellResult]) -> Vec<String> {
    let mut groups: BTreeMap<ModeKey, Vec<&CellResult>> = BTreeMap::new();
    for r in results {
        if r.report().is_some() {
            groups.entry(mode_key(&r.cell)).or_default().push(r);
        }
    }
    let mut bad = Vec::new();
    for g in groups.values() {
        let first = g[0].report().expect("grouped ran cells");
        for other in &g[1..] {
            let rep = other.report().expect("grouped ran cells");
            let same = first.records.len() == rep.records.len()
                && first.records.iter().zip(&rep.records).all(|(a, b)| a.ids == b.ids);
            if !same {
                bad.push(format!("{} vs {}", g[0].cell.label(), other.cell.label()));
            }
        }
    }
    bad
}

/// Spearman correlation of per-query retention against epsilon over the
/// cells of `mode`.
pub fn retention_trend(results: &[CellResult], mode: &str) -> Option<Correlation> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for r in results.iter().filter(|r| r.cell.mode == mode) {
        if let Some(rep) = r.report() {
            for rec in &rep.records {
                x.push(r.cell.epsilon);
                y.push(rec.retention);
            }
        }
    }
    spearman(&x, &y)
}

/// Mean secure comparisons per query for each alpha, in sweep order.
pub fn alpha_profile(results: &[CellResult], mode: &str) -> Vec<(f64, f64)> {
    results
        .iter()
        .filter(|r| r.cell.mode == mode)
        .filter_map(|r| r.report().map(|rep| (r.cell.alpha, rep.aggregates.mean_comparisons)))
        .collect()
}

/// Linear fit of mean bytes per query against owner count.
pub fn owner_scaling(results: &[CellResult], mode: &str) -> Option<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = results
        .iter()
        .filter(|r| r.cell.mode == mode)
        .filter_map(|r| r.report().map(|rep| (r.cell.owners as f64, rep.aggregates.mean_bytes())))
        .unzip();
    linear_fit(&x, &y)
}
