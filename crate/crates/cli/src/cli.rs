//! Argument parsing and subcommand dispatch for the `ftm` binary.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ftm_core::geometry::{Coord, Trajectory};
use ftm_core::ingest::{read_ndjson, write_ndjson, Equirectangular};
use ftm_core::privacy::{solve_noise_bound, PrivacyParams};
use ftm_core::synth::{generate_corpus, CorpusConfig};
use ftm_core::verify::{make_backend, BackendConfig, CostModel, DEFAULT_SEAL_KEY};
use ftm_node::client::publish_seeded;
use ftm_node::config::parse_seal_key;
use ftm_node::{ClientConfig, ClientError, FederationError};
use serde::Serialize;
use thiserror::Error;

use crate::bench::{self, BenchError, CellOutcome, ShardPolicy, SweepConfig};
use crate::run::run_batch;

/// Failure classes, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Protocol(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Protocol(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Protocol(_) => "protocol",
            CliError::Usage(_) => "usage",
            CliError::Internal(_) => "internal",
        }
    }
}

fn from_client(e: ClientError) -> CliError {
    if e.is_protocol() {
        CliError::Protocol(e.to_string())
    } else {
        CliError::Usage(e.to_string())
    }
}

impl From<FederationError> for CliError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::NoOwners => CliError::Usage(e.to_string()),
            FederationError::Publish(c) => from_client(c),
            FederationError::Partial { ref failed, .. } => {
                if failed.iter().any(|(_, c)| c.is_protocol()) {
                    CliError::Protocol(e.to_string())
                } else {
                    CliError::Usage(e.to_string())
                }
            }
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(m) => CliError::Usage(m),
            BenchError::Owners(o) => CliError::Internal(o.to_string()),
            BenchError::Query { cell, source } => match CliError::from(source) {
                CliError::Protocol(m) => CliError::Protocol(format!("cell {cell}: {m}")),
                CliError::Usage(m) => CliError::Usage(format!("cell {cell}: {m}")),
                CliError::Internal(m) => CliError::Internal(format!("cell {cell}: {m}")),
            },
        }
    }
}

fn io_err(what: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("{what} {}: {e}", path.display()))
}

/// Federated trajectory matching client.
#[derive(Parser, Debug)]
#[command(name = "ftm", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the noise bound and print the tail mass, noise radius and cell side.
    SolveParams(SolveArgs),
    /// Perturb a query and print the grid cells it would publish.
    Publish(PublishArgs),
    /// Run queries against owner servers and print a run report.
    Query(QueryArgs),
    /// Run a parameter sweep against in-process owners and print CSV.
    Bench(BenchArgs),
    /// Write a synthetic NDJSON corpus.
    GenData(GenArgs),
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.81)]
    pub p0: f64,
    /// Print JSON instead of aligned text.
    #[arg(long)]
    pub json: bool,
}

fn parse_origin(s: &str) -> Result<Coord, String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    let x: f64 = x.trim().parse().map_err(|_| format!("bad X in {s:?}"))?;
    let y: f64 = y.trim().parse().map_err(|_| format!("bad Y in {s:?}"))?;
    Ok(Coord::new(x, y))
}

#[derive(Args, Debug, Clone)]
pub struct ProtocolArgs {
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.6)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.81)]
    pub p0: f64,
    /// Matching threshold in meters.
    #[arg(long, default_value_t = 50.0)]
    pub tau: f64,
    /// Grid origin shared with every owner, as X,Y meters.
    #[arg(long, value_parser = parse_origin, default_value = "500000,4400000")]
    pub origin: Coord,
    /// Read query points as longitude/latitude projected around this latitude.
    #[arg(long)]
    pub ref_lat: Option<f64>,
}

impl ProtocolArgs {
    fn client(&self) -> Result<ClientConfig, CliError> {
        let params = PrivacyParams::new(self.epsilon, self.delta, self.rho, self.p0)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(CliError::Usage(format!("--tau must be positive, got {}", self.tau)));
        }
        ClientConfig::new(self.origin, self.tau, params).map_err(from_client)
    }
}

#[derive(Args, Debug)]
pub struct PublishArgs {
    /// NDJSON file holding the query trajectory.
    #[arg(long)]
    pub query: PathBuf,
    /// Which trajectory of the file to publish; the first by default.
    #[arg(long)]
    pub query_id: Option<String>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Filtered,
    Naive,
}

impl Mode {
    pub fn plan(self) -> &'static str {
        match self {
            Mode::Filtered => "filtered",
            Mode::Naive => "naive",
        }
    }
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    /// Owner addresses, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub owners: Vec<String>,
    /// NDJSON file of query trajectories; each one is run.
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Filtered)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Run queries concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip the human-readable table.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    #[arg(long, default_value = "simulated-ideal")]
    pub backend: String,
    /// Secret shared with the owners' evaluator, 64 hex digits.
    #[arg(long)]
    pub seal_key: Option<String>,
    #[arg(long, default_value_t = CostModel::default().bytes_per_comparison)]
    pub bytes_per_comparison: u32,
}

impl BackendArgs {
    fn config(&self) -> Result<BackendConfig, CliError> {
        let seal_key = match &self.seal_key {
            Some(k) => parse_seal_key(k).map_err(|e| CliError::Usage(e.to_string()))?,
            None => DEFAULT_SEAL_KEY,
        };
        Ok(BackendConfig {
            seal_key,
            cost: CostModel {
                bytes_per_comparison: self.bytes_per_comparison,
            },
        })
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shards {
    Split,
    Equal,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Queries per configuration cell.
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    /// Use this NDJSON database instead of synthetic corpora.
    #[arg(long, conflicts_with = "sizes")]
    pub db: Option<PathBuf>,
    /// Synthetic corpus sizes.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub epsilons: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    pub sampling_rates: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub owners: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "filtered")]
    pub mode: Vec<Mode>,
    #[arg(long, value_enum, default_value_t = Shards::Split)]
    pub shards: Shards,
    #[arg(long, default_value_t = 50.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.6)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.81)]
    pub p0: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Grid origin as X,Y meters; synthetic corpora are laid out from it.
    #[arg(long, value_parser = parse_origin, default_value = "500000,4400000")]
    pub origin: Coord,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub parallel: bool,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_parser = parse_origin, default_value = "500000,4400000")]
    pub origin: Coord,
    /// Side of the square area in meters.
    #[arg(long, default_value_t = 20_000.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 4)]
    pub hotspots: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_trajectories(path: &Path, ref_lat: Option<f64>) -> Result<Vec<Trajectory>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    let proj = ref_lat.map(|ref_lat_deg| Equirectangular { ref_lat_deg });
    read_ndjson(BufReader::new(f), proj).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn emit(path: Option<&Path>, stdout: &mut dyn Write, body: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, body).map_err(|e| io_err("cannot write", p, e)),
        None => stdout.write_all(body).map_err(|e| CliError::Internal(format!("cannot write output: {e}"))),
    }
}

#[derive(Serialize)]
struct Solved {
    epsilon: f64,
    delta: f64,
    p0: f64,
    delta_mass: f64,
    radius: f64,
    cell_side: f64,
    residual: f64,
}

fn solve_params(a: &SolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    // rho does not enter the bound
    let params = PrivacyParams::new(a.epsilon, a.delta, 1.0, a.p0).map_err(|e| CliError::Usage(e.to_string()))?;
    let b = solve_noise_bound(&params).map_err(|e| CliError::Usage(e.to_string()))?;
    let residual = (b.delta_mass - a.delta * std::f64::consts::PI * b.radius * b.radius).abs() / b.delta_mass;
    let s = Solved {
        epsilon: a.epsilon,
        delta: a.delta,
        p0: a.p0,
        delta_mass: b.delta_mass,
        radius: b.radius,
        cell_side: b.cell_side,
        residual,
    };
    let text = if a.json {
        serde_json::to_string_pretty(&s).expect("plain numbers") + "\n"
    } else {
        format!(
            "Delta      {:.12}\nR (m)      {:.6}\nL (m)      {:.6}\nresidual   {:.3e}\n",
            s.delta_mass, s.radius, s.cell_side, s.residual
        )
    };
    emit(None, out, text.as_bytes())
}

fn publish_cmd(a: &PublishArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.protocol.client()?;
    let qs = read_trajectories(&a.query, a.protocol.ref_lat)?;
    let q = match &a.query_id {
        Some(id) => qs.iter().find(|t| &t.id == id),
        None => qs.first(),
    }
    .ok_or_else(|| CliError::Usage(format!("no matching query in {}", a.query.display())))?;
    let published = publish_seeded(q, &cfg, a.seed).map_err(from_client)?;
    let text = serde_json::to_string_pretty(&published.wire_view()).expect("plain data") + "\n";
    emit(None, out, text.as_bytes())
}

fn query_cmd(a: &QueryArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = a.protocol.client()?;
    cfg.plan = a.mode.plan().into();
    cfg.backend = make_backend(&a.backend.backend, &a.backend.config()?).map_err(|e| CliError::Usage(e.to_string()))?;
    let queries = read_trajectories(&a.query, a.protocol.ref_lat)?;
    if queries.is_empty() {
        return Err(CliError::Usage(format!("{} holds no queries", a.query.display())));
    }
    let batch = run_batch(&a.owners, &queries, &cfg, a.seed, a.parallel)?;
    let json = batch.report.to_json() + "\n";
    emit(a.out.as_deref(), out, json.as_bytes())?;
    if !a.quiet {
        let _ = err.write_all(batch.report.table().as_bytes());
    }
    Ok(())
}

fn bench_cmd(a: &BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let db = match &a.db {
        Some(p) => Some(Arc::new(read_trajectories(p, None)?)),
        None => None,
    };
    let sizes = match &db {
        Some(d) => vec![d.len()],
        None => a.sizes.clone(),
    };
    let mut modes: Vec<String> = Vec::new();
    for m in &a.mode {
        if !modes.iter().any(|x| x == m.plan()) {
            modes.push(m.plan().into());
        }
    }
    let cfg = SweepConfig {
        epsilons: a.epsilons.clone(),
        sampling_rates: a.sampling_rates.clone(),
        alphas: a.alphas.clone(),
        sizes,
        owner_counts: a.owners.clone(),
        modes,
        queries: a.queries,
        tau: a.tau,
        delta: a.delta,
        rho: a.rho,
        p0: a.p0,
        seed: a.seed,
        shards: match a.shards {
            Shards::Split => ShardPolicy::Split,
            Shards::Equal => ShardPolicy::Equal,
        },
        corpus: CorpusConfig {
            origin: a.origin,
            ..CorpusConfig::default()
        },
        db,
        backend: a.backend.backend.clone(),
        backend_config: a.backend.config()?,
        parallel: a.parallel,
        ..SweepConfig::default()
    };
    if make_backend(&cfg.backend, &cfg.backend_config).is_err() {
        return Err(CliError::Usage(format!("unknown backend {:?}", cfg.backend)));
    }
    let results = bench::sweep(&cfg, |r| {
        let line = match &r.outcome {
            CellOutcome::Ran(rep) => format!(
                "{}: retention {:.4}, bytes {:.0}, comparisons {:.0}\n",
                r.cell.label(),
                rep.aggregates.mean_retention,
                rep.aggregates.mean_bytes(),
                rep.aggregates.mean_comparisons
            ),
            CellOutcome::Infeasible(why) => format!("{}: infeasible ({why})\n", r.cell.label()),
        };
        let _ = err.write_all(line.as_bytes());
    })?;
    let mut csv = Vec::new();
    bench::write_csv(&mut csv, &results).map_err(|e| CliError::Internal(e.to_string()))?;
    emit(a.out.as_deref(), out, &csv)?;
    let bad = bench::mode_disagreements(&results);
    if !bad.is_empty() {
        return Err(CliError::Internal(format!("result sets differ between modes: {}", bad.join(", "))));
    }
    Ok(())
}

fn gen_data(a: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.extent > 0.0 && a.extent.is_finite()) {
        return Err(CliError::Usage(format!("--extent must be positive, got {}", a.extent)));
    }
    let corpus = generate_corpus(&CorpusConfig {
        trajectories: a.n,
        seed: a.seed,
        origin: a.origin,
        extent: a.extent,
        hotspots: a.hotspots,
        ..CorpusConfig::default()
    });
    match &a.out {
        Some(p) => {
            let f = File::create(p).map_err(|e| io_err("cannot create", p, e))?;
            let mut w = BufWriter::new(f);
            write_ndjson(&mut w, &corpus).map_err(|e| io_err("cannot write", p, e))?;
            w.flush().map_err(|e| io_err("cannot write", p, e))
        }
        None => write_ndjson(out, &corpus).map_err(|e| CliError::Internal(format!("cannot write output: {e}"))),
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::SolveParams(a) => solve_params(a, out),
        Command::Publish(a) => publish_cmd(a, out),
        Command::Query(a) => query_cmd(a, out, err),
        Command::Bench(a) => bench_cmd(a, out, err),
        Command::GenData(a) => gen_data(a, out),
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    class: &'a str,
    exit_code: u8,
    message: String,
}

/// Parses `argv`, runs the subcommand and returns the exit status. Failures
/// are written to `err` as a one-line JSON object.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = out.write_all(shown.as_bytes());
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        2
                    } else {
                        0
                    }
                }
                _ => {
                    let _ = err.write_all(shown.as_bytes());
                    2
                }
            };
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let body = ErrorBody {
                class: e.class(),
                exit_code: e.exit_code(),
                message: e.to_string(),
            };
            let _ = writeln!(err, "{}", serde_json::json!({ "error": body }));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (u8, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = main_with(std::iter::once("ftm").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn origin_parsing() {
        assert_eq!(parse_origin("1.5, -2").unwrap(), Coord::new(1.5, -2.0));
        assert!(parse_origin("1.5").is_err());
        assert!(parse_origin("a,2").is_err());
    }

    #[test]
    fn solve_params_prints_cell_side_five_radii() {
        let (code, out, _) = run(&["solve-params", "--epsilon", "0.01", "--delta", "1e-5", "--p0", "0.81", "--json"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let (r, l) = (v["radius"].as_f64().unwrap(), v["cell_side"].as_f64().unwrap());
        assert!((l - 5.0 * r).abs() < 1e-9 * l);
        assert!(v["residual"].as_f64().unwrap() <= 1e-10);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(&[]).0, 2);
        assert_eq!(run(&["no-such-command"]).0, 2);
        assert_eq!(run(&["solve-params", "--epsilon", "0.01"]).0, 2);
        // bad parameter values are usage errors too
        let (code, _, err) = run(&["solve-params", "--epsilon=-1", "--delta", "1e-5"]);
        assert_eq!(code, 2);
        assert!(err.contains("\"class\":\"usage\""), "{err}");
        let (code, _, _) = run(&["bench", "--db", "x.ndjson", "--sizes", "10"]);
        assert_eq!(code, 2);
        assert_eq!(run(&["query", "--owners", "127.0.0.1:1", "--query", "/nonexistent.ndjson"]).0, 2);
        assert_eq!(run(&["--help"]).0, 0);
    }

    #[test]
    fn error_classes_map_to_codes() {
        assert_eq!(CliError::Protocol(String::new()).exit_code(), 1);
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::Internal(String::new()).exit_code(), 3);
        assert_eq!(CliError::from(FederationError::NoOwners).exit_code(), 2);
    }
}
