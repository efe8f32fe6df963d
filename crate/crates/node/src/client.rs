//! Query client: publishes once, then runs the owner protocol against every
//! owner in parallel.

use std::collections::BTreeSet;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ftm_core::geometry::{Coord, Trajectory};
use ftm_core::grid::GridSpec;
use ftm_core::plan::FilterStats;
use ftm_core::privacy::{solve_noise_bound, NoiseBound, PrivacyError, PrivacyParams};
use ftm_core::publish::{publish, PublishError, PublishedQuery};
use ftm_core::registry::UnknownStrategy;
use ftm_core::verify::{
    client_input, make_backend, meter, BackendConfig, Direction, Role, SecureBackend, SessionOpen, SessionOutcome,
    Transcript, VerifyError,
};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::audit::record;
use crate::stream::Counting;
use crate::wire::{code, read_message, write_message, Message, Phase, WireError};

/// Publishing attempts before giving up on a query whose perturbations all
/// leave their cells.
pub const PUBLISH_ATTEMPTS: u32 = 16;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {addr}: {source}")]
    Connect { addr: String, source: std::io::Error },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Publish(#[from] PublishError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Backend(#[from] UnknownStrategy),
    #[error("owner broke protocol: {0}")]
    Protocol(String),
}

impl ClientError {
    /// Whether the failure came from the peer or the transport rather than
    /// from local input.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            ClientError::Connect { .. } | ClientError::Wire(_) | ClientError::Verify(_) | ClientError::Protocol(_)
        )
    }
}

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("no owners given")]
    NoOwners,
    #[error("could not publish the query: {0}")]
    Publish(#[source] ClientError),
    #[error("{} of {} owners failed: {}", failed.len(), total, failed.iter().map(|(a, e)| format!("{a}: {e}")).collect::<Vec<_>>().join("; "))]
    Partial {
        total: usize,
        failed: Vec<(String, ClientError)>,
    },
}

/// Client-side federation settings; every owner must agree on grid and
/// threshold.
#[derive(Clone)]
pub struct ClientConfig {
    pub origin: Coord,
    pub tau: f64,
    pub params: PrivacyParams,
    pub bound: NoiseBound,
    /// Owner-side plan name, e.g. `filtered` or `naive`.
    pub plan: String,
    pub backend: Arc<dyn SecureBackend>,
    /// Keep raw frames for auditing.
    pub capture: bool,
    pub timeout: Option<Duration>,
}

impl ClientConfig {
    pub fn new(origin: Coord, tau: f64, params: PrivacyParams) -> Result<Self, ClientError> {
        let bound = solve_noise_bound(&params)?;
        Ok(Self {
            origin,
            tau,
            params,
            bound,
            plan: "filtered".into(),
            backend: make_backend("simulated-ideal", &BackendConfig::default())?,
            capture: false,
            timeout: Some(Duration::from_secs(300)),
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec::new(self.origin, self.bound.cell_side)
    }

    pub fn prune_threshold(&self) -> f64 {
        self.tau + std::f64::consts::SQRT_2 * self.bound.cell_side
    }
}

/// What one owner returned and what it cost.
#[derive(Debug, Clone, Serialize)]
pub struct OwnerReport {
    pub owner: String,
    pub ids: Vec<String>,
    pub stats: FilterStats,
    pub prune_sessions: u64,
    /// Partitions whose reference trajectory matched.
    pub surviving: u64,
    pub validate_sessions: u64,
    pub comparisons: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub wall: Duration,
    #[serde(skip)]
    pub transcript: Transcript,
}

impl OwnerReport {
    pub fn bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }
}

/// Publishes `query`, retrying with derived seeds while no grid survives.
pub fn publish_seeded(query: &Trajectory, cfg: &ClientConfig, seed: u64) -> Result<PublishedQuery, ClientError> {
    let spec = cfg.spec();
    for attempt in 0..PUBLISH_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(u64::from(attempt).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        match publish(query, cfg.tau, &cfg.params, &cfg.bound, &spec, &mut rng) {
            Ok(p) => return Ok(p),
            Err(PublishError::NoCandidates) => {
                warn!("query {}: no grid survived perturbation (attempt {}), retrying", query.id, attempt + 1);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(PublishError::NoCandidates.into())
}

struct Session {
    stream: Counting<TcpStream>,
    transcript: Transcript,
}

impl Session {
    fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        let frame = write_message(&mut self.stream, msg)?;
        record(&mut self.transcript, Direction::ClientToOwner, msg, &frame);
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        let (msg, frame) = read_message(&mut self.stream)?;
        record(&mut self.transcript, Direction::OwnerToClient, &msg, &frame);
        if let Message::Error { code, text } = msg {
            return Err(WireError::Remote { code, text });
        }
        Ok(msg)
    }
}

fn connect(addr: &str, timeout: Option<Duration>) -> Result<TcpStream, ClientError> {
    let err = |source| ClientError::Connect {
        addr: addr.to_string(),
        source,
    };
    let addrs: Vec<SocketAddr> = addr.to_socket_addrs().map_err(err)?.collect();
    let mut last = std::io::Error::new(std::io::ErrorKind::NotFound, "no address");
    for a in addrs {
        let attempt = match timeout {
            Some(t) => TcpStream::connect_timeout(&a, t),
            None => TcpStream::connect(a),
        };
        match attempt {
            Ok(s) => {
                s.set_nodelay(true).map_err(err)?;
                s.set_read_timeout(timeout).map_err(err)?;
                return Ok(s);
            }
            Err(e) => last = e,
        }
    }
    Err(err(last))
}

/// Runs the full protocol against one owner.
pub fn query_owner(addr: &str, cfg: &ClientConfig, published: &PublishedQuery, query: &Trajectory) -> Result<OwnerReport, ClientError> {
    let start = Instant::now();
    let stream = connect(addr, cfg.timeout)?;
    let mut s = Session {
        stream: Counting::new(stream),
        transcript: if cfg.capture { Transcript::capturing() } else { Transcript::new() },
    };
    s.send(&Message::Hello {
        origin: cfg.origin,
        cell_side: cfg.bound.cell_side,
        tau: cfg.tau,
    })?;
    match s.recv()? {
        Message::HelloAck => {}
        other => {
            return Err(WireError::Unexpected {
                expected: "HelloAck",
                found: other.kind(),
            }
            .into())
        }
    }
    let view = published.wire_view();
    s.send(&Message::PublishGrids {
        tau: view.tau,
        cell_side: view.cell_side,
        plan: cfg.plan.clone(),
        query_len: view.query_len,
        sub_query_len: view.sub_query_len,
        grids: view.grids,
    })?;

    let mut report = OwnerReport {
        owner: addr.to_string(),
        ids: Vec::new(),
        stats: FilterStats::default(),
        prune_sessions: 0,
        surviving: 0,
        validate_sessions: 0,
        comparisons: 0,
        bytes_up: 0,
        bytes_down: 0,
        wall: Duration::ZERO,
        transcript: Transcript::new(),
    };
    let mut pending: Option<(Role, SessionOpen)> = None;
    loop {
        let msg = s.recv()?;
        match msg {
            Message::FilterStats(stats) => report.stats = stats,
            Message::PruneSession { phase, payload } => {
                step(&mut s, cfg, published, query, &mut pending, &mut report, Role::ReferencePrune, phase, &payload)?
            }
            Message::ValidateSession { phase, payload } => {
                step(&mut s, cfg, published, query, &mut pending, &mut report, Role::FinalValidate, phase, &payload)?
            }
            Message::ResultSet { ids } => {
                report.ids = ids;
                break;
            }
            other => {
                return Err(WireError::Unexpected {
                    expected: "FilterStats, session or ResultSet",
                    found: other.kind(),
                }
                .into())
            }
        }
    }
    report.wall = start.elapsed();
    let counters = s.stream.counters();
    report.bytes_up = counters.written();
    report.bytes_down = counters.read();
    debug_assert_eq!(meter(&s.transcript), report.bytes());
    report.transcript = s.transcript;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn step(
    s: &mut Session,
    cfg: &ClientConfig,
    published: &PublishedQuery,
    query: &Trajectory,
    pending: &mut Option<(Role, SessionOpen)>,
    report: &mut OwnerReport,
    role: Role,
    phase: Phase,
    payload: &[u8],
) -> Result<(), ClientError> {
    let abort = |s: &mut Session, e: ClientError| {
        let _ = s.send(&Message::Error {
            code: code::SESSION_ABORT,
            text: e.to_string(),
        });
        Err(e)
    };
    match phase {
        Phase::Open => {
            if pending.is_some() {
                return abort(s, ClientError::Protocol("session opened while another is pending".into()));
            }
            let open = SessionOpen::decode(payload)?;
            if open.role != role {
                return abort(s, ClientError::Protocol("session role does not match message type".into()));
            }
            let (points, expected) = match role {
                Role::ReferencePrune => (&published.sub_query.points, cfg.prune_threshold()),
                Role::FinalValidate => (&query.points, cfg.tau),
            };
            let input = match client_input(cfg.backend.as_ref(), &open, points, expected) {
                Ok(i) => i,
                Err(e) => return abort(s, e.into()),
            };
            let msg = match role {
                Role::ReferencePrune => Message::PruneSession {
                    phase: Phase::Input,
                    payload: input.encode(),
                },
                Role::FinalValidate => Message::ValidateSession {
                    phase: Phase::Input,
                    payload: input.encode(),
                },
            };
            s.send(&msg)?;
            *pending = Some((role, open));
        }
        Phase::Outcome => {
            let Some((open_role, open)) = pending.take() else {
                return abort(s, ClientError::Protocol("outcome without an open session".into()));
            };
            let outcome = SessionOutcome::decode(payload)?;
            if open_role != role || outcome.session != open.session {
                return abort(s, ClientError::Protocol("outcome does not match the open session".into()));
            }
            report.comparisons += outcome.comparisons;
            match role {
                Role::ReferencePrune => {
                    report.prune_sessions += 1;
                    report.surviving += outcome.matched as u64;
                }
                Role::FinalValidate => report.validate_sessions += 1,
            }
        }
        Phase::Input => return abort(s, ClientError::Protocol("owner sent a client-side session phase".into())),
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FederationResult {
    pub ids: BTreeSet<String>,
    pub published_grids: usize,
    pub sub_query_len: usize,
    pub owners: Vec<OwnerReport>,
}

impl FederationResult {
    pub fn bytes(&self) -> u64 {
        self.owners.iter().map(OwnerReport::bytes).sum()
    }

    /// Owner-weighted retention: total candidates over total database size.
    pub fn retention(&self) -> f64 {
        let (c, d) = self.owners.iter().fold((0, 0), |(c, d), o| (c + o.stats.candidates, d + o.stats.database_size));
        if d == 0 {
            0.0
        } else {
            c as f64 / d as f64
        }
    }
}

/// Publishes once and queries every owner concurrently. Fails if any owner
/// fails, listing each failure.
pub fn query_federation(owners: &[String], query: &Trajectory, cfg: &ClientConfig, seed: u64) -> Result<FederationResult, FederationError> {
    if owners.is_empty() {
        return Err(FederationError::NoOwners);
    }
    let published = publish_seeded(query, cfg, seed).map_err(FederationError::Publish)?;
    let results: Vec<(String, Result<OwnerReport, ClientError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = owners
            .iter()
            .map(|addr| {
                let published = &published;
                (addr.clone(), scope.spawn(move || query_owner(addr, cfg, published, query)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(a, h)| {
                let r = h
                    .join()
                    .unwrap_or_else(|_| Err(ClientError::Protocol("owner worker panicked".into())));
                (a, r)
            })
            .collect()
    });
    let mut reports = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (addr, r) in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => failed.push((addr, e)),
        }
    }
    if !failed.is_empty() {
        return Err(FederationError::Partial {
            total: owners.len(),
            failed,
        });
    }
    Ok(FederationResult {
        ids: reports.iter().flat_map(|r| r.ids.iter().cloned()).collect(),
        published_grids: published.grids.len(),
        sub_query_len: published.sub_query.len(),
        owners: reports,
    })
}
