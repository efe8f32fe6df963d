//! Data-owner service: handshake, filtering, partition pruning and secure
//! sessions over one TCP connection per client.

use std::fs::File;
use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use ftm_core::geometry::{Segment, Trajectory};
use ftm_core::grid::{build_index, load_index, persist_index, GridIndex, IndexError, PersistError};
use ftm_core::ingest::{read_ndjson, Equirectangular, IngestError};
use ftm_core::partition::PartitionParams;
use ftm_core::plan::{plans, FilterStats, OwnerContext, PlanError, VerifyChannel};
use ftm_core::publish::PublishedGrids;
use ftm_core::registry::UnknownStrategy;
use ftm_core::verify::{make_backend, open_session, owner_outcome, BackendConfig, Role, SecureBackend, SessionInput, VerifyError};
use log::{debug, info, warn};
use thiserror::Error;

use crate::config::OwnerConfig;
use crate::stream::Counting;
use crate::wire::{code, read_message, write_message, Message, Phase, WireError};

#[derive(Debug, Error)]
pub enum OwnerError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Backend(#[from] UnknownStrategy),
    #[error("index does not fit the database or configuration: {0}")]
    StaleIndex(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable state shared by every connection.
pub struct OwnerState {
    pub db: Vec<Trajectory>,
    pub index: GridIndex,
    pub partition: PartitionParams,
    pub backend: Arc<dyn SecureBackend>,
}

impl OwnerState {
    pub fn new(db: Vec<Trajectory>, index: GridIndex, partition: PartitionParams, backend: Arc<dyn SecureBackend>) -> Result<Self, OwnerError> {
        if index.trajectory_count != db.len() as u64 {
            return Err(OwnerError::StaleIndex(format!(
                "index covers {} trajectories, database has {}",
                index.trajectory_count,
                db.len()
            )));
        }
        Ok(Self {
            db,
            index,
            partition,
            backend,
        })
    }

    pub fn load_db(config: &OwnerConfig) -> Result<Vec<Trajectory>, OwnerError> {
        let f = BufReader::new(File::open(&config.db)?);
        let projection = config.ref_lat.map(|ref_lat_deg| Equirectangular { ref_lat_deg });
        Ok(read_ndjson(f, projection)?)
    }

    /// Builds the index from the configured database and writes it to the
    /// configured index path.
    pub fn build_and_persist(config: &OwnerConfig) -> Result<GridIndex, OwnerError> {
        let db = Self::load_db(config)?;
        let index = build_index(&db, config.tau, config.spec)?;
        if let Some(path) = &config.index {
            persist_index(&index, path)?;
        }
        Ok(index)
    }

    /// Loads the database and the persisted index, building the index in
    /// memory when no index path is configured or the file is missing.
    pub fn from_config(config: &OwnerConfig) -> Result<Self, OwnerError> {
        let db = Self::load_db(config)?;
        let index = match &config.index {
            Some(path) if path.exists() => {
                let idx = load_index(path)?;
                if idx.spec != config.spec || idx.tau != config.tau {
                    return Err(OwnerError::StaleIndex(format!(
                        "{} was built for L={} tau={}, configuration has L={} tau={}",
                        path.display(),
                        idx.spec.cell_side,
                        idx.tau,
                        config.spec.cell_side,
                        config.tau
                    )));
                }
                idx
            }
            _ => {
                info!("building index for {} trajectories", db.len());
                build_index(&db, config.tau, config.spec)?
            }
        };
        let backend = make_backend(
            &config.backend,
            &BackendConfig {
                seal_key: config.seal_key,
                cost: config.cost,
            },
        )?;
        Self::new(db, index, config.partition, backend)
    }
}

/// A running server; dropping it does not stop the accept loop, call
/// [`OwnerServer::shutdown`].
pub struct OwnerServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    log: Arc<Mutex<Vec<ConnectionBytes>>>,
    handle: Option<JoinHandle<()>>,
}

/// Bytes the owner read and wrote on one finished connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectionBytes {
    pub read: u64,
    pub written: u64,
}

impl OwnerServer {
    pub fn start(state: Arc<OwnerState>, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let log = Arc::new(Mutex::new(Vec::new()));
        let (flag, sink) = (stop.clone(), log.clone());
        let handle = std::thread::spawn(move || serve_until(state, listener, &flag, Some(sink)));
        Ok(Self {
            addr,
            stop,
            log,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Byte counts of connections that have finished, in completion order.
    pub fn finished_connections(&self) -> Vec<ConnectionBytes> {
        self.log.lock().expect("connection log poisoned").clone()
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Accepts connections forever, one thread each.
pub fn serve(state: Arc<OwnerState>, listener: TcpListener) {
    serve_until(state, listener, &AtomicBool::new(false), None)
}

fn serve_until(state: Arc<OwnerState>, listener: TcpListener, stop: &AtomicBool, log: Option<Arc<Mutex<Vec<ConnectionBytes>>>>) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match conn {
            Ok(stream) => {
                let state = state.clone();
                let log = log.clone();
                std::thread::spawn(move || {
                    let peer = stream.peer_addr().ok();
                    let (result, bytes) = handle_connection(&state, stream);
                    if let Err(e) = result {
                        warn!("connection {peer:?}: {e}");
                    }
                    if let Some(log) = log {
                        log.lock().expect("connection log poisoned").push(bytes);
                    }
                });
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

struct Conn {
    stream: Counting<TcpStream>,
}

impl Conn {
    fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        write_message(&mut self.stream, msg).map(|_| ())
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        read_message(&mut self.stream).map(|(m, _)| m)
    }

    /// Best-effort error report before closing.
    fn refuse(&mut self, code: u16, text: impl Into<String>) {
        let _ = self.send(&Message::Error { code, text: text.into() });
    }
}

/// Serves one client connection until it closes or misbehaves.
pub fn handle_connection(state: &OwnerState, stream: TcpStream) -> (Result<(), WireError>, ConnectionBytes) {
    let _ = stream.set_nodelay(true);
    let mut conn = Conn {
        stream: Counting::new(stream),
    };
    let result = converse(state, &mut conn);
    if let Err(e) = &result {
        match e {
            WireError::Closed | WireError::Io(_) | WireError::Remote { .. } => {}
            other => conn.refuse(other.code(), other.to_string()),
        }
    }
    let c = conn.stream.counters();
    (
        result,
        ConnectionBytes {
            read: c.read(),
            written: c.written(),
        },
    )
}

fn converse(state: &OwnerState, conn: &mut Conn) -> Result<(), WireError> {
    let spec = state.index.spec;
    match conn.recv()? {
        Message::Hello { origin, cell_side, tau } => {
            if origin != spec.origin || cell_side != spec.cell_side || tau != state.index.tau {
                let text = format!(
                    "federation uses origin=({}, {}) L={} tau={}, client sent origin=({}, {}) L={} tau={}",
                    spec.origin.x, spec.origin.y, spec.cell_side, state.index.tau, origin.x, origin.y, cell_side, tau
                );
                conn.refuse(code::TESSELLATION_MISMATCH, text.clone());
                return Err(WireError::Remote {
                    code: code::TESSELLATION_MISMATCH,
                    text,
                });
            }
            conn.send(&Message::HelloAck)?;
        }
        other => {
            return Err(WireError::Unexpected {
                expected: "Hello",
                found: other.kind(),
            })
        }
    }
    loop {
        let msg = match conn.recv() {
            Err(WireError::Closed) => return Ok(()),
            other => other?,
        };
        let Message::PublishGrids {
            tau,
            cell_side,
            plan,
            query_len,
            sub_query_len,
            grids,
        } = msg
        else {
            return Err(WireError::Unexpected {
                expected: "PublishGrids",
                found: msg.kind(),
            });
        };
        let published = PublishedGrids {
            grids,
            tau,
            cell_side,
            query_len,
            sub_query_len,
        };
        answer_query(state, conn, &plan, &published)?;
    }
}

fn answer_query(state: &OwnerState, conn: &mut Conn, plan_name: &str, published: &PublishedGrids) -> Result<(), WireError> {
    let refuse = |conn: &mut Conn, text: String| {
        conn.refuse(code::BAD_QUERY, text.clone());
        Err(WireError::Remote {
            code: code::BAD_QUERY,
            text,
        })
    };
    let plan = match plans().get(plan_name) {
        Ok(p) => p,
        Err(e) => return refuse(conn, e.to_string()),
    };
    if published.grids.is_empty() || published.query_len == 0 || published.sub_query_len == 0 {
        return refuse(conn, "empty published query".into());
    }
    let ctx = OwnerContext {
        db: &state.db,
        index: &state.index,
        partition: state.partition,
    };
    let mut channel = NetChannel {
        conn,
        backend: state.backend.as_ref(),
        published,
        next_session: 0,
        wire_error: None,
    };
    match plan.run(&ctx, published, &mut channel) {
        Ok(run) => {
            debug!(
                "{plan_name}: |TC|={} partitions={} surviving={} validations={} matched={}",
                run.stats.candidates,
                run.stats.partitions,
                run.surviving,
                run.validate_sessions,
                run.matched.len()
            );
            let ids = run.matched.iter().map(|&i| state.db[i as usize].id.clone()).collect();
            conn.send(&Message::ResultSet { ids })
        }
        Err(e) => {
            if let Some(w) = channel.wire_error.take() {
                return Err(w);
            }
            let c = match e {
                PlanError::ParameterMismatch(_) => code::TESSELLATION_MISMATCH,
                PlanError::Index(_) => code::BAD_QUERY,
                PlanError::Verify(_) => code::SESSION_ABORT,
                _ => code::INTERNAL,
            };
            let text = e.to_string();
            conn.refuse(c, text.clone());
            Err(WireError::Remote { code: c, text })
        }
    }
}

struct NetChannel<'a> {
    conn: &'a mut Conn,
    backend: &'a dyn SecureBackend,
    published: &'a PublishedGrids,
    next_session: u64,
    /// The transport failure behind the last channel error, if any.
    wire_error: Option<WireError>,
}

impl NetChannel<'_> {
    fn fail(&mut self, e: WireError) -> PlanError {
        let text = e.to_string();
        self.wire_error = Some(e);
        PlanError::Verify(VerifyError::Transport(text))
    }

    fn session(role: Role, phase: Phase, payload: Vec<u8>) -> Message {
        match role {
            Role::ReferencePrune => Message::PruneSession { phase, payload },
            Role::FinalValidate => Message::ValidateSession { phase, payload },
        }
    }
}

impl VerifyChannel for NetChannel<'_> {
    fn filter_stats(&mut self, stats: &FilterStats) -> Result<(), PlanError> {
        self.conn
            .send(&Message::FilterStats(*stats))
            .map_err(|e| self.fail(e))
    }

    fn verify(&mut self, role: Role, owner: &[Segment], tau_eff: f64) -> Result<bool, PlanError> {
        let n_query = match role {
            Role::ReferencePrune => self.published.sub_query_len,
            Role::FinalValidate => self.published.query_len,
        } as usize;
        let session = self.next_session;
        self.next_session += 1;
        let open = open_session(session, role, owner, n_query, tau_eff)?;
        self.conn
            .send(&Self::session(role, Phase::Open, open.encode()))
            .map_err(|e| self.fail(e))?;
        let reply = self.conn.recv().map_err(|e| self.fail(e))?;
        let payload = match (role, reply) {
            (Role::ReferencePrune, Message::PruneSession { phase: Phase::Input, payload })
            | (Role::FinalValidate, Message::ValidateSession { phase: Phase::Input, payload }) => payload,
            (_, Message::Error { code, text }) => return Err(self.fail(WireError::Remote { code, text })),
            (_, other) => {
                return Err(self.fail(WireError::Unexpected {
                    expected: "session input",
                    found: other.kind(),
                }))
            }
        };
        let input = SessionInput::decode(&payload)?;
        let outcome = owner_outcome(self.backend, &open, &input, owner)?;
        self.conn
            .send(&Self::session(role, Phase::Outcome, outcome.encode()))
            .map_err(|e| self.fail(e))?;
        Ok(outcome.matched)
    }
}
