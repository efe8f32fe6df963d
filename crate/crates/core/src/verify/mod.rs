//! Two-party verification of a query against owner-held segments.
//!
//! The owner drives the protocol through three secure primitives: a
//! threshold test of one query point against one segment (timestamp window
//! and squared distance), a counter increment, and a final count-equals-length
//! comparison that reveals the match bit. Backends implement those primitives;
//! the shipped one is a simulated ideal functionality.

mod ideal;
pub mod payload;
mod transcript;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Segment};
use crate::quantize::{fixed_threshold, quantize_points, quantize_segments, QSegment, QuantizeError};
use crate::registry::{Registry, UnknownStrategy};

pub use ideal::{seal, unseal, CostModel, SimulatedIdeal, DEFAULT_SEAL_KEY};
pub use payload::{SessionInput, SessionOpen, SessionOutcome};
pub use transcript::{
    allowed, audit, find_pattern, meter, point_patterns, session_facts, Direction, Fact, LeakageViolation, Ledger,
    Party, Record, Transcript, KIND_INPUT, KIND_OPEN, KIND_OUTCOME,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Role {
    /// Reference trajectory against the published subquery at `tau + sqrt(2) L`.
    ReferencePrune = 1,
    /// Candidate trajectory against the full query at `tau`.
    FinalValidate = 2,
}

impl Role {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Role::ReferencePrune),
            2 => Some(Role::FinalValidate),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("invalid verification request: {0}")]
    InvalidRequest(&'static str),
    #[error("length disagreement: expected {expected} query points, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("threshold disagreement: expected {expected}, got {found}")]
    ThresholdMismatch { expected: i64, found: i64 },
    #[error("session id mismatch: expected {expected}, got {found}")]
    SessionMismatch { expected: u64, found: u64 },
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error("malformed session payload: {0}")]
    Payload(&'static str),
    #[error("unknown secure handle")]
    BadHandle,
    #[error("transport error: {0}")]
    Transport(String),
}

/// Opaque reference to a secret bit held by the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecureBit(u32);

/// Opaque reference to a secret counter held by the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecureCounter(u32);

/// One verification session inside a backend.
pub trait SecureSession: Send {
    /// Number of query points supplied by the client.
    fn query_len(&self) -> usize;
    fn false_bit(&mut self) -> SecureBit;
    fn zero_counter(&mut self) -> SecureCounter;
    /// `acc OR (query[query_index].ts in segment window AND distance <= tau_eff)`.
    fn threshold_test(
        &mut self,
        query_index: usize,
        segment: &QSegment,
        tau_eff: i64,
        acc: SecureBit,
    ) -> Result<SecureBit, VerifyError>;
    fn increment(&mut self, counter: SecureCounter, bit: SecureBit) -> Result<SecureCounter, VerifyError>;
    /// Reveals whether the counter equals `len`.
    fn count_equals(&mut self, counter: SecureCounter, len: usize) -> Result<bool, VerifyError>;
    fn comparisons(&self) -> u64;
    /// Bytes the cost model charges for the work done so far.
    fn cost_bytes(&self) -> usize;
}

pub trait SecureBackend: Send + Sync {
    fn name(&self) -> &'static str;
    /// Client side: encodes the private query for the evaluator.
    fn seal_query(&self, session: u64, query: &[crate::quantize::QPoint]) -> Vec<u8>;
    /// Evaluator side: starts a session from the client's sealed input.
    fn open(&self, session: u64, sealed: &[u8]) -> Result<Box<dyn SecureSession>, VerifyError>;
}

/// Settings every backend receives at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendConfig {
    /// Secret shared by the client and the evaluator.
    pub seal_key: [u8; 32],
    pub cost: CostModel,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            seal_key: DEFAULT_SEAL_KEY,
            cost: CostModel::default(),
        }
    }
}

pub type BackendFactory = dyn Fn(&BackendConfig) -> Arc<dyn SecureBackend> + Send + Sync;

pub fn backends() -> Registry<BackendFactory> {
    let mut r: Registry<BackendFactory> = Registry::new("secure backend");
    r.register(
        "simulated-ideal",
        Arc::new(|c: &BackendConfig| -> Arc<dyn SecureBackend> {
            Arc::new(SimulatedIdeal {
                key: c.seal_key,
                cost: c.cost,
            })
        }),
    );
    r
}

pub fn make_backend(name: &str, config: &BackendConfig) -> Result<Arc<dyn SecureBackend>, UnknownStrategy> {
    Ok(backends().get(name)?(config))
}

/// Owner-side protocol logic: every segment is tested against every query
/// point, with no short-circuiting.
pub fn owner_evaluate(session: &mut dyn SecureSession, segments: &[QSegment], tau_eff: i64) -> Result<bool, VerifyError> {
    let n = session.query_len();
    let mut count = session.zero_counter();
    for i in 0..n {
        let mut acc = session.false_bit();
        for s in segments {
            acc = session.threshold_test(i, s, tau_eff, acc)?;
        }
        count = session.increment(count, acc)?;
    }
    session.count_equals(count, n)
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyRequest<'a> {
    pub role: Role,
    /// Client-held query points.
    pub query: &'a [Point],
    /// Owner-held segments: a candidate's segments or a reference trajectory.
    pub owner: &'a [Segment],
    pub tau_eff: f64,
}

impl<'a> VerifyRequest<'a> {
    pub fn new(role: Role, query: &'a [Point], owner: &'a [Segment], tau_eff: f64) -> Result<Self, VerifyError> {
        if !(tau_eff > 0.0 && tau_eff.is_finite()) {
            return Err(VerifyError::InvalidRequest("effective threshold must be positive"));
        }
        if query.is_empty() {
            return Err(VerifyError::InvalidRequest("empty query"));
        }
        Ok(Self {
            role,
            query,
            owner,
            tau_eff,
        })
    }
}

/// Result of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub matched: bool,
    pub comparisons: u64,
    pub transcript: Transcript,
}

/// Owner: builds the opening message for a session.
pub fn open_session(session: u64, role: Role, owner: &[Segment], n_query: usize, tau_eff: f64) -> Result<SessionOpen, VerifyError> {
    Ok(SessionOpen {
        session,
        role,
        tau_eff: fixed_threshold(tau_eff)?,
        owner_len: owner.len() as u32,
        n_query: n_query as u32,
    })
}

/// Client: checks the opening against its own expectations and seals its
/// query for the evaluator.
pub fn client_input(
    backend: &dyn SecureBackend,
    open: &SessionOpen,
    query: &[Point],
    expected_tau_eff: f64,
) -> Result<SessionInput, VerifyError> {
    if open.n_query as usize != query.len() {
        return Err(VerifyError::LengthMismatch {
            expected: query.len(),
            found: open.n_query as usize,
        });
    }
    let expected = fixed_threshold(expected_tau_eff)?;
    if open.tau_eff != expected {
        return Err(VerifyError::ThresholdMismatch {
            expected,
            found: open.tau_eff,
        });
    }
    let q = quantize_points(query)?;
    Ok(SessionInput {
        session: open.session,
        sealed: backend.seal_query(open.session, &q),
    })
}

/// Owner: hands the sealed input and its own segments to the evaluator.
pub fn owner_outcome(
    backend: &dyn SecureBackend,
    open: &SessionOpen,
    input: &SessionInput,
    owner: &[Segment],
) -> Result<SessionOutcome, VerifyError> {
    if input.session != open.session {
        return Err(VerifyError::SessionMismatch {
            expected: open.session,
            found: input.session,
        });
    }
    if input.n_points() != open.n_query as usize {
        return Err(VerifyError::LengthMismatch {
            expected: open.n_query as usize,
            found: input.n_points(),
        });
    }
    let segs = quantize_segments(owner)?;
    let mut session = backend.open(open.session, &input.sealed)?;
    let matched = owner_evaluate(session.as_mut(), &segs, open.tau_eff)?;
    Ok(SessionOutcome {
        session: open.session,
        matched,
        comparisons: session.comparisons(),
        filler: vec![0u8; session.cost_bytes()],
    })
}

/// Runs one complete session in memory, recording every payload.
pub fn secure_verify(req: &VerifyRequest<'_>, backend: &dyn SecureBackend, session: u64) -> Result<VerifyOutcome, VerifyError> {
    secure_verify_expecting(req, backend, session, req.tau_eff)
}

/// As [`secure_verify`], with the client checking the owner's threshold
/// against its own `client_tau_eff`.
pub fn secure_verify_expecting(
    req: &VerifyRequest<'_>,
    backend: &dyn SecureBackend,
    session: u64,
    client_tau_eff: f64,
) -> Result<VerifyOutcome, VerifyError> {
    let mut transcript = Transcript::capturing();
    let open = open_session(session, req.role, req.owner, req.query.len(), req.tau_eff)?;
    let bytes = open.encode();
    transcript.push(Direction::OwnerToClient, KIND_OPEN, &bytes, session_facts(KIND_OPEN, &bytes)?);

    let input = client_input(backend, &SessionOpen::decode(&bytes)?, req.query, client_tau_eff)?;
    let bytes = input.encode();
    transcript.push(Direction::ClientToOwner, KIND_INPUT, &bytes, session_facts(KIND_INPUT, &bytes)?);

    let outcome = owner_outcome(backend, &open, &SessionInput::decode(&bytes)?, req.owner)?;
    let bytes = outcome.encode();
    transcript.push(Direction::OwnerToClient, KIND_OUTCOME, &bytes, session_facts(KIND_OUTCOME, &bytes)?);
    transcript.learn(Party::Owner, Fact::MatchBit { session });

    let decoded = SessionOutcome::decode(&bytes)?;
    Ok(VerifyOutcome {
        matched: decoded.matched,
        comparisons: decoded.comparisons,
        transcript,
    })
}
