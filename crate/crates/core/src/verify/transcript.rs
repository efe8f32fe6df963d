//! Message records, leakage ledger and the transcript auditor.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::payload::{SessionInput, SessionOpen, SessionOutcome};
use super::{Role, VerifyError};
use crate::geometry::Point;
use crate::quantize::fixed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    ClientToOwner,
    OwnerToClient,
}

impl Direction {
    pub fn receiver(self) -> Party {
        match self {
            Direction::ClientToOwner => Party::Owner,
            Direction::OwnerToClient => Party::Client,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Client,
    Owner,
}

/// A plaintext fact one party learns from a message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Fact {
    /// Federation constants: grid origin, cell side, threshold.
    PublicParameters,
    PublishedGrids { count: usize },
    QueryLength { points: u32 },
    SubQueryLength { points: u32 },
    DatabaseSize { trajectories: u64 },
    CandidateCount { candidates: u64 },
    PartitionCount { partitions: u64 },
    OwnerLength { role: Role, segments: u32 },
    MatchBit { session: u64 },
    ResultIds { count: usize },
    ErrorReport,
    /// Anything the auditor cannot classify; never allowed.
    Unclassified { what: String },
}

/// Whether `party` may learn `fact`.
pub fn allowed(party: Party, fact: &Fact) -> bool {
    use Fact::*;
    match (party, fact) {
        (_, PublicParameters | ErrorReport) => true,
        (_, MatchBit { .. }) => true,
        (Party::Owner, PublishedGrids { .. } | QueryLength { .. } | SubQueryLength { .. }) => true,
        (
            Party::Client,
            DatabaseSize { .. } | CandidateCount { .. } | PartitionCount { .. } | OwnerLength { .. } | ResultIds { .. },
        ) => true,
        _ => false,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub owner: BTreeSet<Fact>,
    pub client: BTreeSet<Fact>,
}

impl Ledger {
    pub fn learn(&mut self, party: Party, fact: Fact) {
        match party {
            Party::Owner => self.owner.insert(fact),
            Party::Client => self.client.insert(fact),
        };
    }

    pub fn violations(&self) -> Vec<(Party, Fact)> {
        let owner = self.owner.iter().map(|f| (Party::Owner, f));
        let client = self.client.iter().map(|f| (Party::Client, f));
        owner
            .chain(client)
            .filter(|(p, f)| !allowed(*p, f))
            .map(|(p, f)| (p, f.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub direction: Direction,
    pub kind: String,
    pub len: usize,
    pub digest: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub records: Vec<Record>,
    pub ledger: Ledger,
    /// Raw bytes per record, kept only when capture is enabled.
    #[serde(skip)]
    captured: Option<Vec<Vec<u8>>>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn capturing() -> Self {
        Self {
            captured: Some(Vec::new()),
            ..Self::default()
        }
    }

    /// Records a message of `bytes` and the facts its receiver learns.
    pub fn push(&mut self, direction: Direction, kind: &str, bytes: &[u8], facts: impl IntoIterator<Item = Fact>) {
        self.records.push(Record {
            direction,
            kind: kind.to_string(),
            len: bytes.len(),
            digest: crc32fast::hash(bytes),
        });
        if let Some(c) = &mut self.captured {
            c.push(bytes.to_vec());
        }
        for f in facts {
            self.ledger.learn(direction.receiver(), f);
        }
    }

    /// Records a fact that a party learns without a message, e.g. the bits
    /// the hosted evaluator reports to the owner.
    pub fn learn(&mut self, party: Party, fact: Fact) {
        self.ledger.learn(party, fact);
    }

    pub fn append(&mut self, other: Transcript) {
        self.records.extend(other.records);
        self.ledger.owner.extend(other.ledger.owner);
        self.ledger.client.extend(other.ledger.client);
        if let (Some(mine), Some(theirs)) = (&mut self.captured, other.captured) {
            mine.extend(theirs);
        }
    }

    /// Concatenated raw bytes received by `party`, if captured.
    pub fn received_by(&self, party: Party) -> Option<Vec<u8>> {
        let captured = self.captured.as_ref()?;
        Some(
            self.records
                .iter()
                .zip(captured)
                .filter(|(r, _)| r.direction.receiver() == party)
                .flat_map(|(_, b)| b.iter().copied())
                .collect(),
        )
    }
}

/// Total serialized bytes in the transcript.
pub fn meter(t: &Transcript) -> u64 {
    t.records.iter().map(|r| r.len as u64).sum()
}

pub const KIND_OPEN: &str = "session-open";
pub const KIND_INPUT: &str = "session-input";
pub const KIND_OUTCOME: &str = "session-outcome";

/// Facts the receiver of a secure-session payload learns, recomputed from the
/// raw bytes.
pub fn session_facts(kind: &str, bytes: &[u8]) -> Result<Vec<Fact>, VerifyError> {
    Ok(match kind {
        KIND_OPEN => {
            let o = SessionOpen::decode(bytes)?;
            vec![
                Fact::OwnerLength {
                    role: o.role,
                    segments: o.owner_len,
                },
                Fact::PublicParameters,
            ]
        }
        KIND_INPUT => {
            let i = SessionInput::decode(bytes)?;
            vec![Fact::QueryLength {
                points: i.n_points() as u32,
            }]
        }
        KIND_OUTCOME => {
            let o = SessionOutcome::decode(bytes)?;
            vec![Fact::MatchBit { session: o.session }]
        }
        other => vec![Fact::Unclassified { what: other.to_string() }],
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeakageViolation {
    #[error("{party:?} learned disallowed fact {fact:?}")]
    Ledger { party: Party, fact: Fact },
    #[error("raw coordinates of a protected point appear in bytes received by {party:?} at offset {offset}")]
    RawCoordinate { party: Party, offset: usize },
    #[error("transcript was not captured; raw bytes unavailable for scanning")]
    NotCaptured,
}

/// Byte patterns a protected point would leave if serialized in the clear:
/// its fixed-point `x|y` and `ts|x` pairs and its float `x|y` pair.
pub fn point_patterns(points: &[Point]) -> HashSet<[u8; 16]> {
    let mut out = HashSet::new();
    let pair = |a: [u8; 8], b: [u8; 8]| {
        let mut p = [0u8; 16];
        p[..8].copy_from_slice(&a);
        p[8..].copy_from_slice(&b);
        p
    };
    for p in points {
        if let (Ok(ts), Ok(x), Ok(y)) = (fixed(p.ts), fixed(p.loc.x), fixed(p.loc.y)) {
            // all-zero pairs are indistinguishable from padding
            if x != 0 || y != 0 {
                out.insert(pair(x.to_le_bytes(), y.to_le_bytes()));
            }
            if ts != 0 || x != 0 {
                out.insert(pair(ts.to_le_bytes(), x.to_le_bytes()));
            }
        }
        if p.loc.x != 0.0 || p.loc.y != 0.0 {
            out.insert(pair(p.loc.x.to_le_bytes(), p.loc.y.to_le_bytes()));
        }
    }
    out
}

/// First offset in `haystack` where any pattern occurs.
pub fn find_pattern(haystack: &[u8], patterns: &HashSet<[u8; 16]>) -> Option<usize> {
    if patterns.is_empty() {
        return None;
    }
    haystack
        .windows(16)
        .position(|w| patterns.contains(<&[u8; 16]>::try_from(w).unwrap()))
}

/// Checks the ledger against the allowed sets and scans captured bytes:
/// nothing the owner receives may carry a raw query point, and nothing the
/// client receives may carry a point of `owner_protected` (typically the
/// vertices of unmatched trajectories).
pub fn audit(t: &Transcript, query: &[Point], owner_protected: &[Point]) -> Result<(), LeakageViolation> {
    if let Some((party, fact)) = t.ledger.violations().into_iter().next() {
        return Err(LeakageViolation::Ledger { party, fact });
    }
    for (party, secret) in [(Party::Owner, query), (Party::Client, owner_protected)] {
        let bytes = t.received_by(party).ok_or(LeakageViolation::NotCaptured)?;
        if let Some(offset) = find_pattern(&bytes, &point_patterns(secret)) {
            return Err(LeakageViolation::RawCoordinate { party, offset });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_transcript_meters_zero() {
        assert_eq!(meter(&Transcript::new()), 0);
    }

    #[test]
    fn allowed_sets() {
        assert!(allowed(Party::Owner, &Fact::PublishedGrids { count: 3 }));
        assert!(!allowed(Party::Owner, &Fact::CandidateCount { candidates: 3 }));
        assert!(allowed(Party::Client, &Fact::CandidateCount { candidates: 3 }));
        assert!(!allowed(Party::Client, &Fact::QueryLength { points: 3 }));
        assert!(!allowed(Party::Client, &Fact::Unclassified { what: "x".into() }));
    }

    #[test]
    fn scan_finds_plain_coordinates() {
        let secret = [Point::new(4.0, 3.0, 3.0)];
        let mut bytes = vec![0u8; 5];
        bytes.extend_from_slice(&3000i64.to_le_bytes());
        bytes.extend_from_slice(&3000i64.to_le_bytes());
        let mut t = Transcript::capturing();
        t.push(Direction::ClientToOwner, "leaky", &bytes, []);
        assert_eq!(
            audit(&t, &secret, &[]),
            Err(LeakageViolation::RawCoordinate {
                party: Party::Owner,
                offset: 5
            })
        );
        // the same bytes in the other direction do not expose the query
        let mut t = Transcript::capturing();
        t.push(Direction::OwnerToClient, "fine", &bytes, []);
        assert_eq!(audit(&t, &secret, &[]), Ok(()));
    }

    #[test]
    fn ledger_violation_reported() {
        let mut t = Transcript::capturing();
        t.push(Direction::ClientToOwner, "x", &[1, 2, 3], [Fact::Unclassified { what: "x".into() }]);
        assert!(matches!(audit(&t, &[], &[]), Err(LeakageViolation::Ledger { .. })));
        assert_eq!(meter(&t), 3);
    }
}
