//! Leakage facts carried by each wire message.

use ftm_core::verify::{session_facts, Direction, Fact, Transcript, KIND_INPUT, KIND_OPEN, KIND_OUTCOME};

use crate::wire::{Message, Phase};

/// Facts the receiver of `msg` learns. Session payloads that fail to decode
/// are reported as unclassified, which the auditor rejects.
pub fn wire_facts(msg: &Message) -> Vec<Fact> {
    match msg {
        Message::Hello { .. } | Message::HelloAck => vec![Fact::PublicParameters],
        Message::PublishGrids {
            grids,
            query_len,
            sub_query_len,
            ..
        } => vec![
            Fact::PublicParameters,
            Fact::PublishedGrids { count: grids.len() },
            Fact::QueryLength { points: *query_len },
            Fact::SubQueryLength { points: *sub_query_len },
        ],
        Message::FilterStats(s) => vec![
            Fact::DatabaseSize {
                trajectories: s.database_size,
            },
            Fact::CandidateCount { candidates: s.candidates },
            Fact::PartitionCount { partitions: s.partitions },
        ],
        Message::PruneSession { phase, payload } | Message::ValidateSession { phase, payload } => {
            let kind = match phase {
                Phase::Open => KIND_OPEN,
                Phase::Input => KIND_INPUT,
                Phase::Outcome => KIND_OUTCOME,
            };
            session_facts(kind, payload).unwrap_or_else(|e| {
                vec![Fact::Unclassified {
                    what: format!("undecodable session payload: {e}"),
                }]
            })
        }
        Message::ResultSet { ids } => vec![Fact::ResultIds { count: ids.len() }],
        Message::Error { .. } => vec![Fact::ErrorReport],
    }
}

/// Records one frame. Match bits revealed in an outcome are also known to the
/// owner, whose process hosts the evaluator.
pub fn record(t: &mut Transcript, direction: Direction, msg: &Message, frame: &[u8]) {
    let facts = wire_facts(msg);
    for f in &facts {
        if matches!(f, Fact::MatchBit { .. }) {
            t.learn(ftm_core::verify::Party::Owner, f.clone());
        }
    }
    t.push(direction, msg.kind(), frame, facts);
}
