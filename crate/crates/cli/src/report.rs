//! Versioned per-batch run reports.

use std::fmt::Write as _;

use ftm_node::FederationResult;
use serde::{Deserialize, Serialize};

/// Bumped whenever a field is added, removed or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

/// Settings shared by every query in a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub mode: String,
    pub epsilon: f64,
    pub delta: f64,
    pub rho: f64,
    pub p0: f64,
    pub tau: f64,
    pub radius: f64,
    pub cell_side: f64,
    pub owners: usize,
    pub seed: u64,
}

/// One query's outcome, summed over owners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: String,
    /// Matching trajectory ids, sorted.
    pub ids: Vec<String>,
    /// Time from publishing to the last owner's answer.
    pub wall_ms: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Candidates over database size, over all owners.
    pub retention: f64,
    pub published_grids: usize,
    pub sub_query_len: usize,
    pub database_size: u64,
    pub candidates: u64,
    pub partitions: u64,
    /// Partitions whose reference trajectory survived pruning (n_r).
    pub surviving_partitions: u64,
    pub validate_sessions: u64,
    pub comparisons: u64,
}

impl QueryRecord {
    pub fn from_result(query: &str, r: &FederationResult, wall_ms: f64) -> Self {
        let sum = |f: fn(&ftm_node::OwnerReport) -> u64| r.owners.iter().map(f).sum::<u64>();
        Self {
            query: query.to_string(),
            ids: r.ids.iter().cloned().collect(),
            wall_ms,
            bytes_up: sum(|o| o.bytes_up),
            bytes_down: sum(|o| o.bytes_down),
            retention: r.retention(),
            published_grids: r.published_grids,
            sub_query_len: r.sub_query_len,
            database_size: sum(|o| o.stats.database_size),
            candidates: sum(|o| o.stats.candidates),
            partitions: sum(|o| o.stats.partitions),
            surviving_partitions: sum(|o| o.surviving),
            validate_sessions: sum(|o| o.validate_sessions),
            comparisons: sum(|o| o.comparisons),
        }
    }

    pub fn bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }
}

/// Means over the records of a batch; zero for an empty batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub queries: usize,
    pub mean_wall_ms: f64,
    pub mean_bytes_up: f64,
    pub mean_bytes_down: f64,
    pub mean_retention: f64,
    pub mean_published_grids: f64,
    pub mean_partitions: f64,
    pub mean_surviving_partitions: f64,
    pub mean_comparisons: f64,
}

impl Aggregates {
    pub fn of(records: &[QueryRecord]) -> Self {
        let n = records.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: &dyn Fn(&QueryRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
        Self {
            queries: n,
            mean_wall_ms: mean(&|r| r.wall_ms),
            mean_bytes_up: mean(&|r| r.bytes_up as f64),
            mean_bytes_down: mean(&|r| r.bytes_down as f64),
            mean_retention: mean(&|r| r.retention),
            mean_published_grids: mean(&|r| r.published_grids as f64),
            mean_partitions: mean(&|r| r.partitions as f64),
            mean_surviving_partitions: mean(&|r| r.surviving_partitions as f64),
            mean_comparisons: mean(&|r| r.comparisons as f64),
        }
    }

    pub fn mean_bytes(&self) -> f64 {
        self.mean_bytes_up + self.mean_bytes_down
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub settings: RunSettings,
    pub records: Vec<QueryRecord>,
    pub aggregates: Aggregates,
}

impl RunReport {
    pub fn new(settings: RunSettings, records: Vec<QueryRecord>) -> Self {
        let aggregates = Aggregates::of(&records);
        Self {
            schema_version: SCHEMA_VERSION,
            settings,
            records,
            aggregates,
        }
    }

    /// The same report with every wall time zeroed, for run-to-run comparison.
    pub fn without_wall_time(&self) -> Self {
        let mut r = self.clone();
        for rec in &mut r.records {
            rec.wall_ms = 0.0;
        }
        r.aggregates.mean_wall_ms = 0.0;
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are plain data")
    }

    /// Fixed-width table, one row per query plus a mean row.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>10} {:>12} {:>12} {:>9} {:>5} {:>6} {:>5} {:>12}",
            "query", "hits", "wall_ms", "bytes_up", "bytes_down", "retention", "|G_Q|", "parts", "n_r", "comparisons"
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>10.1} {:>12} {:>12} {:>9.4} {:>5} {:>6} {:>5} {:>12}",
                r.query,
                r.ids.len(),
                r.wall_ms,
                r.bytes_up,
                r.bytes_down,
                r.retention,
                r.published_grids,
                r.partitions,
                r.surviving_partitions,
                r.comparisons
            );
        }
        let a = &self.aggregates;
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>10.1} {:>12.0} {:>12.0} {:>9.4} {:>5.1} {:>6.1} {:>5.1} {:>12.0}",
            "mean",
            "",
            a.mean_wall_ms,
            a.mean_bytes_up,
            a.mean_bytes_down,
            a.mean_retention,
            a.mean_published_grids,
            a.mean_partitions,
            a.mean_surviving_partitions,
            a.mean_comparisons
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: &str, wall: f64, up: u64, retention: f64) -> QueryRecord {
        QueryRecord {
            query: q.into(),
            ids: vec![],
            wall_ms: wall,
            bytes_up: up,
            bytes_down: 2 * up,
            retention,
            published_grids: 3,
            sub_query_len: 3,
            database_size: 10,
            candidates: 1,
            partitions: 1,
            surviving_partitions: 0,
            validate_sessions: 0,
            comparisons: up / 10,
        }
    }

    fn settings() -> RunSettings {
        RunSettings {
            mode: "filtered".into(),
            epsilon: 0.01,
            delta: 1e-5,
            rho: 0.6,
            p0: 0.81,
            tau: 50.0,
            radius: 138.0,
            cell_side: 690.0,
            owners: 1,
            seed: 0,
        }
    }

    #[test]
    fn aggregates_recompute_from_records() {
        let r = RunReport::new(settings(), vec![rec("a", 1.0, 100, 0.1), rec("b", 3.0, 300, 0.3)]);
        assert_eq!(r.aggregates, Aggregates::of(&r.records));
        assert_eq!(r.aggregates.mean_wall_ms, 2.0);
        assert_eq!(r.aggregates.mean_bytes(), 600.0);
        assert!((r.aggregates.mean_retention - 0.2).abs() < 1e-12);
        assert_eq!(Aggregates::of(&[]).queries, 0);
    }

    #[test]
    fn json_round_trip() {
        let r = RunReport::new(settings(), vec![rec("a", 1.5, 10, 0.5)]);
        let back: RunReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.without_wall_time().records[0].wall_ms, 0.0);
        assert_eq!(r.table().lines().count(), 3);
    }
}
