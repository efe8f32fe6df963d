//! Owner-side query plans: what an owner does after receiving published
//! grids. Secure sessions go through a [`VerifyChannel`] so the same plan runs
//! in memory or over a network connection.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Segment, Trajectory};
use crate::grid::{GridIndex, IndexError};
use crate::partition::{
    partition, prune_threshold, reference_trajectory, CandidateSet, PartitionError, PartitionParams,
};
use crate::publish::PublishedGrids;
use crate::registry::Registry;
use crate::verify::{secure_verify_expecting, Role, SecureBackend, Transcript, VerifyError, VerifyRequest};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("published parameters disagree with the owner's: {0}")]
    ParameterMismatch(String),
}

/// Sizes the owner reveals to the client before any session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterStats {
    pub database_size: u64,
    pub candidates: u64,
    pub partitions: u64,
}

impl FilterStats {
    pub fn retention(&self) -> f64 {
        if self.database_size == 0 {
            0.0
        } else {
            self.candidates as f64 / self.database_size as f64
        }
    }
}

/// Owner's view of the client during one query.
pub trait VerifyChannel {
    fn filter_stats(&mut self, stats: &FilterStats) -> Result<(), PlanError>;
    /// Runs one secure session of `owner` against the client's query (the
    /// published subquery for pruning, the full query for validation).
    fn verify(&mut self, role: Role, owner: &[Segment], tau_eff: f64) -> Result<bool, PlanError>;
}

pub struct OwnerContext<'a> {
    pub db: &'a [Trajectory],
    pub index: &'a GridIndex,
    pub partition: PartitionParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OwnerRun {
    pub stats: FilterStats,
    /// Partitions whose reference trajectory survived pruning.
    pub surviving: u64,
    pub prune_sessions: u64,
    pub validate_sessions: u64,
    /// Positions in the owner's database, ascending.
    pub matched: Vec<u32>,
}

pub trait QueryPlan: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &OwnerContext<'_>, published: &PublishedGrids, channel: &mut dyn VerifyChannel) -> Result<OwnerRun, PlanError>;
}

fn check_parameters(ctx: &OwnerContext<'_>, p: &PublishedGrids) -> Result<(), PlanError> {
    if p.tau != ctx.index.tau || p.cell_side != ctx.index.spec.cell_side {
        return Err(PlanError::ParameterMismatch(format!(
            "query tau={} L={}, index tau={} L={}",
            p.tau, p.cell_side, ctx.index.tau, ctx.index.spec.cell_side
        )));
    }
    Ok(())
}

/// Grid filter, partitioning, reference-trajectory pruning, then validation
/// of surviving partitions' members.
pub struct FilteredPlan;

impl QueryPlan for FilteredPlan {
    fn name(&self) -> &'static str {
        "filtered"
    }

    fn run(&self, ctx: &OwnerContext<'_>, published: &PublishedGrids, channel: &mut dyn VerifyChannel) -> Result<OwnerRun, PlanError> {
        check_parameters(ctx, published)?;
        let tau = published.tau;
        let prune_tau = prune_threshold(tau, published.cell_side)?;
        let tc = ctx.index.filter(&published.grids)?;
        let mut run = OwnerRun {
            stats: FilterStats {
                database_size: ctx.db.len() as u64,
                candidates: tc.len() as u64,
                partitions: 0,
            },
            ..OwnerRun::default()
        };
        if tc.is_empty() {
            channel.filter_stats(&run.stats)?;
            return Ok(run);
        }
        let members = tc.iter().map(|&i| (i, &ctx.db[i as usize])).collect();
        let cs = CandidateSet::new(members, &published.grids, &ctx.index.spec, tau)?;
        let parts = partition(&cs, &ctx.partition)?;
        run.stats.partitions = parts.len() as u64;
        channel.filter_stats(&run.stats)?;
        for p in &parts {
            let rt = reference_trajectory(p, &cs);
            run.prune_sessions += 1;
            if !channel.verify(Role::ReferencePrune, &rt.segments, prune_tau)? {
                continue;
            }
            run.surviving += 1;
            for &i in &p.members {
                let (pos, t) = cs.member(i);
                run.validate_sessions += 1;
                if channel.verify(Role::FinalValidate, &t.segments(), tau)? {
                    run.matched.push(pos);
                }
            }
        }
        run.matched.sort_unstable();
        Ok(run)
    }
}

/// Validates every trajectory in the database; no filter, no pruning.
pub struct NaivePlan;

impl QueryPlan for NaivePlan {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn run(&self, ctx: &OwnerContext<'_>, published: &PublishedGrids, channel: &mut dyn VerifyChannel) -> Result<OwnerRun, PlanError> {
        check_parameters(ctx, published)?;
        let n = ctx.db.len() as u64;
        let mut run = OwnerRun {
            stats: FilterStats {
                database_size: n,
                candidates: n,
                partitions: 0,
            },
            ..OwnerRun::default()
        };
        channel.filter_stats(&run.stats)?;
        for (pos, t) in ctx.db.iter().enumerate() {
            run.validate_sessions += 1;
            if channel.verify(Role::FinalValidate, &t.segments(), published.tau)? {
                run.matched.push(pos as u32);
            }
        }
        Ok(run)
    }
}

pub fn plans() -> Registry<dyn QueryPlan> {
    let mut r: Registry<dyn QueryPlan> = Registry::new("query plan");
    r.register("filtered", Arc::new(FilteredPlan));
    r.register("naive", Arc::new(NaivePlan));
    r
}

/// Client and owner in one process, talking through recorded payloads.
pub struct LocalChannel<'a> {
    backend: &'a dyn SecureBackend,
    query: &'a [Point],
    sub_query: &'a [Point],
    tau: f64,
    cell_side: f64,
    next_session: u64,
    pub comparisons: u64,
    pub stats: Option<FilterStats>,
    pub transcript: Transcript,
}

impl<'a> LocalChannel<'a> {
    pub fn new(backend: &'a dyn SecureBackend, query: &'a [Point], sub_query: &'a [Point], tau: f64, cell_side: f64) -> Self {
        Self {
            backend,
            query,
            sub_query,
            tau,
            cell_side,
            next_session: 0,
            comparisons: 0,
            stats: None,
            transcript: Transcript::capturing(),
        }
    }
}

impl VerifyChannel for LocalChannel<'_> {
    fn filter_stats(&mut self, stats: &FilterStats) -> Result<(), PlanError> {
        self.stats = Some(*stats);
        Ok(())
    }

    fn verify(&mut self, role: Role, owner: &[Segment], tau_eff: f64) -> Result<bool, PlanError> {
        let (query, expected) = match role {
            Role::ReferencePrune => (self.sub_query, self.tau + std::f64::consts::SQRT_2 * self.cell_side),
            Role::FinalValidate => (self.query, self.tau),
        };
        let session = self.next_session;
        self.next_session += 1;
        let req = VerifyRequest::new(role, query, owner, tau_eff)?;
        let out = secure_verify_expecting(&req, self.backend, session, expected)?;
        self.comparisons += out.comparisons;
        self.transcript.append(out.transcript);
        Ok(out.matched)
    }
}
