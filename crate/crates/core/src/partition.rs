//! Owner-side partitioning of filtered candidates and reference-trajectory
//! pruning.
//!
//! For each published cell `g`, a member's *envelope* is the first and last
//! location at which it is within `tau` of `g` (entry into and exit from the
//! cell grown by `tau`). Every member of a filtered candidate set has an
//! envelope for every published cell because the cell is one of its traversal
//! grids. A partition's reference trajectory holds, per cell, the segment from
//! the earliest member entry to the latest member exit. A member that matches
//! the query is near query point `q` (whose true cell is `g`) at `q.ts`, so
//! `q.ts` lies inside that segment's time window and the segment's location at
//! `q.ts` lies in the grown cell, at most `sqrt(2) * L + tau` from `q`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Coord, Point, Segment, Trajectory};
use crate::grid::{GridId, GridSpec, Rect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("cell side {cell_side} must exceed the threshold {tau} for pruning")]
    CellTooSmall { tau: f64, cell_side: f64 },
    #[error("candidate {id:?} never comes within tau of published grid {grid:?}")]
    MissingGrid { id: String, grid: GridId },
    #[error("partition parameter alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("empty candidate set")]
    Empty,
}

/// Threshold for matching a reference trajectory against the published
/// subquery.
pub fn prune_threshold(tau: f64, cell_side: f64) -> Result<f64, PartitionError> {
    if cell_side <= tau {
        return Err(PartitionError::CellTooSmall { tau, cell_side });
    }
    Ok(tau + std::f64::consts::SQRT_2 * cell_side)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    pub alpha: f64,
}

impl PartitionParams {
    pub fn new(alpha: f64) -> Result<Self, PartitionError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(PartitionError::BadAlpha(alpha));
        }
        Ok(Self { alpha })
    }

    /// `floor(alpha * sqrt(n))`, never below one.
    pub fn max_size(&self, candidates: usize) -> usize {
        ((self.alpha * (candidates as f64).sqrt()).floor() as usize).max(1)
    }
}

/// Parameter interval of `a + u (b - a)`, `u` in `[0, 1]`, within distance
/// `tau` of `r`.
fn near_interval(a: Coord, b: Coord, r: &Rect, tau: f64) -> Option<(f64, f64)> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    if dx == 0.0 && dy == 0.0 {
        return (r.distance_to(a) <= tau).then_some((0.0, 1.0));
    }
    let slab = |x0: f64, x1: f64, y0: f64, y1: f64| -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (p, q) in [(-dx, a.x - x0), (dx, x1 - a.x), (-dy, a.y - y0), (dy, y1 - a.y)] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let t = q / p;
                if p < 0.0 {
                    t0 = t0.max(t);
                } else {
                    t1 = t1.min(t);
                }
            }
        }
        (t0 <= t1).then_some((t0, t1))
    };
    let disc = |c: Coord| -> Option<(f64, f64)> {
        let (fx, fy) = (a.x - c.x, a.y - c.y);
        let qa = dx * dx + dy * dy;
        let qb = 2.0 * (fx * dx + fy * dy);
        let qc = fx * fx + fy * fy - tau * tau;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let (u0, u1) = ((-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa));
        let (u0, u1) = (u0.max(0.0), u1.min(1.0));
        (u0 <= u1).then_some((u0, u1))
    };
    // the tau-neighbourhood of a rectangle is the union of two grown slabs and
    // four corner discs; it is convex, so the pieces' union is one interval
    let pieces = [
        slab(r.min.x - tau, r.max.x + tau, r.min.y, r.max.y),
        slab(r.min.x, r.max.x, r.min.y - tau, r.max.y + tau),
        disc(r.min),
        disc(Coord::new(r.max.x, r.min.y)),
        disc(r.max),
        disc(Coord::new(r.min.x, r.max.y)),
    ];
    pieces.into_iter().flatten().fold(None, |acc, (u0, u1)| match acc {
        None => Some((u0, u1)),
        Some((a0, a1)) => Some((a0.min(u0), a1.max(u1))),
    })
}

fn at(s: &Segment, u: f64) -> Point {
    Point {
        ts: s.o.ts + u * (s.d.ts - s.o.ts),
        loc: Coord::new(
            s.o.loc.x + u * (s.d.loc.x - s.o.loc.x),
            s.o.loc.y + u * (s.d.loc.y - s.o.loc.y),
        ),
    }
}

/// First and last location of `t` within `tau` of `r`.
pub fn envelope(t: &Trajectory, r: &Rect, tau: f64) -> Option<(Point, Point)> {
    let segs = t.segments();
    let entry = segs
        .iter()
        .find_map(|s| near_interval(s.o.loc, s.d.loc, r, tau).map(|(u0, _)| at(s, u0)))?;
    let exit = segs
        .iter()
        .rev()
        .find_map(|s| near_interval(s.o.loc, s.d.loc, r, tau).map(|(_, u1)| at(s, u1)))?;
    Some((entry, exit))
}

/// Filtered candidates with their per-grid envelopes.
#[derive(Debug, Clone)]
pub struct CandidateSet<'a> {
    pub grids: Vec<GridId>,
    members: Vec<(u32, &'a Trajectory)>,
    /// `envelopes[i][j]`: member `i`, grid `grids[j]`.
    envelopes: Vec<Vec<(Point, Point)>>,
}

impl<'a> CandidateSet<'a> {
    pub fn new(
        members: Vec<(u32, &'a Trajectory)>,
        grids: &[GridId],
        spec: &GridSpec,
        tau: f64,
    ) -> Result<Self, PartitionError> {
        let rects: Vec<Rect> = grids.iter().map(|g| spec.rect(*g)).collect();
        let mut envelopes = Vec::with_capacity(members.len());
        for (_, t) in &members {
            let mut row = Vec::with_capacity(grids.len());
            for (g, r) in grids.iter().zip(&rects) {
                row.push(envelope(t, r, tau).ok_or_else(|| PartitionError::MissingGrid {
                    id: t.id.clone(),
                    grid: *g,
                })?);
            }
            envelopes.push(row);
        }
        Ok(Self {
            grids: grids.to_vec(),
            members,
            envelopes,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, i: usize) -> (u32, &'a Trajectory) {
        self.members[i]
    }
}

/// A group of at most `m` candidates with similar timing in the published
/// cells. `members` are positions into the [`CandidateSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub members: Vec<usize>,
    /// Earliest entry and latest exit over members, per published grid.
    pub intervals: BTreeMap<GridId, (f64, f64)>,
}

impl Partition {
    fn new(cs: &CandidateSet<'_>, members: Vec<usize>) -> Self {
        let intervals = cs
            .grids
            .iter()
            .enumerate()
            .map(|(j, g)| {
                let lo = members.iter().map(|&i| cs.envelopes[i][j].0.ts).fold(f64::INFINITY, f64::min);
                let hi = members.iter().map(|&i| cs.envelopes[i][j].1.ts).fold(f64::NEG_INFINITY, f64::max);
                (*g, (lo, hi))
            })
            .collect();
        Self { members, intervals }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Splits the candidates recursively until no partition exceeds
/// `params.max_size(|candidates|)`.
pub fn partition(cs: &CandidateSet<'_>, params: &PartitionParams) -> Result<Vec<Partition>, PartitionError> {
    if cs.is_empty() {
        return Err(PartitionError::Empty);
    }
    let m = params.max_size(cs.len());
    let mut out = Vec::new();
    let mut stack = vec![Partition::new(cs, (0..cs.len()).collect())];
    while let Some(p) = stack.pop() {
        if p.len() <= m {
            out.push(p);
            continue;
        }
        let (left, right) = split(cs, &p);
        // right first so that the left half is emitted first
        stack.push(Partition::new(cs, right));
        stack.push(Partition::new(cs, left));
    }
    Ok(out)
}

fn split(cs: &CandidateSet<'_>, p: &Partition) -> (Vec<usize>, Vec<usize>) {
    // longest timespan wins; ties go to the smallest grid id
    let (j_split, _) = cs
        .grids
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let (lo, hi) = p.intervals[g];
            (j, (hi - lo, *g))
        })
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then_with(|| b.1 .1.cmp(&a.1 .1)))
        .expect("at least one published grid");
    let ending = |i: usize| cs.envelopes[i][j_split].1.ts;
    let mut ends: Vec<f64> = p.members.iter().map(|&i| ending(i)).collect();
    ends.sort_by(f64::total_cmp);
    let half = p.len().div_ceil(2);
    let v_split = ends[half - 1];
    let (left, right): (Vec<usize>, Vec<usize>) = p.members.iter().partition(|&&i| ending(i) <= v_split);
    if left.is_empty() || right.is_empty() {
        let mut members = p.members.clone();
        let right = members.split_off(half);
        return (members, right);
    }
    (left, right)
}

/// One segment per published grid, spanning the partition's earliest entry to
/// its latest exit in that grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub segments: Vec<Segment>,
}

pub fn reference_trajectory(p: &Partition, cs: &CandidateSet<'_>) -> ReferenceTrajectory {
    let segments = (0..cs.grids.len())
        .map(|j| {
            let o = p
                .members
                .iter()
                .map(|&i| cs.envelopes[i][j].0)
                .min_by(|a, b| a.ts.total_cmp(&b.ts))
                .expect("non-empty partition");
            let d = p
                .members
                .iter()
                .map(|&i| cs.envelopes[i][j].1)
                .max_by(|a, b| a.ts.total_cmp(&b.ts))
                .expect("non-empty partition");
            Segment::new(o, d)
        })
        .collect();
    ReferenceTrajectory { segments }
}
