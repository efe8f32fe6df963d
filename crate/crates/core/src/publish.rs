//! Client-side query publishing: perturb every query location, keep the cells
//! where the perturbed location stayed in the true cell, and publish a sample
//! of those cells.
//!
//! Only cell ids leave the client. The perturbed coordinates, the timestamps,
//! and the mapping from published cells back to query points stay local.

use std::sync::Arc;

use rand::RngCore;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{Point, Trajectory};
use crate::grid::{GridId, GridSpec};
use crate::privacy::{bpl_perturb, NoiseBound, PrivacyParams};
use crate::registry::Registry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PublishError {
    #[error("query trajectory has no points")]
    EmptyQuery,
    #[error("no perturbed location stayed in its cell; retry with fresh randomness")]
    NoCandidates,
    #[error("publishing rate {rho} selects no grid from {len} query points")]
    ZeroSelection { rho: f64, len: usize },
    #[error("grid cell side {grid} does not match the noise bound cell side {bound}")]
    CellSideMismatch { grid: f64, bound: f64 },
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
}

/// A query location whose perturbation stayed in its own cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Position of the point in the query trajectory.
    pub point: usize,
    pub grid: GridId,
}

/// Picks which candidates get published.
pub trait GridSelector: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns `min(k, candidates.len())` distinct positions into `candidates`.
    fn select(&self, candidates: &[Candidate], k: usize, rng: &mut dyn RngCore) -> Vec<usize>;
}

/// Uniform sample without replacement.
pub struct UniformSelector;

impl GridSelector for UniformSelector {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn select(&self, candidates: &[Candidate], k: usize, rng: &mut dyn RngCore) -> Vec<usize> {
        let k = k.min(candidates.len());
        rand::seq::index::sample(rng, candidates.len(), k).into_vec()
    }
}

pub fn selectors() -> Registry<dyn GridSelector> {
    let mut r: Registry<dyn GridSelector> = Registry::new("grid selector");
    r.register("uniform", Arc::new(UniformSelector));
    r
}

/// The owner-visible part of a published query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublishedGrids {
    pub grids: Vec<GridId>,
    pub tau: f64,
    pub cell_side: f64,
    pub query_len: u32,
    pub sub_query_len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublishedQuery {
    /// Duplicate-free published cells, in first-selected order.
    pub grids: Vec<GridId>,
    /// The query points whose cells were selected (kept by the client).
    pub sub_query: Trajectory,
    pub spec: GridSpec,
    pub tau: f64,
    query_len: usize,
    selected: Vec<usize>,
}

impl PublishedQuery {
    /// Positions in the original query of the points behind `sub_query`.
    pub fn selected_points(&self) -> &[usize] {
        &self.selected
    }

    pub fn query_len(&self) -> usize {
        self.query_len
    }

    /// What is sent to data owners.
    pub fn wire_view(&self) -> PublishedGrids {
        PublishedGrids {
            grids: self.grids.clone(),
            tau: self.tau,
            cell_side: self.spec.cell_side,
            query_len: self.query_len as u32,
            sub_query_len: self.sub_query.len() as u32,
        }
    }
}

pub fn publish(
    query: &Trajectory,
    tau: f64,
    params: &PrivacyParams,
    bound: &NoiseBound,
    spec: &GridSpec,
    rng: &mut dyn RngCore,
) -> Result<PublishedQuery, PublishError> {
    publish_with(&UniformSelector, query, tau, params, bound, spec, rng)
}

pub fn publish_with(
    selector: &dyn GridSelector,
    query: &Trajectory,
    tau: f64,
    params: &PrivacyParams,
    bound: &NoiseBound,
    spec: &GridSpec,
    rng: &mut dyn RngCore,
) -> Result<PublishedQuery, PublishError> {
    if query.is_empty() {
        return Err(PublishError::EmptyQuery);
    }
    if !(tau > 0.0) {
        return Err(PublishError::BadThreshold(tau));
    }
    if (spec.cell_side - bound.cell_side).abs() > 1e-9 * bound.cell_side {
        return Err(PublishError::CellSideMismatch {
            grid: spec.cell_side,
            bound: bound.cell_side,
        });
    }
    let k = (params.rho * query.len() as f64).floor() as usize;
    if k == 0 {
        return Err(PublishError::ZeroSelection {
            rho: params.rho,
            len: query.len(),
        });
    }

    // perturbation, then grid selection on the perturbed location only
    let mut candidates = Vec::new();
    for (i, p) in query.points.iter().enumerate() {
        let perturbed = bpl_perturb(p.loc, bound, params.epsilon, rng);
        let g = spec.cell_of(perturbed);
        if g == spec.cell_of(p.loc) {
            candidates.push(Candidate { point: i, grid: g });
        }
    }
    if candidates.is_empty() {
        return Err(PublishError::NoCandidates);
    }

    let mut picked: Vec<Candidate> = selector
        .select(&candidates, k, rng)
        .into_iter()
        .map(|j| candidates[j])
        .collect();
    picked.sort_by_key(|c| c.point);

    let mut grids: Vec<GridId> = Vec::with_capacity(picked.len());
    for c in &picked {
        if !grids.contains(&c.grid) {
            grids.push(c.grid);
        }
    }
    let selected: Vec<usize> = picked.iter().map(|c| c.point).collect();
    let sub_points: Vec<Point> = selected.iter().map(|&i| query.points[i]).collect();
    Ok(PublishedQuery {
        grids,
        sub_query: Trajectory {
            id: query.id.clone(),
            points: sub_points,
        },
        spec: *spec,
        tau,
        query_len: query.len(),
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Coord;
    use crate::privacy::{cell_side_for, solve_noise_bound};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_query(n: usize, step: f64) -> Trajectory {
        Trajectory::new(
            "q",
            (0..n)
                .map(|i| Point::new(i as f64 * 10.0, 5.0 + i as f64 * step, 5.0))
                .collect(),
        )
        .unwrap()
    }

    fn tiny_noise(cell_side: f64) -> NoiseBound {
        NoiseBound {
            delta_mass: 1e-9,
            radius: 1e-6,
            cell_side,
        }
    }

    #[test]
    fn degenerate_regime_publishes_all_distinct_cells() {
        // huge cells, noise of a micrometer: every perturbation stays in-cell
        let params = PrivacyParams::new(1e4, 1e-5, 1.0, 0.81).unwrap();
        let bound = tiny_noise(1000.0);
        let spec = GridSpec::new(Coord::new(0.0, 0.0), 1000.0);
        let q = line_query(10, 400.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = publish(&q, 50.0, &params, &bound, &spec, &mut rng).unwrap();
        let mut expected: Vec<GridId> = Vec::new();
        for pt in &q.points {
            let g = spec.cell_of(pt.loc);
            if !expected.contains(&g) {
                expected.push(g);
            }
        }
        assert_eq!(p.grids, expected);
        assert_eq!(p.sub_query, q);
    }

    #[test]
    fn cardinality_follows_rate() {
        let params = PrivacyParams::new(1e4, 1e-5, 0.6, 0.81).unwrap();
        let bound = tiny_noise(1000.0);
        let spec = GridSpec::new(Coord::new(0.0, 0.0), 1000.0);
        let q = line_query(10, 400.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = publish(&q, 50.0, &params, &bound, &spec, &mut rng).unwrap();
        assert_eq!(p.sub_query.len(), 6);
        assert_eq!(p.selected_points().len(), 6);
        assert!(p.grids.len() <= 6);
        for (&i, pt) in p.selected_points().iter().zip(&p.sub_query.points) {
            assert_eq!(q.points[i], *pt);
        }
        for g in &p.grids {
            assert!(p.sub_query.points.iter().any(|pt| spec.cell_of(pt.loc) == *g));
        }
        let uniq: std::collections::HashSet<_> = p.grids.iter().collect();
        assert_eq!(uniq.len(), p.grids.len());
    }

    #[test]
    fn every_published_grid_is_a_true_cell() {
        let params = PrivacyParams::new(0.01, 1e-5, 0.6, 0.81).unwrap();
        let bound = solve_noise_bound(&params).unwrap();
        let spec = GridSpec::new(Coord::new(0.0, 0.0), bound.cell_side);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q = Trajectory::new(
                "q",
                (0..8)
                    .map(|i| Point::new(i as f64, rng.gen_range(0.0..5000.0), rng.gen_range(0.0..5000.0)))
                    .collect(),
            )
            .unwrap();
            match publish(&q, 50.0, &params, &bound, &spec, &mut rng) {
                Ok(p) => {
                    for pt in &p.sub_query.points {
                        assert!(p.grids.contains(&spec.cell_of(pt.loc)));
                    }
                    for g in &p.grids {
                        assert!(p.sub_query.points.iter().any(|pt| spec.cell_of(pt.loc) == *g));
                    }
                }
                Err(PublishError::NoCandidates) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let params = PrivacyParams::new(0.01, 1e-5, 0.6, 0.81).unwrap();
        let bound = solve_noise_bound(&params).unwrap();
        let spec = GridSpec::new(Coord::new(0.0, 0.0), bound.cell_side);
        let q = line_query(12, 150.0);
        let a = publish(&q, 50.0, &params, &bound, &spec, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = publish(&q, 50.0, &params, &bound, &spec, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn error_paths() {
        let params = PrivacyParams::new(0.01, 1e-5, 0.1, 0.81).unwrap();
        let bound = solve_noise_bound(&params).unwrap();
        let spec = GridSpec::new(Coord::new(0.0, 0.0), bound.cell_side);
        let q = line_query(5, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            publish(&q, 50.0, &params, &bound, &spec, &mut rng),
            Err(PublishError::ZeroSelection { .. })
        ));
        let other = GridSpec::new(Coord::new(0.0, 0.0), 10.0);
        assert!(matches!(
            publish(&q, 50.0, &params, &bound, &other, &mut rng),
            Err(PublishError::CellSideMismatch { .. })
        ));
        // noise much larger than the cell: nothing survives
        let huge = NoiseBound {
            delta_mass: 0.5,
            radius: 1e6,
            cell_side: 1.0,
        };
        let tiny = GridSpec::new(Coord::new(0.0, 0.0), 1.0);
        let p1 = PrivacyParams::new(1e-9, 1e-5, 1.0, 0.81).unwrap();
        let far = Trajectory::new("f", vec![Point::new(0.0, 0.5, 0.5)]).unwrap();
        assert_eq!(
            publish(&far, 50.0, &p1, &huge, &tiny, &mut rng),
            Err(PublishError::NoCandidates)
        );
    }

    #[test]
    fn in_cell_success_rate_meets_target() {
        let params = PrivacyParams::new(0.01, 1e-5, 1.0, 0.81).unwrap();
        let bound = solve_noise_bound(&params).unwrap();
        assert!((bound.cell_side - cell_side_for(bound.radius, 0.81)).abs() < 1e-9);
        let spec = GridSpec::new(Coord::new(0.0, 0.0), bound.cell_side);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            let x = Coord::new(
                rng.gen_range(0.0..bound.cell_side),
                rng.gen_range(0.0..bound.cell_side),
            );
            let y = bpl_perturb(x, &bound, params.epsilon, &mut rng);
            hits += (spec.cell_of(x) == spec.cell_of(y)) as usize;
        }
        let p = hits as f64 / n as f64;
        let sigma = (0.81f64 * 0.19 / n as f64).sqrt();
        assert!(p >= 0.81 - 3.0 * sigma, "p={p}");
    }

    #[test]
    fn registry_has_uniform() {
        assert_eq!(selectors().get("uniform").unwrap().name(), "uniform");
    }
}
