use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{traversal_grids, GridId, GridSpec};
use crate::geometry::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("duplicate trajectory id {0:?}")]
    DuplicateId(String),
    #[error("too many trajectories for 32-bit posting ids: {0}")]
    TooMany(usize),
    #[error("empty published grid set: no basis for filtering")]
    EmptyQuery,
}

/// Inverted map from grid cell to the ascending, duplicate-free list of
/// trajectory positions whose traversal grids contain that cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridIndex {
    pub spec: GridSpec,
    pub tau: f64,
    pub trajectory_count: u64,
    pub entries: BTreeMap<GridId, Vec<u32>>,
}

/// Builds the index offline. Posting ids are positions in `trajectories`.
pub fn build_index(
    trajectories: &[Trajectory],
    tau: f64,
    spec: GridSpec,
) -> Result<GridIndex, IndexError> {
    if trajectories.len() > u32::MAX as usize {
        return Err(IndexError::TooMany(trajectories.len()));
    }
    let mut ids = HashSet::with_capacity(trajectories.len());
    for t in trajectories {
        if !ids.insert(t.id.as_str()) {
            return Err(IndexError::DuplicateId(t.id.clone()));
        }
    }
    let per_trajectory: Vec<(u32, Vec<GridId>)> = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, t)| (i as u32, traversal_grids(t, tau, &spec).into_iter().collect()))
        .collect();
    let mut entries: BTreeMap<GridId, Vec<u32>> = BTreeMap::new();
    // positions arrive in ascending order, so every posting list stays sorted
    for (pos, grids) in per_trajectory {
        for g in grids {
            entries.entry(g).or_default().push(pos);
        }
    }
    Ok(GridIndex {
        spec,
        tau,
        trajectory_count: trajectories.len() as u64,
        entries,
    })
}

/// First index in `list[from..]` whose value is `>= target`, by exponential
/// then binary search.
fn gallop(list: &[u32], from: usize, target: u32) -> usize {
    let mut step = 1;
    let mut hi = from;
    while hi < list.len() && list[hi] < target {
        hi = from + step;
        step *= 2;
    }
    let lo = from + step / 4;
    let hi = hi.min(list.len());
    let lo = lo.min(hi);
    lo + list[lo..hi].partition_point(|&v| v < target)
}

impl GridIndex {
    pub fn posting(&self, g: &GridId) -> &[u32] {
        self.entries.get(g).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Trajectories whose traversal grids contain every cell in `grids`.
    pub fn filter(&self, grids: &[GridId]) -> Result<Vec<u32>, IndexError> {
        if grids.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let mut lists: Vec<&[u32]> = grids.iter().map(|g| self.posting(g)).collect();
        lists.sort_by_key(|l| l.len());
        let (first, rest) = lists.split_first().expect("non-empty");
        let mut cursors = vec![0usize; rest.len()];
        let mut out = Vec::new();
        'candidates: for &id in first.iter() {
            for (list, cur) in rest.iter().zip(cursors.iter_mut()) {
                *cur = gallop(list, *cur, id);
                if *cur >= list.len() {
                    break 'candidates;
                }
                if list[*cur] != id {
                    continue 'candidates;
                }
            }
            out.push(id);
        }
        Ok(out)
    }

    pub fn grid_count(&self) -> usize {
        self.entries.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Coord, Point};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(n: usize, seed: u64) -> Vec<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let k = rng.gen_range(1..10);
                let mut ts = 0.0;
                let (mut x, mut y) = (rng.gen_range(0.0..2000.0), rng.gen_range(0.0..2000.0));
                let mut pts = Vec::new();
                for _ in 0..k {
                    pts.push(Point::new(ts, x, y));
                    ts += rng.gen_range(1.0..20.0);
                    x += rng.gen_range(-200.0..200.0);
                    y += rng.gen_range(-200.0..200.0);
                }
                Trajectory::new(format!("t{i}"), pts).unwrap()
            })
            .collect()
    }

    fn spec() -> GridSpec {
        GridSpec::new(Coord::new(0.0, 0.0), 100.0)
    }

    #[test]
    fn empty_corpus_has_no_entries() {
        let idx = build_index(&[], 50.0, spec()).unwrap();
        assert!(idx.entries.is_empty());
    }

    #[test]
    fn single_trajectory_entries_are_its_traversal_grids() {
        let ts = corpus(1, 1);
        let idx = build_index(&ts, 50.0, spec()).unwrap();
        let keys: Vec<_> = idx.entries.keys().copied().collect();
        let expected: Vec<_> = traversal_grids(&ts[0], 50.0, &spec()).into_iter().collect();
        assert_eq!(keys, expected);
        assert!(idx.entries.values().all(|v| v == &vec![0]));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut ts = corpus(2, 2);
        ts[1].id = ts[0].id.clone();
        assert_eq!(
            build_index(&ts, 50.0, spec()),
            Err(IndexError::DuplicateId(ts[0].id.clone()))
        );
    }

    #[test]
    fn membership_cross_check() {
        let ts = corpus(1000, 3);
        let idx = build_index(&ts, 50.0, spec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let keys: Vec<GridId> = idx.entries.keys().copied().collect();
        for _ in 0..50 {
            let g = keys[rng.gen_range(0..keys.len())];
            let t = rng.gen_range(0..ts.len());
            let in_index = idx.posting(&g).binary_search(&(t as u32)).is_ok();
            assert_eq!(in_index, traversal_grids(&ts[t], 50.0, &spec()).contains(&g));
            // a random member of the posting list must also agree
            let p = idx.posting(&g);
            let m = p[rng.gen_range(0..p.len())] as usize;
            assert!(traversal_grids(&ts[m], 50.0, &spec()).contains(&g));
        }
        for list in idx.entries.values() {
            assert!(list.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn filter_edge_cases() {
        let ts = corpus(50, 5);
        let mut idx = build_index(&ts, 50.0, spec()).unwrap();
        assert_eq!(idx.filter(&[]), Err(IndexError::EmptyQuery));
        let far = GridId::new(10_000, 10_000);
        assert_eq!(idx.filter(&[far]).unwrap(), Vec::<u32>::new());
        let all: Vec<u32> = (0..50).collect();
        idx.entries.insert(far, all.clone());
        assert_eq!(idx.filter(&[far]).unwrap(), all);
    }

    #[test]
    fn gallop_finds_lower_bound() {
        let l = [1, 3, 5, 7, 9, 11, 13, 15, 17];
        for from in 0..l.len() {
            for target in 0..20 {
                let expect = from + l[from..].partition_point(|&v| v < target);
                assert_eq!(gallop(&l, from, target), expect, "from={from} target={target}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn filter_equals_definitional_scan(seed in any::<u64>(), k in 1usize..4) {
            let ts = corpus(120, seed);
            let idx = build_index(&ts, 50.0, spec()).unwrap();
            let grids: Vec<Vec<GridId>> = ts.iter()
                .map(|t| traversal_grids(t, 50.0, &spec()).into_iter().collect())
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            // query cells drawn from one trajectory so results are usually non-empty
            let src = &grids[rng.gen_range(0..grids.len())];
            let q: Vec<GridId> = (0..k).map(|_| src[rng.gen_range(0..src.len())]).collect();
            let expected: Vec<u32> = (0..ts.len() as u32)
                .filter(|&i| q.iter().all(|g| grids[i as usize].contains(g)))
                .collect();
            prop_assert_eq!(idx.filter(&q).unwrap(), expected.clone());

            // adding a grid never grows the result
            let extra = src[rng.gen_range(0..src.len())];
            let mut q2 = q.clone();
            q2.push(extra);
            let narrowed = idx.filter(&q2).unwrap();
            prop_assert!(narrowed.iter().all(|id| expected.contains(id)));

            // single-grid filter is the posting list
            prop_assert_eq!(idx.filter(&[extra]).unwrap(), idx.posting(&extra).to_vec());
        }
    }
}
