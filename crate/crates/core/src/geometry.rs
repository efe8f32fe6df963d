//! Trajectory data model and the plaintext matching predicate.
//!
//! Coordinates are planar meters and timestamps are seconds. A trajectory is a
//! time-ordered list of points; consecutive points form segments along which the
//! object is assumed to move at constant velocity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("timestamp {ts} outside segment span [{start}, {end}]")]
    OutsideSegment { ts: f64, start: f64, end: f64 },
    #[error("trajectory {id:?} has no points")]
    EmptyTrajectory { id: String },
    #[error("trajectory {id:?}: point {index} has a non-finite component")]
    NonFinite { id: String, index: usize },
    #[error("trajectory {id:?}: timestamp decreases at point {index}")]
    DecreasingTimestamp { id: String, index: usize },
    #[error("trajectory {id:?}: negative timestamp at point {index}")]
    NegativeTimestamp { id: String, index: usize },
}

/// Planar location in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coord {
    pub x: f64,
    pub y: f64,
}

impl Coord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<(f64, f64)> for Coord {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub ts: f64,
    pub loc: Coord,
}

impl Point {
    pub const fn new(ts: f64, x: f64, y: f64) -> Self {
        Self {
            ts,
            loc: Coord::new(x, y),
        }
    }
}

/// A pair of consecutive points. `o.ts <= d.ts` always holds for segments
/// produced by [`Trajectory::segments`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub o: Point,
    pub d: Point,
}

impl Segment {
    pub const fn new(o: Point, d: Point) -> Self {
        Self { o, d }
    }

    pub fn covers(&self, ts: f64) -> bool {
        self.o.ts <= ts && ts <= self.d.ts
    }

    pub fn duration(&self) -> f64 {
        self.d.ts - self.o.ts
    }
}

/// Location on `s` at time `ts`, assuming uniform motion from `s.o` to `s.d`.
///
/// A zero-duration segment evaluates to its origin.
pub fn interpolate(s: &Segment, ts: f64) -> Result<Coord, GeometryError> {
    if !s.covers(ts) {
        return Err(GeometryError::OutsideSegment {
            ts,
            start: s.o.ts,
            end: s.d.ts,
        });
    }
    Ok(interpolate_unchecked(s, ts))
}

pub(crate) fn interpolate_unchecked(s: &Segment, ts: f64) -> Coord {
    let span = s.duration();
    if span <= 0.0 {
        return s.o.loc;
    }
    let f = (ts - s.o.ts) / span;
    Coord {
        x: s.o.loc.x + f * (s.d.loc.x - s.o.loc.x),
        y: s.o.loc.y + f * (s.d.loc.y - s.o.loc.y),
    }
}

pub fn euclidean(a: Coord, b: Coord) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<Point>,
}

impl Trajectory {
    /// Builds a trajectory after checking that it is non-empty, finite, and
    /// time-ordered.
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Result<Self, GeometryError> {
        let t = Self {
            id: id.into(),
            points,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyTrajectory {
                id: self.id.clone(),
            });
        }
        for (index, p) in self.points.iter().enumerate() {
            if !p.ts.is_finite() || !p.loc.is_finite() {
                return Err(GeometryError::NonFinite {
                    id: self.id.clone(),
                    index,
                });
            }
            if p.ts < 0.0 {
                return Err(GeometryError::NegativeTimestamp {
                    id: self.id.clone(),
                    index,
                });
            }
            if index > 0 && p.ts < self.points[index - 1].ts {
                return Err(GeometryError::DecreasingTimestamp {
                    id: self.id.clone(),
                    index,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start_ts(&self) -> f64 {
        self.points[0].ts
    }

    pub fn end_ts(&self) -> f64 {
        self.points[self.points.len() - 1].ts
    }

    /// Consecutive point pairs. A single-point trajectory yields one
    /// zero-duration segment so that it can still be located at its timestamp.
    pub fn segments(&self) -> Vec<Segment> {
        match self.points.len() {
            0 => Vec::new(),
            1 => vec![Segment::new(self.points[0], self.points[0])],
            _ => self
                .points
                .windows(2)
                .map(|w| Segment::new(w[0], w[1]))
                .collect(),
        }
    }

    pub fn segment_count(&self) -> usize {
        self.points.len().saturating_sub(1).max(1)
    }

    /// Snaps every timestamp to the millisecond and every coordinate to the
    /// millimeter, the resolution used by secure verification.
    pub fn snapped(&self) -> Self {
        Self {
            id: self.id.clone(),
            points: self
                .points
                .iter()
                .map(|p| Point::new(snap(p.ts), snap(p.loc.x), snap(p.loc.y)))
                .collect(),
        }
    }
}

fn snap(v: f64) -> f64 {
    (v * 1e3).round() / 1e3
}

/// Location of `t` at `ts`, or `None` if `ts` falls outside its time span.
///
/// On a timestamp shared by two adjacent segments the earlier one is used;
/// both agree by continuity.
pub fn locate(t: &Trajectory, ts: f64) -> Option<Coord> {
    if t.points.is_empty() || ts < t.start_ts() || ts > t.end_ts() {
        return None;
    }
    if t.points.len() == 1 {
        return Some(t.points[0].loc);
    }
    // first point index with timestamp >= ts
    let idx = t.points.partition_point(|p| p.ts < ts);
    let i = idx.max(1);
    let s = Segment::new(t.points[i - 1], t.points[i]);
    Some(interpolate_unchecked(&s, ts))
}

/// Whether every point of `query` has a location on `t` at the same timestamp
/// within distance `tau`.
///
/// When several segments cover a query timestamp (duplicate timestamps in `t`)
/// any of them may supply the match, the same rule secure verification applies.
pub fn matches(t: &Trajectory, query: &Trajectory, tau: f64) -> bool {
    query.points.iter().all(|q| {
        covering_segments(t, q.ts)
            .any(|s| euclidean(q.loc, interpolate_unchecked(&s, q.ts)) <= tau)
    })
}

/// Whether each query point is covered in time by some segment of `segments`
/// whose location at that time is within `tau`. Segments need not be
/// contiguous.
pub fn points_within(segments: &[Segment], query: &[Point], tau: f64) -> bool {
    query.iter().all(|q| {
        segments
            .iter()
            .any(|s| s.covers(q.ts) && euclidean(q.loc, interpolate_unchecked(s, q.ts)) <= tau)
    })
}

fn covering_segments(t: &Trajectory, ts: f64) -> impl Iterator<Item = Segment> + '_ {
    let n = t.points.len();
    let (first, last) = if n == 0 || ts < t.start_ts() || ts > t.end_ts() {
        (1, 0)
    } else if n == 1 {
        (0, 0)
    } else {
        let lo = t.points.partition_point(|p| p.ts < ts);
        let hi = t.points.partition_point(|p| p.ts <= ts);
        (lo.saturating_sub(1), hi.saturating_sub(1).min(n - 2))
    };
    (first..=last).filter_map(move |i| {
        if n == 1 {
            Some(Segment::new(t.points[0], t.points[0]))
        } else {
            (i + 1 < n).then(|| Segment::new(t.points[i], t.points[i + 1]))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn t0() -> Trajectory {
        Trajectory::new(
            "T0",
            vec![
                Point::new(0.0, 2.0, 1.0),
                Point::new(2.0, 1.0, 2.0),
                Point::new(5.0, 4.0, 5.0),
                Point::new(7.0, 6.0, 1.0),
            ],
        )
        .unwrap()
    }

    fn tq() -> Trajectory {
        Trajectory::new(
            "TQ",
            vec![Point::new(4.0, 3.0, 3.0), Point::new(6.0, 4.0, 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn interpolate_worked_example() {
        let s = Segment::new(Point::new(2.0, 1.0, 2.0), Point::new(5.0, 4.0, 5.0));
        let c = interpolate(&s, 4.0).unwrap();
        assert!((c.x - 3.0).abs() < 1e-12 && (c.y - 4.0).abs() < 1e-12);
    }

    #[test]
    fn interpolate_endpoints_and_axis_motion() {
        let s = Segment::new(Point::new(0.0, 0.0, 0.0), Point::new(10.0, 10.0, 0.0));
        assert_eq!(interpolate(&s, 0.0).unwrap(), Coord::new(0.0, 0.0));
        assert_eq!(interpolate(&s, 2.5).unwrap(), Coord::new(2.5, 0.0));
        assert!(matches!(
            interpolate(&s, 10.5),
            Err(GeometryError::OutsideSegment { .. })
        ));
    }

    #[test]
    fn zero_duration_segment_is_origin() {
        let s = Segment::new(Point::new(3.0, 1.0, 1.0), Point::new(3.0, 9.0, 9.0));
        assert_eq!(interpolate(&s, 3.0).unwrap(), Coord::new(1.0, 1.0));
    }

    #[test]
    fn locate_examples() {
        let t = t0();
        let c = locate(&t, 6.0).unwrap();
        assert!((c.x - 5.0).abs() < 1e-12 && (c.y - 3.0).abs() < 1e-12);
        assert_eq!(locate(&t, 0.0), Some(Coord::new(2.0, 1.0)));
        assert_eq!(locate(&t, 100.0), None);
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(Coord::new(3.0, 3.0), Coord::new(3.0, 4.0)), 1.0);
        let d = euclidean(Coord::new(4.0, 2.0), Coord::new(5.0, 3.0));
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(euclidean(Coord::new(7.0, 7.0), Coord::new(7.0, 7.0)), 0.0);
    }

    #[test]
    fn matches_worked_example() {
        assert!(matches(&t0(), &tq(), 1.5));
    }

    #[test]
    fn query_outside_span_never_matches() {
        let q = Trajectory::new("q", vec![Point::new(7.5, 6.0, 1.0)]).unwrap();
        assert!(!matches(&t0(), &q, 1e9));
    }

    #[test]
    fn rejects_invalid_trajectories() {
        assert!(Trajectory::new("e", vec![]).is_err());
        assert!(Trajectory::new(
            "d",
            vec![Point::new(2.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)]
        )
        .is_err());
        assert!(Trajectory::new("n", vec![Point::new(0.0, f64::NAN, 0.0)]).is_err());
    }

    /// Scans every segment for every query point with no binary search.
    fn brute_matches(t: &Trajectory, q: &Trajectory, tau: f64) -> bool {
        let segs = t.segments();
        q.points.iter().all(|qp| {
            segs.iter().any(|s| {
                if qp.ts < s.o.ts || qp.ts > s.d.ts {
                    return false;
                }
                let (x, y) = if s.d.ts == s.o.ts {
                    (s.o.loc.x, s.o.loc.y)
                } else {
                    let w = (qp.ts - s.o.ts) / (s.d.ts - s.o.ts);
                    (
                        (1.0 - w) * s.o.loc.x + w * s.d.loc.x,
                        (1.0 - w) * s.o.loc.y + w * s.d.loc.y,
                    )
                };
                ((qp.loc.x - x).powi(2) + (qp.loc.y - y).powi(2)).sqrt() <= tau
            })
        })
    }

    pub(crate) fn random_trajectory(rng: &mut impl Rng, id: &str, n: usize) -> Trajectory {
        let mut ts = rng.gen_range(0.0..100.0);
        let mut x = rng.gen_range(-50.0..50.0);
        let mut y = rng.gen_range(-50.0..50.0);
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            pts.push(Point::new(ts, x, y));
            ts += rng.gen_range(0.0..10.0);
            x += rng.gen_range(-10.0..10.0);
            y += rng.gen_range(-10.0..10.0);
        }
        Trajectory::new(id, pts).unwrap()
    }

    #[test]
    fn matches_agrees_with_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut positives = 0;
        for i in 0..200 {
            let n = rng.gen_range(1..12);
            let t = random_trajectory(&mut rng, "t", n);
            // query points near the trajectory at covered and uncovered times
            let n = rng.gen_range(1..6);
            let mut qpts: Vec<Point> = (0..n)
                .map(|_| {
                    let ts = rng.gen_range(t.start_ts() - 5.0..t.end_ts() + 5.0);
                    let base = locate(&t, ts.clamp(t.start_ts(), t.end_ts())).unwrap();
                    Point::new(
                        ts.max(0.0),
                        base.x + rng.gen_range(-6.0..6.0),
                        base.y + rng.gen_range(-6.0..6.0),
                    )
                })
                .collect();
            qpts.sort_by(|a, b| a.ts.total_cmp(&b.ts));
            let q = Trajectory::new(format!("q{i}"), qpts).unwrap();
            let tau = rng.gen_range(0.5..10.0);
            let got = matches(&t, &q, tau);
            assert_eq!(got, brute_matches(&t, &q, tau), "case {i}");
            positives += got as usize;
        }
        assert!(positives > 5, "too few positive cases: {positives}");
    }

    proptest! {
        #[test]
        fn self_match(seed in any::<u64>(), n in 1usize..15, tau in 0.001f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_trajectory(&mut rng, "t", n);
            prop_assert!(matches(&t, &t, tau));
        }

        #[test]
        fn monotone_in_tau(seed in any::<u64>(), t1 in 0.1f64..20.0, extra in 0.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_trajectory(&mut rng, "t", 8);
            let q = random_trajectory(&mut rng, "q", 3);
            if matches(&t, &q, t1) {
                prop_assert!(matches(&t, &q, t1 + extra));
            }
        }

        #[test]
        fn continuous_at_junctions(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_trajectory(&mut rng, "t", 6);
            let segs = t.segments();
            for w in segs.windows(2) {
                let ts = w[0].d.ts;
                let a = interpolate(&w[0], ts).unwrap();
                let b = interpolate(&w[1], ts).unwrap();
                prop_assert!(euclidean(a, b) < 1e-9);
            }
        }

        #[test]
        fn interpolation_stays_on_segment(seed in any::<u64>(), f in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_trajectory(&mut rng, "t", 2);
            let s = t.segments()[0];
            let ts = s.o.ts + f * s.duration();
            let c = interpolate(&s, ts.min(s.d.ts)).unwrap();
            let whole = euclidean(s.o.loc, s.d.loc);
            let parts = euclidean(s.o.loc, c) + euclidean(c, s.d.loc);
            prop_assert!((parts - whole).abs() <= 1e-9 * whole.max(1.0));
        }
    }
}
