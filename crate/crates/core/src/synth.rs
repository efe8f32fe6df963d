//! Synthetic trajectory corpora and query workloads.
//!
//! Trajectories are random-waypoint walks in projected meters. A share of
//! walks start and pick waypoints near a few hotspots, which skews density the
//! way real city data is skewed. Companion trajectories shadow an earlier
//! trajectory with a small offset so queries have several true matches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Coord, Point, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub trajectories: usize,
    pub seed: u64,
    /// South-west corner of the area, e.g. a UTM easting/northing.
    pub origin: Coord,
    /// Side of the square area in meters.
    pub extent: f64,
    pub hotspots: usize,
    /// Fraction of trajectories tied to hotspots.
    pub hotspot_share: f64,
    pub hotspot_radius: f64,
    /// Fraction of trajectories that shadow an earlier one.
    pub companion_share: f64,
    /// Maximum companion offset in meters.
    pub companion_offset: f64,
    pub min_points: usize,
    pub max_points: usize,
    /// Speed range in meters per second.
    pub speed: (f64, f64),
    /// Sampling interval range in whole seconds.
    pub interval: (u32, u32),
    /// Latest start time in seconds.
    pub horizon: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            trajectories: 1000,
            seed: 1,
            origin: Coord::new(500_000.0, 4_400_000.0),
            extent: 20_000.0,
            hotspots: 4,
            hotspot_share: 0.6,
            hotspot_radius: 1500.0,
            companion_share: 0.2,
            companion_offset: 60.0,
            min_points: 20,
            max_points: 60,
            speed: (1.5, 12.0),
            interval: (5, 30),
            horizon: 4.0 * 3600.0,
        }
    }
}

struct Area<'a> {
    cfg: &'a CorpusConfig,
    hotspots: Vec<Coord>,
}

impl Area<'_> {
    fn uniform(&self, rng: &mut impl Rng) -> Coord {
        Coord::new(
            self.cfg.origin.x + rng.gen_range(0.0..self.cfg.extent),
            self.cfg.origin.y + rng.gen_range(0.0..self.cfg.extent),
        )
    }

    fn near(&self, c: Coord, radius: f64, rng: &mut impl Rng) -> Coord {
        let r = radius * rng.gen::<f64>().sqrt();
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        self.clamp(Coord::new(c.x + r * a.cos(), c.y + r * a.sin()))
    }

    fn clamp(&self, c: Coord) -> Coord {
        let o = self.cfg.origin;
        let e = self.cfg.extent;
        Coord::new(c.x.clamp(o.x, o.x + e), c.y.clamp(o.y, o.y + e))
    }

    fn waypoint(&self, hot: bool, rng: &mut impl Rng) -> Coord {
        if hot && !self.hotspots.is_empty() {
            let h = self.hotspots[rng.gen_range(0..self.hotspots.len())];
            self.near(h, self.cfg.hotspot_radius, rng)
        } else {
            self.uniform(rng)
        }
    }
}

fn mm(v: f64) -> f64 {
    (v * 1e3).round() / 1e3
}

fn walk(area: &Area<'_>, id: String, rng: &mut impl Rng) -> Trajectory {
    let cfg = area.cfg;
    let hot = rng.gen_bool(cfg.hotspot_share.clamp(0.0, 1.0));
    let n = rng.gen_range(cfg.min_points..=cfg.max_points.max(cfg.min_points));
    let mut pos = area.waypoint(hot, rng);
    let mut target = area.waypoint(hot, rng);
    let mut speed = rng.gen_range(cfg.speed.0..=cfg.speed.1);
    let mut ts = rng.gen_range(0.0..cfg.horizon).floor();
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        pts.push(Point::new(ts, mm(pos.x), mm(pos.y)));
        let dt = f64::from(rng.gen_range(cfg.interval.0..=cfg.interval.1));
        ts += dt;
        let mut travel = speed * dt;
        loop {
            let (dx, dy) = (target.x - pos.x, target.y - pos.y);
            let d = dx.hypot(dy);
            if d > travel {
                pos = Coord::new(pos.x + dx / d * travel, pos.y + dy / d * travel);
                break;
            }
            pos = target;
            travel -= d;
            target = area.waypoint(hot, rng);
            speed = rng.gen_range(cfg.speed.0..=cfg.speed.1);
            if travel <= 0.0 {
                break;
            }
        }
    }
    Trajectory::new(id, pts).expect("walk timestamps strictly increase")
}

fn companion(src: &Trajectory, id: String, max_offset: f64, rng: &mut impl Rng) -> Trajectory {
    let r = max_offset * rng.gen::<f64>().sqrt();
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ox, oy) = (r * a.cos(), r * a.sin());
    let pts = src
        .points
        .iter()
        .map(|p| {
            let jx = rng.gen_range(-2.0..2.0);
            let jy = rng.gen_range(-2.0..2.0);
            Point::new(p.ts, mm(p.loc.x + ox + jx), mm(p.loc.y + oy + jy))
        })
        .collect();
    Trajectory::new(id, pts).expect("copied timestamps stay ordered")
}

/// Generates `cfg.trajectories` trajectories with ids `t000000`, `t000001`, ...
/// Coordinates are whole millimeters and timestamps whole seconds.
pub fn generate_corpus(cfg: &CorpusConfig) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = Area { cfg, hotspots: Vec::new() };
    let hotspots = (0..cfg.hotspots).map(|_| base.uniform(&mut rng)).collect();
    let area = Area { cfg, hotspots };
    let mut out: Vec<Trajectory> = Vec::with_capacity(cfg.trajectories);
    for i in 0..cfg.trajectories {
        let id = format!("t{i:06}");
        let t = if !out.is_empty() && rng.gen_bool(cfg.companion_share.clamp(0.0, 1.0)) {
            let src = &out[rng.gen_range(0..out.len())];
            companion(src, id, cfg.companion_offset, &mut rng)
        } else {
            walk(&area, id, &mut rng)
        };
        out.push(t);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    /// Fraction of a source trajectory's points kept as the query.
    pub sampling_rate: f64,
    pub min_points: usize,
    /// Maximum displacement of each query point, in meters.
    pub jitter: f64,
    /// Fraction of queries drawn as fresh walks rather than from the corpus.
    pub fresh_share: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            sampling_rate: 0.2,
            min_points: 3,
            jitter: 20.0,
            fresh_share: 0.1,
        }
    }
}

/// Keeps `max(min_points, round(rate * |t|))` points of `t` (all of them if
/// `t` is shorter), in time order, each displaced by up to `jitter`.
pub fn sample_query(t: &Trajectory, id: String, cfg: &QueryConfig, rng: &mut impl Rng) -> Trajectory {
    let n = t.len();
    let k = ((cfg.sampling_rate * n as f64).round() as usize).max(cfg.min_points).min(n).max(1);
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    let pts = idx
        .into_iter()
        .map(|i| {
            let p = t.points[i];
            let r = cfg.jitter * rng.gen::<f64>().sqrt();
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            Point::new(p.ts, mm(p.loc.x + r * a.cos()), mm(p.loc.y + r * a.sin()))
        })
        .collect();
    Trajectory::new(id, pts).expect("sampled points keep their order")
}

/// Query workload over `corpus`, generated deterministically from `seed`.
pub fn generate_queries(corpus: &[Trajectory], area: &CorpusConfig, n: usize, cfg: &QueryConfig, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Area { cfg: area, hotspots: Vec::new() };
    (0..n)
        .map(|i| {
            let id = format!("q{i:04}");
            if corpus.is_empty() || rng.gen_bool(cfg.fresh_share.clamp(0.0, 1.0)) {
                let src = walk(&base, id.clone(), &mut rng);
                sample_query(&src, id, cfg, &mut rng)
            } else {
                let src = &corpus[rng.gen_range(0..corpus.len())];
                sample_query(src, id, cfg, &mut rng)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::matches;

    #[test]
    fn deterministic_under_seed() {
        let cfg = CorpusConfig {
            trajectories: 50,
            ..CorpusConfig::default()
        };
        assert_eq!(generate_corpus(&cfg), generate_corpus(&cfg));
        let other = CorpusConfig { seed: 2, ..cfg.clone() };
        assert_ne!(generate_corpus(&cfg), generate_corpus(&other));
    }

    #[test]
    fn corpus_shape() {
        let cfg = CorpusConfig {
            trajectories: 300,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&cfg);
        assert_eq!(c.len(), 300);
        for t in &c {
            assert!(t.len() >= cfg.min_points && t.len() <= cfg.max_points);
            assert_eq!(t, &t.snapped());
            for p in &t.points {
                assert!(p.loc.x >= cfg.origin.x - 100.0 && p.loc.x <= cfg.origin.x + cfg.extent + 100.0);
            }
        }
    }

    #[test]
    fn queries_match_their_source() {
        let cfg = CorpusConfig {
            trajectories: 200,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg);
        let qcfg = QueryConfig {
            fresh_share: 0.0,
            ..QueryConfig::default()
        };
        let qs = generate_queries(&corpus, &cfg, 50, &qcfg, 3);
        for q in &qs {
            assert!(q.len() >= 3);
            // jitter 20 m < tau 50 m, so some corpus trajectory matches
            assert!(corpus.iter().any(|t| matches(t, q, 50.0)));
        }
    }
}
