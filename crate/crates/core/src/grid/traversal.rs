use std::collections::{BTreeSet, HashSet};

use super::{GridId, GridSpec, Rect};
use crate::geometry::{Coord, Trajectory};

fn point_segment_distance(p: Coord, a: Coord, b: Coord) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.x - (a.x + t * dx)).hypot(p.y - (a.y + t * dy))
}

/// Liang-Barsky clip of segment `a -> b` against `r`.
fn segment_hits_rect(a: Coord, b: Coord, r: &Rect) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-dx, a.x - r.min.x),
        (dx, r.max.x - a.x),
        (-dy, a.y - r.min.y),
        (dy, r.max.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Minimum Euclidean distance between segment `a -> b` and rectangle `r`.
pub fn segment_rect_distance(a: Coord, b: Coord, r: &Rect) -> f64 {
    if segment_hits_rect(a, b, r) {
        return 0.0;
    }
    let corners = [
        r.min,
        Coord::new(r.max.x, r.min.y),
        r.max,
        Coord::new(r.min.x, r.max.y),
    ];
    corners
        .iter()
        .map(|&c| point_segment_distance(c, a, b))
        .fold(r.distance_to(a).min(r.distance_to(b)), f64::min)
}

/// Cells visited by the straight line from `a` to `b` (grid traversal in the
/// style of Amanatides and Woo).
fn line_cells(spec: &GridSpec, a: Coord, b: Coord, out: &mut Vec<GridId>) {
    let start = spec.cell_of(a);
    let end = spec.cell_of(b);
    out.push(start);
    if start == end {
        return;
    }
    let l = spec.cell_side;
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let next_boundary = |coord: f64, origin: f64, idx: i64, step: i64| {
        let edge = if step > 0 { idx + 1 } else { idx };
        origin + edge as f64 * l - coord
    };
    let mut t_max_x = if dx != 0.0 {
        next_boundary(a.x, spec.origin.x, start.ix, step_x) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy != 0.0 {
        next_boundary(a.y, spec.origin.y, start.iy, step_y) / dy
    } else {
        f64::INFINITY
    };
    let t_dx = if dx != 0.0 { l / dx.abs() } else { f64::INFINITY };
    let t_dy = if dy != 0.0 { l / dy.abs() } else { f64::INFINITY };
    let mut cur = start;
    let budget = (end.ix - start.ix).abs() + (end.iy - start.iy).abs();
    for _ in 0..budget {
        if t_max_x < t_max_y {
            cur.ix += step_x;
            t_max_x += t_dx;
        } else {
            cur.iy += step_y;
            t_max_y += t_dy;
        }
        out.push(cur);
        if cur == end {
            break;
        }
    }
    out.push(end);
}

/// Cells whose minimum distance to some location of `t` (including every
/// intermediate location on its segments) is at most `tau`.
pub fn traversal_grids(t: &Trajectory, tau: f64, spec: &GridSpec) -> BTreeSet<GridId> {
    assert!(tau > 0.0, "tau must be positive");
    let ring = (tau / spec.cell_side).ceil() as i64;
    let mut result = BTreeSet::new();
    let mut seen = HashSet::new();
    let mut line = Vec::new();
    for s in t.segments() {
        let (a, b) = (s.o.loc, s.d.loc);
        line.clear();
        seen.clear();
        line_cells(spec, a, b, &mut line);
        for &c in &line {
            for ix in c.ix - ring..=c.ix + ring {
                for iy in c.iy - ring..=c.iy + ring {
                    let g = GridId::new(ix, iy);
                    if result.contains(&g) || !seen.insert(g) {
                        continue;
                    }
                    if segment_rect_distance(a, b, &spec.rect(g)) <= tau {
                        result.insert(g);
                    }
                }
            }
        }
    }
    result
}
