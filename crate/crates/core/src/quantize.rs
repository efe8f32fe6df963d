//! Fixed-point encoding shared by secure verification and its plaintext oracle.
//!
//! Coordinates are carried as integer millimeters and timestamps as integer
//! milliseconds. The distance test is evaluated exactly on these integers, so a
//! secure evaluator and the plaintext reference agree bit for bit.

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Segment, Trajectory};

/// Fixed-point units per meter / per second.
pub const SCALE: f64 = 1e3;

/// Largest magnitude accepted before encoding (|v| * SCALE must stay below 2^62).
const LIMIT: f64 = 4.611_686_018_427_388e18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("value {0} cannot be encoded in fixed point")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QPoint {
    pub ts: i64,
    pub x: i64,
    pub y: i64,
}

impl QPoint {
    pub const ENCODED_LEN: usize = 24;

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.ts.to_le_bytes());
        out.extend_from_slice(&self.x.to_le_bytes());
        out.extend_from_slice(&self.y.to_le_bytes());
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < Self::ENCODED_LEN {
            return None;
        }
        let word = |i: usize| i64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
        Some(Self {
            ts: word(0),
            x: word(1),
            y: word(2),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QSegment {
    pub o: QPoint,
    pub d: QPoint,
}

pub fn fixed(v: f64) -> Result<i64, QuantizeError> {
    let s = (v * SCALE).round();
    if !s.is_finite() || s.abs() >= LIMIT {
        return Err(QuantizeError::OutOfRange(v));
    }
    Ok(s as i64)
}

/// Thresholds round up, so quantization never makes a threshold stricter.
pub fn fixed_threshold(tau: f64) -> Result<i64, QuantizeError> {
    let s = (tau * SCALE).ceil();
    if !s.is_finite() || s.abs() >= LIMIT || s < 0.0 {
        return Err(QuantizeError::OutOfRange(tau));
    }
    Ok(s as i64)
}

pub fn quantize_point(p: &Point) -> Result<QPoint, QuantizeError> {
    Ok(QPoint {
        ts: fixed(p.ts)?,
        x: fixed(p.loc.x)?,
        y: fixed(p.loc.y)?,
    })
}

pub fn quantize_points(points: &[Point]) -> Result<Vec<QPoint>, QuantizeError> {
    points.iter().map(quantize_point).collect()
}

pub fn quantize_segment(s: &Segment) -> Result<QSegment, QuantizeError> {
    Ok(QSegment {
        o: quantize_point(&s.o)?,
        d: quantize_point(&s.d)?,
    })
}

pub fn quantize_segments(segs: &[Segment]) -> Result<Vec<QSegment>, QuantizeError> {
    segs.iter().map(quantize_segment).collect()
}

/// `a^2 + b^2 <= c^2` for arbitrary `i128` operands, exact.
pub fn sum_squares_le(a: i128, b: i128, c: i128) -> bool {
    let small = |v: i128| v.unsigned_abs() < (1u128 << 62);
    if small(a) && small(b) && small(c) {
        let lhs = a.unsigned_abs().pow(2) + b.unsigned_abs().pow(2);
        return lhs <= c.unsigned_abs().pow(2);
    }
    let (a, b, c) = (BigInt::from(a), BigInt::from(b), BigInt::from(c));
    &a * &a + &b * &b <= &c * &c
}

/// Plaintext reference for the secure predicate: every query point must be
/// within `tau` of some segment of `t` covering its timestamp, evaluated on
/// the fixed-point encodings.
pub fn matches_exact(t: &Trajectory, query: &Trajectory, tau: f64) -> Result<bool, QuantizeError> {
    let segs = quantize_segments(&t.segments())?;
    let q = quantize_points(&query.points)?;
    let tau = fixed_threshold(tau)?;
    Ok(points_match_segments(&q, &segs, tau))
}

pub fn points_match_segments(query: &[QPoint], segs: &[QSegment], tau: i64) -> bool {
    query.iter().all(|q| segs.iter().any(|s| point_within(q, s, tau)))
}

/// `q.ts` lies in the segment's time window and the segment's location at
/// `q.ts` is within `tau` of `q`.
pub fn point_within(q: &QPoint, s: &QSegment, tau: i64) -> bool {
    if q.ts < s.o.ts || q.ts > s.d.ts {
        return false;
    }
    let span = (s.d.ts - s.o.ts) as i128;
    if span == 0 {
        return sum_squares_le((q.x - s.o.x) as i128, (q.y - s.o.y) as i128, tau as i128);
    }
    // scaled by span to stay in integers: span * (q - o) - (q.ts - o.ts) * (d - o)
    let el = (q.ts - s.o.ts) as i128;
    let ex = span * (q.x - s.o.x) as i128 - el * (s.d.x - s.o.x) as i128;
    let ey = span * (q.y - s.o.y) as i128 - el * (s.d.y - s.o.y) as i128;
    sum_squares_le(ex, ey, span * tau as i128)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::matches;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encodes_little_endian() {
        let p = QPoint { ts: 1, x: -2, y: 3 };
        let mut buf = Vec::new();
        p.encode(&mut buf);
        assert_eq!(buf.len(), QPoint::ENCODED_LEN);
        assert_eq!(&buf[..8], &1i64.to_le_bytes());
        assert_eq!(QPoint::decode(&buf), Some(p));
    }

    #[test]
    fn threshold_rounds_up() {
        assert_eq!(fixed_threshold(1.5).unwrap(), 1500);
        assert_eq!(fixed_threshold(1.0001).unwrap(), 1001);
        assert!(fixed(f64::NAN).is_err());
        assert!(fixed(1e300).is_err());
    }

    #[test]
    fn big_operands_fall_back_to_bigint() {
        let big = 1i128 << 100;
        assert!(sum_squares_le(big, 0, big));
        assert!(!sum_squares_le(big, 1, big));
        assert!(sum_squares_le(3, 4, 5));
        assert!(!sum_squares_le(3, 4, 4));
    }

    #[test]
    fn agrees_with_float_predicate_on_snapped_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pos = 0;
        for _ in 0..2000 {
            let n = rng.gen_range(1..8);
            let mut ts = rng.gen_range(0.0..1e5);
            let (mut x, mut y) = (rng.gen_range(-1e4..1e4), rng.gen_range(-1e4..1e4));
            let mut pts = Vec::new();
            for _ in 0..n {
                pts.push(Point::new(ts, x, y));
                ts += rng.gen_range(1.0..60.0);
                x += rng.gen_range(-300.0..300.0);
                y += rng.gen_range(-300.0..300.0);
            }
            let t = Trajectory::new("t", pts).unwrap().snapped();
            let mut qp: Vec<Point> = (0..rng.gen_range(1..4))
                .map(|_| {
                    let ts = rng.gen_range(t.start_ts()..=t.end_ts());
                    let c = crate::geometry::locate(&t, ts).unwrap();
                    Point::new(ts, c.x + rng.gen_range(-60.0..60.0), c.y + rng.gen_range(-60.0..60.0))
                })
                .collect();
            qp.sort_by(|a, b| a.ts.total_cmp(&b.ts));
            let q = Trajectory::new("q", qp).unwrap().snapped();
            let tau = 50.0;
            let exact = matches_exact(&t, &q, tau).unwrap();
            assert_eq!(exact, matches(&t, &q, tau));
            pos += exact as usize;
        }
        assert!(pos > 100);
    }
}
