//! Location privacy: planar Laplace numerics, the bounded planar Laplace
//! mechanism, and grid-size selection.

mod bpl;
mod laplace;

pub use bpl::{bpl_perturb, perturb_with, BplDraw, NoiseBranch};
pub use laplace::{lambert_w_m1, laplace_cdf, laplace_cdf_inverse};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest accepted target success probability; keeps the cell side at least
/// three noise radii.
pub const MIN_SUCCESS_PROBABILITY: f64 = 0.7;

const DELTA_LO: f64 = 1e-15;
const DELTA_HI: f64 = 1.0 - 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrivacyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid privacy parameters: {0}")]
    InvalidParams(String),
    #[error("no tail mass in (0, 1) solves the noise bound for epsilon={epsilon}, delta={delta}")]
    NoFixedPoint { epsilon: f64, delta: f64 },
}

/// Client-side privacy configuration.
///
/// `epsilon` is per meter, `delta` per square meter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Fraction of query points to publish.
    pub rho: f64,
    /// Target probability that a perturbed location stays in its cell.
    pub p0: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, rho: f64, p0: f64) -> Result<Self, PrivacyError> {
        let p = Self {
            epsilon,
            delta,
            rho,
            p0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PrivacyError> {
        let bad = |m: String| Err(PrivacyError::InvalidParams(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must be in (0, 1), got {}", self.delta));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho must be in (0, 1], got {}", self.rho));
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return bad(format!("p0 must be in (0, 1), got {}", self.p0));
        }
        if self.p0 < MIN_SUCCESS_PROBABILITY {
            return bad(format!(
                "p0={} is below {MIN_SUCCESS_PROBABILITY}: the derived cell side would be \
                 smaller than three noise radii, a regime the grid-size bound does not cover",
                self.p0
            ));
        }
        Ok(())
    }
}

/// Solved noise bound: tail mass, noise-circle radius, and cell side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBound {
    /// Probability mass moved from the Laplace tail into the uniform disc.
    pub delta_mass: f64,
    /// Radius of the noise circle in meters.
    pub radius: f64,
    /// Grid cell side length in meters.
    pub cell_side: f64,
}

/// Cell side that keeps the in-cell success probability at or above `p0`
/// for noise bounded by `radius`.
pub fn cell_side_for(radius: f64, p0: f64) -> f64 {
    radius / (2.0 * (1.0 - p0.sqrt()))
}

fn radius_for_mass(epsilon: f64, mass: f64) -> f64 {
    // 1 - mass is in (0, 1) throughout the bracket
    laplace::laplace_cdf_inverse(epsilon, 1.0 - mass).expect("bracket keeps p in [0,1)")
}

/// `g(D) = D - delta*pi*C^{-1}(1 - D)^2`; increasing in `D`.
fn residual(epsilon: f64, delta: f64, mass: f64) -> f64 {
    let r = radius_for_mass(epsilon, mass);
    mass - delta * std::f64::consts::PI * r * r
}

/// Finds the tail mass `D` with `D = delta*pi*R^2`, `R = C^{-1}(1 - D)`, then
/// derives the cell side from `p0`.
pub fn solve_noise_bound(params: &PrivacyParams) -> Result<NoiseBound, PrivacyError> {
    params.validate()?;
    let (eps, delta) = (params.epsilon, params.delta);
    let mut lo = DELTA_LO;
    let mut hi = DELTA_HI;
    let (g_lo, g_hi) = (residual(eps, delta, lo), residual(eps, delta, hi));
    if !(g_lo < 0.0 && g_hi > 0.0) {
        log::warn!(
            "noise-bound bracket does not change sign (g({lo:e})={g_lo:e}, g({hi})={g_hi:e})"
        );
        return Err(PrivacyError::NoFixedPoint {
            epsilon: eps,
            delta,
        });
    }
    for _ in 0..4000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(eps, delta, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mass = if residual(eps, delta, lo).abs() <= residual(eps, delta, hi).abs() {
        lo
    } else {
        hi
    };
    let radius = radius_for_mass(eps, mass);
    let cell_side = cell_side_for(radius, params.p0);
    debug_assert!(cell_side >= 3.0 * radius * (1.0 - 1e-12));
    Ok(NoiseBound {
        delta_mass: mass,
        radius,
        cell_side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eps: f64, delta: f64) -> PrivacyParams {
        PrivacyParams::new(eps, delta, 0.6, 0.81).unwrap()
    }

    #[test]
    fn fixed_point_residual_on_budget_grid() {
        for eps in [0.01, 0.02, 0.03, 0.04, 0.05] {
            let b = solve_noise_bound(&params(eps, 1e-5)).unwrap();
            let implied = 1e-5 * std::f64::consts::PI * b.radius * b.radius;
            assert!(
                (b.delta_mass - implied).abs() <= 1e-10 * b.delta_mass,
                "eps={eps}: {b:?} implied={implied}"
            );
            let tail = 1.0 - laplace_cdf(eps, b.radius).unwrap();
            assert!((tail - b.delta_mass).abs() <= 1e-12);
        }
    }

    #[test]
    fn smaller_delta_gives_less_mass_and_larger_radius() {
        let a = solve_noise_bound(&params(0.01, 1e-5)).unwrap();
        let b = solve_noise_bound(&params(0.01, 1e-7)).unwrap();
        assert!(b.delta_mass < a.delta_mass);
        assert!(b.radius > a.radius);
    }

    #[test]
    fn cell_side_formula() {
        let b = solve_noise_bound(&params(0.01, 1e-5)).unwrap();
        assert!((b.cell_side - 5.0 * b.radius).abs() <= 1e-9 * b.radius);
        assert!((cell_side_for(10.0, 0.81) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn cell_side_at_least_three_radii() {
        for p0 in [0.7, 0.75, 0.81, 0.9, 0.99] {
            let p = PrivacyParams::new(0.02, 1e-5, 1.0, p0).unwrap();
            let b = solve_noise_bound(&p).unwrap();
            assert!(b.cell_side >= 3.0 * b.radius, "p0={p0}");
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(PrivacyParams::new(0.0, 1e-5, 0.6, 0.81).is_err());
        assert!(PrivacyParams::new(0.01, 1.0, 0.6, 0.81).is_err());
        assert!(PrivacyParams::new(0.01, 1e-5, 0.0, 0.81).is_err());
        assert!(PrivacyParams::new(0.01, 1e-5, 0.6, 0.5).is_err());
        assert!(PrivacyParams::new(0.01, 1e-5, 0.6, 1.0).is_err());
    }
}
