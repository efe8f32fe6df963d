//! Bounded planar Laplace perturbation.

use rand::Rng;

use super::{laplace::laplace_cdf_inverse, NoiseBound};
use crate::geometry::Coord;

/// Which branch produced the noise radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseBranch {
    Laplace,
    UniformDisc,
}

/// The three uniform draws one perturbation consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BplDraw {
    /// Selects the branch and, on the Laplace branch, the radius quantile.
    pub p: f64,
    /// Uniform in `[0, 1]`; the squared radius fraction on the disc branch.
    pub disc: f64,
    /// Noise angle in radians.
    pub theta: f64,
}

impl BplDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            p: rng.gen::<f64>(),
            disc: rng.gen::<f64>(),
            theta: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }
}

/// Deterministic core of the mechanism: applies the noise described by `draw`.
pub fn perturb_with(
    x: Coord,
    bound: &NoiseBound,
    epsilon: f64,
    draw: BplDraw,
) -> (Coord, f64, NoiseBranch) {
    let (r, branch) = if draw.p <= 1.0 - bound.delta_mass {
        let r = laplace_cdf_inverse(epsilon, draw.p.min(1.0 - bound.delta_mass))
            .unwrap_or(bound.radius);
        // rounding in the inverse must not leave the noise circle
        (r.min(bound.radius), NoiseBranch::Laplace)
    } else {
        (bound.radius * draw.disc.sqrt(), NoiseBranch::UniformDisc)
    };
    let out = Coord::new(x.x + r * draw.theta.cos(), x.y + r * draw.theta.sin());
    (out, r, branch)
}

/// Perturbs `x` with noise whose radius never exceeds `bound.radius`.
pub fn bpl_perturb<R: Rng + ?Sized>(
    x: Coord,
    bound: &NoiseBound,
    epsilon: f64,
    rng: &mut R,
) -> Coord {
    perturb_with(x, bound, epsilon, BplDraw::sample(rng)).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::{solve_noise_bound, PrivacyParams};

    #[test]
    fn zero_quantile_leaves_location_unchanged() {
        let b = solve_noise_bound(&PrivacyParams::new(0.01, 1e-5, 0.6, 0.81).unwrap()).unwrap();
        let x = Coord::new(12.0, -4.0);
        let draw = BplDraw {
            p: 0.0,
            disc: 0.7,
            theta: 1.0,
        };
        let (out, r, branch) = perturb_with(x, &b, 0.01, draw);
        assert_eq!(r, 0.0);
        assert_eq!(branch, NoiseBranch::Laplace);
        assert_eq!(out, x);
    }

    #[test]
    fn disc_branch_reaches_the_boundary() {
        let b = solve_noise_bound(&PrivacyParams::new(0.01, 1e-5, 0.6, 0.81).unwrap()).unwrap();
        let draw = BplDraw {
            p: 1.0,
            disc: 1.0,
            theta: 0.0,
        };
        let (out, r, branch) = perturb_with(Coord::default(), &b, 0.01, draw);
        assert_eq!(branch, NoiseBranch::UniformDisc);
        assert_eq!(r, b.radius);
        assert!((out.x - b.radius).abs() < 1e-9);
    }
}
