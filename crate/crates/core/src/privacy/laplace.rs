//! Radial distribution of planar Laplace noise.

use super::PrivacyError;

const TOL: f64 = 1e-13;

/// Lower branch `W_{-1}` of the Lambert W function on `[-1/e, 0)`.
///
/// Halley iteration from the branch-point series near `-1/e` and the
/// logarithmic asymptote near zero.
pub fn lambert_w_m1(x: f64) -> Result<f64, PrivacyError> {
    let branch = -(-1f64).exp();
    if !(x >= branch - 1e-15 && x < 0.0) {
        return Err(PrivacyError::Domain(format!(
            "W_-1 is defined on [-1/e, 0), got {x}"
        )));
    }
    // 1 + e*x, clamped at the branch point
    let offset = (1.0 + std::f64::consts::E * x).max(0.0);
    Ok(w_m1_halley(x, offset))
}

/// `offset` is `1 + e*x`, passed separately so callers that know it exactly
/// avoid the cancellation near the branch point.
fn w_m1_halley(x: f64, offset: f64) -> f64 {
    if offset == 0.0 {
        return -1.0;
    }
    let mut w = if offset < 0.6 {
        let p = -(2.0 * offset).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = (w - step).min(-1.0);
        let done = (next - w).abs() <= TOL * w.abs();
        w = next;
        if done {
            break;
        }
    }
    w
}

/// `C_eps(r) = 1 - (1 + eps*r) e^{-eps*r}`, the probability that planar
/// Laplace noise has radius at most `r`.
pub fn laplace_cdf(epsilon: f64, r: f64) -> Result<f64, PrivacyError> {
    if !(epsilon > 0.0) {
        return Err(PrivacyError::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(r >= 0.0) {
        return Err(PrivacyError::Domain(format!("radius must be >= 0, got {r}")));
    }
    let er = epsilon * r;
    // -expm1(-er) - er*e^{-er} keeps precision for small radii
    Ok(-(-er).exp_m1() - er * (-er).exp())
}

/// Inverse of [`laplace_cdf`] in `r`: `-(W_{-1}((p-1)/e) + 1) / eps`.
pub fn laplace_cdf_inverse(epsilon: f64, p: f64) -> Result<f64, PrivacyError> {
    if !(epsilon > 0.0) {
        return Err(PrivacyError::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(PrivacyError::Domain(format!("probability must be in [0, 1), got {p}")));
    }
    let x = (p - 1.0) / std::f64::consts::E;
    let w = w_m1_halley(x, p);
    Ok((-(w + 1.0) / epsilon).max(0.0))
}
