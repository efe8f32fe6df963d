//! Trend statistics for sweep results.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided p-value from the t approximation.
    pub p_value: f64,
}

/// Spearman rank correlation; `None` with fewer than three pairs.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<Correlation> {
    assert_eq!(x.len(), y.len(), "paired samples");
    let n = x.len();
    if n < 3 {
        return None;
    }
    let rho = pearson(&ranks(x), &ranks(y));
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Some(Correlation { rho, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    assert_eq!(x.len(), y.len(), "paired samples");
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Index of the minimum of `ys` when it sits strictly inside the sequence
/// and both ends are strictly above it.
pub fn interior_minimum(ys: &[f64]) -> Option<usize> {
    if ys.len() < 3 {
        return None;
    }
    let (best, &min) = ys.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let ok = best > 0 && best + 1 < ys.len() && ys[0] > min && ys[ys.len() - 1] > min;
    ok.then_some(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_known_values() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let c = spearman(&x, &[5.0, 6.0, 7.0, 8.0, 7.5]).unwrap();
        assert!((c.rho - 0.9).abs() < 1e-12);
        // t = 0.9*sqrt(3/0.19) = 3.576, two-sided p with 3 df
        assert!((c.p_value - 0.0374).abs() < 1e-3, "{}", c.p_value);
        let d = spearman(&x, &[9.0, 7.0, 5.0, 3.0, 1.0]).unwrap();
        assert_eq!(d.rho, -1.0);
        assert_eq!(d.p_value, 0.0);
        assert!(spearman(&x[..2], &x[..2]).is_none());
    }

    #[test]
    fn linear_fit_exact_and_noisy() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let f = linear_fit(&x, &[3.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        // residuals (-1/3, 2/3, -1/3) against a total sum of squares of 8/3
        let g = linear_fit(&[0.0, 1.0, 2.0], &[0.0, 2.0, 2.0]).unwrap();
        assert!((g.slope - 1.0).abs() < 1e-12);
        assert!((g.r_squared - 0.75).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn interior_minimum_detects_u_shape() {
        assert_eq!(interior_minimum(&[5.0, 3.0, 2.0, 4.0]), Some(2));
        assert_eq!(interior_minimum(&[1.0, 3.0, 4.0]), None);
        assert_eq!(interior_minimum(&[5.0, 3.0, 1.0]), None);
    }
}
