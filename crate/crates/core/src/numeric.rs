//! Small numeric helpers shared by every module: deterministic summation,
//! log-log least squares, medians.

use serde::{Deserialize, Serialize};

use crate::error::{DeclabError, Result};

const PAIRWISE_BASE: usize = 64;

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so results are bitwise reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BASE {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise summation of `f(i)` for `i in 0..n` without materializing the terms.
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(n: usize, f: &F) -> f64 {
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= PAIRWISE_BASE {
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            return s;
        }
        let mid = lo + (hi - lo) / 2;
        rec(lo, mid, f) + rec(mid, hi, f)
    }
    rec(0, n, f)
}

/// Median of a non-empty sample (mean of the two central values for even length).
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty sample");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in median"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ordinary least squares of log2(ratio) against log2(param).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log2 units.
    pub residual: f64,
}

impl ExponentFit {
    /// Fit from raw (param, ratio) pairs; both must be positive.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.len() < 4 {
            return Err(DeclabError::TooFewPoints(pairs.len()));
        }
        let mut pts = Vec::with_capacity(pairs.len());
        for &(x, y) in pairs {
            if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
                return Err(DeclabError::InvalidParameter(format!(
                    "log-log fit needs positive finite values, got ({x}, {y})"
                )));
            }
            pts.push((x.log2(), y.log2()));
        }
        Ok(Self::from_log_points(pts))
    }

    /// Fit from points already in log2 coordinates. Caller guarantees >= 2 distinct x.
    pub fn from_log_points(points: Vec<(f64, f64)>) -> Self {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for &(x, y) in &points {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let intercept = my - slope * mx;
        let ss: f64 = points
            .iter()
            .map(|&(x, y)| {
                let r = y - (intercept + slope * x);
                r * r
            })
            .sum();
        ExponentFit {
            points,
            slope,
            intercept,
            residual: (ss / n).sqrt(),
        }
    }
}

/// Smallest power of two that is >= n.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                z
            } else {
                p1
            };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
        assert_eq!(pairwise_sum_by(1000, &|i| i as f64), 499500.0);
    }

    #[test]
    fn exact_power_law_slope() {
        let pairs: Vec<(f64, f64)> = [256.0f64, 1024.0, 4096.0, 16384.0]
            .iter()
            .map(|&n| (n, 7.0 * n.powf(0.5)))
            .collect();
        let fit = ExponentFit::from_pairs(&pairs).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-9);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn constant_ratio_has_zero_slope() {
        let pairs: Vec<(f64, f64)> = (1..=5).map(|i| ((1u64 << i) as f64, 3.0)).collect();
        let fit = ExponentFit::from_pairs(&pairs).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_three_points() {
        let pairs = [(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)];
        assert_eq!(
            ExponentFit::from_pairs(&pairs),
            Err(DeclabError::TooFewPoints(3))
        );
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let (x3, _) = gauss_legendre(3);
        assert!((x3[2] - 0.6f64.sqrt()).abs() < 1e-15 && x3[1].abs() < 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
