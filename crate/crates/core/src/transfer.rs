//! Transference of short Dirichlet sums to exponential sums on a convex
//! planar curve: the split t = t₁ + t₂ with t₁ ∈ 2πNℤ, the Abel remainder,
//! the C² curve through the points ((n−1)/N^{1/2}, e_n N), and the weighted
//! 2D moment that the parabola small-cap bound controls.
//!
//! Throughout, a_n = (n−1)/N + e_n. On t₁ ∈ 2πNℤ the linear part of the
//! phase is invisible, so only e_n feels t₁.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{DeclabError, Result};
use crate::field::{lp_norm, AtomicSum, Region};
use crate::intervals::{Interval, IntervalSet};
use crate::kernels::plateau;
use crate::numeric::{gauss_legendre, next_pow2, pairwise_sum, ExponentFit};
use crate::seqgen::GenDirichletSeq;

/// Default interpolation slack: |g(x_n) − e_n N| ≤ c/N.
pub const DEFAULT_LIFT_C: f64 = 0.25;
/// Cap on the number of 2D quadrature nodes.
pub const MAX_2D_POINTS: usize = 1 << 26;
/// Decay order of the ball weight W_{B_R}.
pub const WEIGHT_ORDER: u32 = 100;
const WEIGHT_TAIL: f64 = 1e-12;
const MOMENT_NODES: usize = 64;
// Phasor recurrences are reseeded from sin_cos every this many steps.
const RESEED: usize = 256;

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(DeclabError::InvalidParameter(format!(
            "p = {p} outside [1, ∞)"
        )))
    }
}

fn check_coeffs(seq: &GenDirichletSeq, b: &[Complex64]) -> Result<()> {
    if b.len() != seq.len() {
        return Err(DeclabError::InvalidParameter(format!(
            "{} coefficients for {} terms",
            b.len(),
            seq.len()
        )));
    }
    if seq.is_empty() {
        return Err(DeclabError::TooShort { len: 0 });
    }
    Ok(())
}

/// e_n = a_n − (n−1)/N.
pub fn quadratic_parts(seq: &GenDirichletSeq) -> Vec<f64> {
    let nf = seq.n_f64();
    seq.terms
        .iter()
        .enumerate()
        .map(|(i, a)| a - i as f64 / nf)
        .collect()
}

/// b ≡ 1.
pub fn unit_coeffs(len: usize) -> Vec<Complex64> {
    vec![Complex64::new(1.0, 0.0); len]
}

/// Independent ±1 signs, deterministic per seed.
pub fn random_signs(len: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| Complex64::new(if rng.gen_bool(0.5) { 1.0 } else { -1.0 }, 0.0))
        .collect()
}

/// ‖b‖_{ℓ^p}.
pub fn lp_coeff_norm(b: &[Complex64], p: f64) -> f64 {
    pairwise_sum(&b.iter().map(|z| z.norm().powf(p)).collect::<Vec<_>>()).powf(1.0 / p)
}

/// N^{1/2} + T^{1/p} N^{1/4−1/(2p)}, the short-sum bound without N^ε.
pub fn short_sum_bound(n: f64, t: f64, p: f64) -> f64 {
    n.sqrt() + t.powf(1.0 / p) * n.powf(0.25 - 0.5 / p)
}

/// R^{α(1/2−1/p)} + R^{α(1−1/p)−(1+α)/p}, the small-cap factor for
/// R^α caps of size R^{−α} × R^{−1} on a convex curve.
pub fn parabola_small_cap_bound(r: f64, alpha: f64, p: f64) -> f64 {
    r.powf(alpha * (0.5 - 1.0 / p)) + r.powf(alpha * (1.0 - 1.0 / p) - (1.0 + alpha) / p)
}

// ---------------------------------------------------------------------------
// Curve lift
// ---------------------------------------------------------------------------

/// The C² convex curve through ((n−1)/N^{1/2}, e_n N).
///
/// g₀ is the C¹ piecewise quadratic with g₀′(0) = 0 interpolating the nodes;
/// on piece k it is y_k + s_k(x − x_k) + c_k(x − x_k)². Outside the node
/// range the end pieces are extended. g = g₀ ∗ φ with φ an L¹-normalized
/// plateau bump of support radius `width` = c′/N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveLift {
    #[serde(rename = "N")]
    pub n: u64,
    pub e: Vec<f64>,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub curvatures: Vec<f64>,
    pub c: f64,
    pub width: f64,
    /// max_n |g(x_n) − e_n N|.
    pub defect: f64,
    /// (min, max) of second difference quotients of g with step N^{-1/2}.
    pub curvature_range: (f64, f64),
}

impl CurveLift {
    fn piece(&self, x: f64) -> usize {
        let k = self.nodes.partition_point(|&t| t <= x);
        k.saturating_sub(1).min(self.curvatures.len() - 1)
    }

    /// g₀(x).
    pub fn g0(&self, x: f64) -> f64 {
        let k = self.piece(x);
        let d = x - self.nodes[k];
        self.values[k] + self.slopes[k] * d + self.curvatures[k] * d * d
    }

    /// g(x) = ∫ g₀(y) φ(x − y) dy, split at the breakpoints of g₀ so that
    /// Gauss–Legendre sees a smooth integrand on every subrange.
    pub fn g(&self, x: f64) -> f64 {
        let r = self.width;
        if r == 0.0 {
            return self.g0(x);
        }
        let (gx, gw) = gl_nodes();
        let mut cuts = vec![x - r];
        let inner = &self.nodes[1..self.nodes.len() - 1];
        let lo = inner.partition_point(|&t| t <= x - r);
        let hi = inner.partition_point(|&t| t < x + r);
        cuts.extend_from_slice(&inner[lo..hi]);
        cuts.push(x + r);
        let mut num = 0.0;
        let mut den = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (u, wt) in gx.iter().zip(gw) {
                let y = mid + half * u;
                let phi = plateau(2.0 * (x - y) / r) * wt * half;
                num += self.g0(y) * phi;
                den += phi;
            }
        }
        num / den
    }

    /// e_n N² / (n−1)² for n ≥ 3 (e_2 = 0 by normalization).
    pub fn growth_ratios(&self) -> Vec<f64> {
        let nf = self.n as f64;
        self.e
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, e)| e * nf * nf / (i * i) as f64)
            .collect()
    }
}

fn gl_nodes() -> &'static (Vec<f64>, Vec<f64>) {
    static T: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();
    T.get_or_init(|| gauss_legendre(MOMENT_NODES))
}

/// Build the lift of a sequence with a_1 = 0 and a_2 − a_1 = 1/N.
pub fn build_lift(seq: &GenDirichletSeq, c: f64) -> Result<CurveLift> {
    if seq.len() < 2 {
        return Err(DeclabError::TooShort { len: seq.len() });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(DeclabError::InvalidParameter(format!(
            "lift constant c = {c} must be positive"
        )));
    }
    let nf = seq.n_f64();
    let gap = seq.terms[1] - seq.terms[0];
    if seq.terms[0].abs() > 1e-15 || (gap * nf - 1.0).abs() > 1e-12 {
        return Err(DeclabError::InvalidParameter(format!(
            "sequence not normalized: a_1 = {}, N(a_2 − a_1) = {}",
            seq.terms[0],
            gap * nf
        )));
    }
    let e = quadratic_parts(seq);
    let h = 1.0 / nf.sqrt();
    let k = seq.len();
    let nodes: Vec<f64> = (0..k).map(|i| i as f64 * h).collect();
    let values: Vec<f64> = e.iter().map(|x| x * nf).collect();
    let mut slopes = vec![0.0; k];
    let mut curvatures = vec![0.0; k - 1];
    for i in 0..k - 1 {
        curvatures[i] = (values[i + 1] - values[i] - slopes[i] * h) / (h * h);
        slopes[i + 1] = slopes[i] + 2.0 * curvatures[i] * h;
    }
    let max_slope = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let width = c / (max_slope + 1.0) / nf;
    let mut lift = CurveLift {
        n: seq.param_n,
        e,
        nodes,
        values,
        slopes,
        curvatures,
        c,
        width,
        defect: 0.0,
        curvature_range: (0.0, 0.0),
    };
    lift.defect = (0..k)
        .map(|i| (lift.g(lift.nodes[i]) - lift.values[i]).abs())
        .fold(0.0, f64::max);
    // Quotients at the node spacing, sampled every half spacing.
    let end = lift.nodes[k - 1];
    let steps = ((2.0 * end / h).floor() as usize).max(2);
    let quotients: Vec<f64> = (2..=steps.saturating_sub(2).max(2))
        .map(|j| {
            let x = 0.5 * j as f64 * h;
            (lift.g(x + h) - 2.0 * lift.g(x) + lift.g(x - h)) / (h * h)
        })
        .collect();
    lift.curvature_range = quotients
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &q| {
            (lo.min(q), hi.max(q))
        });
    Ok(lift)
}

// ---------------------------------------------------------------------------
// Abel decomposition
// ---------------------------------------------------------------------------

/// T rounded up to a multiple of 2πN, and the number of periods.
pub fn pad_to_period(n: f64, t: f64) -> (f64, usize) {
    let period = 2.0 * PI * n;
    let k = ((t / period) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (k as f64 * period, k)
}

/// ∫_0^T |Σ b_n e^{i t a_n}|^p dt and its quadrature error estimate.
pub fn direct_moment(seq: &GenDirichletSeq, b: &[Complex64], t: f64, p: f64) -> Result<(f64, f64)> {
    check_coeffs(seq, b)?;
    check_p(p)?;
    let atoms = seq.terms.iter().zip(b).map(|(&a, &c)| (a, c)).collect();
    let f = AtomicSum::new(atoms, None)?;
    let rep = lp_norm(&f, p, &Region::Interval(Interval::new(0.0, t)), false)?;
    let err = if rep.value > 0.0 {
        p * rep.integral * rep.error / rep.value
    } else {
        0.0
    };
    Ok((rep.integral, err))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbelSplit {
    #[serde(rename = "N")]
    pub n: u64,
    pub p: f64,
    pub t_requested: f64,
    /// T padded up to a multiple of 2πN.
    pub t: f64,
    pub periods: usize,
    /// Σ_{t₁} ∫_0^{2πN} |Σ b_n e^{i(t₁e_n + t₂(n−1)/N)}|^p dt₂.
    pub a: f64,
    /// Σ_{t₁} ∫_0^{2πN} |K^{-1} ∫_0^K |S_u| du|^p dt₂, S_u the partial sums.
    pub b: f64,
    /// ∫_0^T |Σ b_n e^{i t a_n}|^p dt.
    pub direct: f64,
    pub direct_error: f64,
    /// K · 2πN · max|e_{n+1} − e_n|: the Abel remainder is at most this
    /// times the averaged partial sum.
    pub abel_constant: f64,
}

impl AbelSplit {
    /// direct^{1/p} / (A^{1/p} + B^{1/p}).
    pub fn triangle_ratio(&self) -> f64 {
        let q = 1.0 / self.p;
        let den = self.a.powf(q) + self.b.powf(q);
        if den > 0.0 {
            self.direct.powf(q) / den
        } else {
            0.0
        }
    }

    /// A^{1/p} + C_abel B^{1/p}, which bounds direct^{1/p} by Minkowski.
    pub fn abel_bound(&self) -> f64 {
        let q = 1.0 / self.p;
        self.a.powf(q) + self.abel_constant * self.b.powf(q)
    }
}

/// Split the L^p([0, T]) moment along t = t₁ + t₂ and bound the e^{it₂e_n}
/// twist by Abel summation. N ≤ T ≤ N²; T is padded to a multiple of 2πN.
pub fn abel_decompose(seq: &GenDirichletSeq, b: &[Complex64], t: f64, p: f64) -> Result<AbelSplit> {
    check_coeffs(seq, b)?;
    check_p(p)?;
    let nf = seq.n_f64();
    if !(t >= nf && t <= nf * nf) {
        return Err(DeclabError::InvalidParameter(format!(
            "T = {t} outside [N, N²] for N = {nf}"
        )));
    }
    let (t_pad, periods) = pad_to_period(nf, t);
    let e = quadratic_parts(seq);
    let k = e.len();
    let jn = next_pow2((8.0 * p.ceil() * k as f64) as usize).max(64);
    let twiddle: Vec<Complex64> = (0..jn)
        .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 / jn as f64))
        .collect();
    let fft = FftPlanner::new().plan_fft_inverse(jn);
    let h2 = 2.0 * PI * nf / jn as f64;
    let per_period: Vec<(f64, f64)> = (0..periods)
        .into_par_iter()
        .map(|q| {
            let t1 = 2.0 * PI * nf * q as f64;
            let c: Vec<Complex64> = b
                .iter()
                .zip(&e)
                .map(|(bn, en)| bn * Complex64::from_polar(1.0, t1 * en))
                .collect();
            let mut full = vec![Complex64::new(0.0, 0.0); jn];
            full[..k].copy_from_slice(&c);
            fft.process(&mut full);
            let a_vals: Vec<f64> = full.iter().map(|z| z.norm().powf(p)).collect();
            // Partial sums S_1..S_{K−1} at every t₂ node; S_0 = 0 contributes nothing.
            let mut s = vec![Complex64::new(0.0, 0.0); jn];
            let mut acc = vec![0.0; jn];
            for (n, cn) in c.iter().enumerate().take(k.saturating_sub(1)) {
                for (j, (sj, aj)) in s.iter_mut().zip(acc.iter_mut()).enumerate() {
                    *sj += cn * twiddle[(j * n) % jn];
                    *aj += sj.norm();
                }
            }
            let b_vals: Vec<f64> = acc.iter().map(|v| (v / k as f64).powf(p)).collect();
            (h2 * pairwise_sum(&a_vals), h2 * pairwise_sum(&b_vals))
        })
        .collect();
    let a = pairwise_sum(&per_period.iter().map(|x| x.0).collect::<Vec<_>>());
    let bb = pairwise_sum(&per_period.iter().map(|x| x.1).collect::<Vec<_>>());
    let (direct, direct_error) = direct_moment(seq, b, t_pad, p)?;
    let max_de = e
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    Ok(AbelSplit {
        n: seq.param_n,
        p,
        t_requested: t,
        t: t_pad,
        periods,
        a,
        b: bb,
        direct,
        direct_error,
        abel_constant: k as f64 * 2.0 * PI * nf * max_de,
    })
}

// ---------------------------------------------------------------------------
// 2D curve sum
// ---------------------------------------------------------------------------

/// ∫_{ℝ²} W_{B_R} = πR²(1 + 2/(k−2)) for W = (1 + d(x, B_R)/R)^{−k}.
pub fn ball_weight_mass(r: f64) -> f64 {
    PI * r * r * (1.0 + 2.0 / (WEIGHT_ORDER as f64 - 2.0))
}

fn ball_weight(r: f64, dist: f64) -> f64 {
    let u = (dist - r).max(0.0) / r;
    (-(WEIGHT_ORDER as f64) * u.ln_1p()).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSum2d {
    pub radius: f64,
    pub p: f64,
    /// ∫∫ |Σ b_n e^{i(t₁e_nN + t₂(n−1)/N^{1/2})}|^p W_{B_R}.
    pub value: f64,
    /// ∫ W_{B_R}, closed form.
    pub weight_mass: f64,
    pub points: usize,
    pub steps: (f64, f64),
}

/// Weighted p-th moment of the two-frequency sum over the ball of radius R.
/// Trapezoid grid on the box where W ≥ 1e−12, each axis stepped at an eighth
/// of the Nyquist step of its demodulated frequency spread.
pub fn eval_2d_curve_sum(
    lift: &CurveLift,
    b: &[Complex64],
    radius: f64,
    p: f64,
) -> Result<CurveSum2d> {
    check_p(p)?;
    if b.len() != lift.values.len() {
        return Err(DeclabError::InvalidParameter(format!(
            "{} coefficients for {} nodes",
            b.len(),
            lift.values.len()
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(DeclabError::InvalidParameter(format!(
            "radius {radius} must be positive"
        )));
    }
    let spread = |xs: &[f64]| {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (0.5 * (lo + hi), hi - lo)
    };
    let (cu, wu) = spread(&lift.values);
    let (cv, wv) = spread(&lift.nodes);
    let half = radius * WEIGHT_TAIL.powf(-1.0 / WEIGHT_ORDER as f64);
    let axis = |w: f64| {
        let h = if w > 0.0 {
            PI / (4.0 * w)
        } else {
            f64::INFINITY
        };
        let h = h.min(radius / 16.0);
        let cnt = (2.0 * half / h).ceil() as usize;
        (cnt, 2.0 * half / cnt as f64)
    };
    let (n1, h1) = axis(wu);
    let (n2, h2) = axis(wv);
    let points = (n1 + 1).saturating_mul(n2 + 1);
    if points > MAX_2D_POINTS {
        return Err(DeclabError::Budget(format!(
            "2D grid needs {points} points, cap {MAX_2D_POINTS}"
        )));
    }
    let u: Vec<f64> = lift.values.iter().map(|x| x - cu).collect();
    let v: Vec<f64> = lift.nodes.iter().map(|x| x - cv).collect();
    let rot: Vec<Complex64> = v
        .iter()
        .map(|vn| Complex64::from_polar(1.0, vn * h2))
        .collect();
    let rows: Vec<f64> = (0..=n1)
        .into_par_iter()
        .map(|i| {
            let t1 = -half + i as f64 * h1;
            let c: Vec<Complex64> = b
                .iter()
                .zip(&u)
                .map(|(bn, un)| bn * Complex64::from_polar(1.0, t1 * un))
                .collect();
            let mut z = vec![Complex64::new(0.0, 0.0); c.len()];
            let mut vals = Vec::with_capacity(n2 + 1);
            for j in 0..=n2 {
                let t2 = -half + j as f64 * h2;
                if j % RESEED == 0 {
                    for ((zn, cn), vn) in z.iter_mut().zip(&c).zip(&v) {
                        *zn = cn * Complex64::from_polar(1.0, t2 * vn);
                    }
                }
                let s: Complex64 = z.iter().sum();
                vals.push(s.norm().powf(p) * ball_weight(radius, t1.hypot(t2)));
                for (zn, r) in z.iter_mut().zip(&rot) {
                    *zn *= r;
                }
            }
            pairwise_sum(&vals)
        })
        .collect();
    Ok(CurveSum2d {
        radius,
        p,
        value: h1 * h2 * pairwise_sum(&rows),
        weight_mass: ball_weight_mass(radius),
        points,
        steps: (h1, h2),
    })
}

/// One point of the T sweep: the 1D moment next to the 2D prediction for A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPoint {
    pub t: f64,
    /// (∫_0^T |Σ b_n e^{ita_n}|^p)^{1/p}.
    pub direct_root: f64,
    /// 2D radius used: T/N for T ≥ N^{3/2}, else N^{1/2}.
    pub radius: f64,
    pub moment_2d: f64,
    /// (N²/T · I₂(T/N))^{1/p} for T ≥ N^{3/2}, (N^{1/2} I₂(N^{1/2}))^{1/p} below.
    pub predicted_root: f64,
}

/// Compare the 1D moment with the transferred 2D moment along a T sweep.
pub fn transfer_sweep(
    lift: &CurveLift,
    seq: &GenDirichletSeq,
    b: &[Complex64],
    ts: &[f64],
    p: f64,
) -> Result<Vec<TransferPoint>> {
    let nf = seq.n_f64();
    ts.iter()
        .map(|&t| {
            if !(t >= nf && t <= nf * nf) {
                return Err(DeclabError::InvalidParameter(format!(
                    "T = {t} outside [N, N²]"
                )));
            }
            let (direct, _) = direct_moment(seq, b, t, p)?;
            let (radius, factor) = if t >= nf.powf(1.5) {
                (t / nf, nf * nf / t)
            } else {
                (nf.sqrt(), nf.sqrt())
            };
            let m2 = eval_2d_curve_sum(lift, b, radius, p)?;
            Ok(TransferPoint {
                t,
                direct_root: direct.powf(1.0 / p),
                radius,
                moment_2d: m2.value,
                predicted_root: (factor * m2.value).powf(1.0 / p),
            })
        })
        .collect()
}

/// Exponents of the 1D moment and of the 2D prediction against T.
pub fn transfer_exponents(points: &[TransferPoint]) -> Result<(ExponentFit, ExponentFit)> {
    let one: Vec<(f64, f64)> = points.iter().map(|q| (q.t, q.direct_root)).collect();
    let two: Vec<(f64, f64)> = points.iter().map(|q| (q.t, q.predicted_root)).collect();
    Ok((
        ExponentFit::from_pairs(&one)?,
        ExponentFit::from_pairs(&two)?,
    ))
}

// ---------------------------------------------------------------------------
// Bush overlap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BushReport {
    #[serde(rename = "N")]
    pub n: u64,
    pub l: usize,
    pub cells: usize,
    pub step: f64,
    /// Σ_I 1_{I−I}(t) at t = i·step, t ≥ 0.
    pub counts: Vec<u32>,
    /// sup over 1/N ≤ t ≤ L/N of count(t)·t·L/N.
    pub decay_constant: f64,
    /// Slope of the per-shell maximum count against t over dyadic shells of [1/N, L/N].
    pub shell_slope: f64,
    /// Whether the shell maxima fall at least like t^{−1/2}.
    pub linear_decay: bool,
}

/// Overlap count of the difference sets I − I, with I running over blocks of
/// L consecutive terms thickened by L²/N².
pub fn bush_overlap(terms: &[f64], n: u64, l: usize) -> Result<BushReport> {
    if l < 16 || terms.len() < 2 * l {
        return Err(DeclabError::InvalidParameter(format!(
            "bush needs L >= 16 and two blocks, got L = {l} with {} terms",
            terms.len()
        )));
    }
    let nf = n as f64;
    let lf = l as f64;
    let w = lf * lf / (nf * nf);
    let step = w / 8.0;
    let t_max = lf / nf;
    let len = (t_max / step).ceil() as usize + 1;
    let mut diff = vec![0i64; len + 1];
    let cells = terms.len() / l;
    for c in 0..cells {
        let block = &terms[c * l..(c + 1) * l];
        let mut ivs = Vec::with_capacity(l * (l + 1) / 2);
        for i in 0..l {
            for j in 0..=i {
                let d = block[i] - block[j];
                ivs.push(Interval::new((d - 2.0 * w).max(0.0), d + 2.0 * w));
            }
        }
        for iv in IntervalSet::from_intervals(ivs).parts() {
            let a = (iv.lo / step).ceil() as usize;
            let b = ((iv.hi / step).floor() as usize + 1).min(len);
            if a < b {
                diff[a] += 1;
                diff[b] -= 1;
            }
        }
    }
    let mut counts = Vec::with_capacity(len);
    let mut run = 0i64;
    for d in &diff[..len] {
        run += d;
        counts.push(run as u32);
    }
    let mut decay_constant = 0.0f64;
    let mut shells = Vec::new();
    let mut lo = 1.0 / nf;
    while lo < t_max * (1.0 - 1e-12) {
        let hi = (2.0 * lo).min(t_max);
        let (a, b) = (
            (lo / step).ceil() as usize,
            ((hi / step).floor() as usize).min(len - 1),
        );
        let mut mx = 0u32;
        for (i, &cnt) in counts.iter().enumerate().take(b + 1).skip(a) {
            mx = mx.max(cnt);
            decay_constant = decay_constant.max(cnt as f64 * i as f64 * step * lf / nf);
        }
        shells.push((0.5 * (lo + hi), mx.max(1) as f64));
        lo = hi;
    }
    let fit = ExponentFit::from_pairs(&shells)?;
    Ok(BushReport {
        n,
        l,
        cells,
        step,
        counts,
        decay_constant,
        shell_slope: fit.slope,
        linear_decay: fit.slope <= -0.5,
    })
}

/// {log(N+n) − log(N+1)}, n = 1..len: the long log block of the bush
/// discussion (len = N^α).
pub fn log_block(n: u64, len: usize) -> Vec<f64> {
    let base = (n + 1) as f64;
    (0..len).map(|k| (k as f64 / base).ln_1p()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqgen::{gen_log, gen_random, normalize_first_gap};

    fn log_seq(n: u64) -> GenDirichletSeq {
        normalize_first_gap(&gen_log(n).unwrap()).unwrap()
    }

    #[test]
    fn lift_interpolates_within_a_quarter_over_n() {
        for n in [256u64, 1024, 4096] {
            for seq in [
                log_seq(n),
                normalize_first_gap(&gen_random(n, 1.0, 7).unwrap()).unwrap(),
            ] {
                let lift = build_lift(&seq, DEFAULT_LIFT_C).unwrap();
                assert!(lift.defect <= 0.25 / n as f64, "N = {n}: {}", lift.defect);
                assert_eq!(lift.e[0], 0.0);
                assert!(lift.g(0.0).abs() <= 0.25 / n as f64);
                assert!(lift.curvature_range.0.is_finite() && lift.curvature_range.1.is_finite());
            }
        }
    }

    #[test]
    fn log_lift_grows_quadratically() {
        let lift = build_lift(&log_seq(4096), DEFAULT_LIFT_C).unwrap();
        for r in lift.growth_ratios() {
            assert!((0.125..=8.0).contains(&r), "{r}");
        }
        // With e_2 = 0 and g₀′(0) = 0 the spline's curvature alternates
        // between about 0 and 2 on log data; step-h quotients average it.
        let (lo, hi) = lift.curvature_range;
        assert!(lo > 0.25 && hi < 2.0, "{lo} {hi}");
        let g2: Vec<f64> = lift.curvatures.iter().map(|c| 2.0 * c).collect();
        assert!(
            g2[0].abs() < 1e-9 && (g2[1] - 2.0).abs() < 0.1,
            "{:?}",
            &g2[..4]
        );
    }

    #[test]
    fn mollification_shifts_each_piece_by_its_curvature() {
        // Away from breakpoints g − g₀ = c_k ∫s²φ(s)ds, one moment for every piece.
        let lift = build_lift(&log_seq(1024), DEFAULT_LIFT_C).unwrap();
        let h = lift.nodes[1];
        let shift = |k: usize, frac: f64| {
            lift.g(lift.nodes[k] + frac * h) - lift.g0(lift.nodes[k] + frac * h)
        };
        for k in [2usize, 9, 20] {
            let (a, b) = (shift(k, 0.3), shift(k, 0.7));
            // g and g₀ are O(1); their difference is O(width²), so round-off sets the floor.
            assert!((a - b).abs() <= 1e-15 + 1e-6 * a.abs(), "{a} {b}");
            let m2 = a / lift.curvatures[k];
            let m2_ref = shift(5, 0.5) / lift.curvatures[5];
            assert!(
                m2 > 0.0 && (m2 - m2_ref).abs() <= 1e-4 * m2,
                "{m2} {m2_ref}"
            );
            assert!(m2 < lift.width * lift.width);
        }
    }

    #[test]
    fn exact_interpolant_is_not_convex_on_random_data() {
        // The slope recursion s_{k+1} = 2Δy_k/h − s_k carries the jitter of the
        // second differences forward, so the curvature proxy changes sign.
        let seq = normalize_first_gap(&gen_random(4096, 1.0, 7).unwrap()).unwrap();
        let lift = build_lift(&seq, DEFAULT_LIFT_C).unwrap();
        assert!(lift.curvature_range.0 < 0.0, "{:?}", lift.curvature_range);
        assert!(lift.defect <= 0.25 / 4096.0);
    }

    #[test]
    fn lift_refuses_unnormalized_input() {
        assert!(build_lift(&gen_random(256, 1.0, 1).unwrap(), DEFAULT_LIFT_C).is_err());
        assert!(build_lift(&log_seq(256), 0.0).is_err());
    }

    #[test]
    fn single_term_split() {
        let seq = log_seq(256);
        let k = seq.len();
        let mut b = vec![Complex64::new(0.0, 0.0); k];
        b[0] = Complex64::new(1.0, 0.0);
        let s = abel_decompose(&seq, &b, 5000.0, 4.0).unwrap();
        assert_eq!(s.periods, 4);
        let t = s.t;
        assert!((s.direct - t).abs() < 1e-9 * t);
        assert!((s.a - t).abs() < 1e-9 * t);
        let frac = (k as f64 - 1.0) / k as f64;
        assert!((s.b - t * frac.powi(4)).abs() < 1e-9 * t);
    }

    #[test]
    fn split_is_exact_without_quadratic_part() {
        // a_n = (n−1)/N: e ≡ 0, so A is the direct moment and the remainder vanishes.
        let n = 400u64;
        let seq = GenDirichletSeq::custom((0..20).map(|i| i as f64 / n as f64).collect(), n, 1.0);
        let b = random_signs(20, 3);
        let s = abel_decompose(&seq, &b, 3.0 * n as f64, 4.0).unwrap();
        assert!(
            (s.a - s.direct).abs() < 1e-8 * s.direct,
            "{} {}",
            s.a,
            s.direct
        );
        assert_eq!(s.abel_constant, 0.0);
    }

    #[test]
    fn abel_bound_dominates_the_direct_norm() {
        let seq = log_seq(1024);
        for (b, t) in [
            (unit_coeffs(seq.len()), 1024.0 * 32.0),
            (random_signs(seq.len(), 9), 1024.0 * 1024.0),
        ] {
            let s = abel_decompose(&seq, &b, t, 4.0).unwrap();
            assert!(s.direct.powf(0.25) <= s.abel_bound() * (1.0 + 1e-9));
            assert!(
                s.triangle_ratio() > 0.0 && s.triangle_ratio() < 2.0,
                "{}",
                s.triangle_ratio()
            );
        }
    }

    #[test]
    fn t_outside_range_is_refused() {
        let seq = log_seq(256);
        let b = unit_coeffs(seq.len());
        assert!(abel_decompose(&seq, &b, 100.0, 4.0).is_err());
        assert!(abel_decompose(&seq, &b, 70000.0, 4.0).is_err());
    }

    #[test]
    fn single_term_2d_is_the_weighted_area() {
        let lift = build_lift(&log_seq(256), DEFAULT_LIFT_C).unwrap();
        let mut b = vec![Complex64::new(0.0, 0.0); lift.values.len()];
        b[3] = Complex64::new(0.0, 2.0);
        let r = 40.0;
        let m = eval_2d_curve_sum(&lift, &b, r, 4.0).unwrap();
        let want = 16.0 * ball_weight_mass(r);
        assert!((m.value - want).abs() < 1e-3 * want, "{} {want}", m.value);
    }

    #[test]
    fn p2_moment_tends_to_l2_mass() {
        let lift = build_lift(&log_seq(256), DEFAULT_LIFT_C).unwrap();
        let b = random_signs(lift.values.len(), 4);
        let l2: f64 = b.iter().map(|z| z.norm_sqr()).sum();
        let errs: Vec<f64> = [40.0, 160.0]
            .iter()
            .map(|&r| {
                let m = eval_2d_curve_sum(&lift, &b, r, 2.0).unwrap();
                (m.value / m.weight_mass - l2).abs() / l2
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[1] < 0.05, "{errs:?}");
    }

    #[test]
    fn oversized_2d_grid_is_refused() {
        let lift = build_lift(&log_seq(4096), DEFAULT_LIFT_C).unwrap();
        let b = unit_coeffs(lift.values.len());
        assert!(matches!(
            eval_2d_curve_sum(&lift, &b, 1e5, 4.0),
            Err(DeclabError::Budget(_))
        ));
    }

    #[test]
    fn bush_decays_for_short_blocks_only() {
        // α = 1/2 needs L² ≲ N^{1/2} for the decay to start inside [1/N, L/N].
        let n = 1u64 << 20;
        let short = bush_overlap(&log_block(n, 1024), n, 16).unwrap();
        assert!(short.linear_decay, "{}", short.shell_slope);
        let n = 1u64 << 16;
        let long = bush_overlap(&log_block(n, 1 << 16), n, 16).unwrap();
        assert!(!long.linear_decay, "{}", long.shell_slope);
    }

    #[test]
    fn bound_formulas() {
        assert!((short_sum_bound(256.0, 256.0 * 256.0, 4.0) - (16.0 + 16.0 * 2.0)).abs() < 1e-12);
        // α = 1/2, p = 6: both terms equal R^{1/6}.
        let r: f64 = 4096.0;
        assert!((parabola_small_cap_bound(r, 0.5, 6.0) - 2.0 * r.powf(1.0 / 6.0)).abs() < 1e-9);
    }
}
