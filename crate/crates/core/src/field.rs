//! Function representations and the numeric substrate.
//!
//! `AtomicSum` is exact: a finite sum of modulated copies of one band-limited
//! envelope. `GridField` holds samples for convolutions. Norms of atomic sums
//! use composite trapezoid and midpoint rules on the demodulated sum: after
//! removing the mean frequency, |f|^p is band-limited to p·ξ (ξ = half the
//! frequency spread plus the envelope width), so a step of π/(8ξ) resolves it
//! and the two rules agree up to endpoint terms.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{DeclabError, Result};
use crate::fatap::{FatAP, FreqCell, WeightSpec};
use crate::intervals::{Interval, IntervalSet};
use crate::kernels::{plateau, Mollifier};
use crate::numeric::{gauss_legendre, pairwise_sum};

/// Relative weight below which tails are dropped.
pub const TAIL: f64 = 1e-12;
pub const DEFAULT_ENVELOPE_ORDER: u32 = 4;
const BLOCK: usize = 8192;
const RESEED: usize = 128;
const MIN_PANELS: usize = 64;
const REFINE_RTOL: f64 = 1e-7;
const MAX_REFINE: u32 = 6;

/// ∫_ℝ (sin u/u)^n du in closed form, exact integer arithmetic for n ≤ 20.
pub fn sinc_power_integral(n: u32) -> f64 {
    assert!((1..=20).contains(&n), "sinc power {n} outside 1..=20");
    let ni = n as i128;
    let mut sum: i128 = 0;
    let mut binom: i128 = 1;
    for j in 0..=(n / 2) {
        let term = binom * (ni - 2 * j as i128).pow(n - 1);
        if j % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
        binom = binom * (ni - j as i128) / (j as i128 + 1);
    }
    let fact: f64 = (1..n).map(|i| i as f64).product();
    PI * sum as f64 / (2f64.powi(n as i32 - 1) * fact)
}

/// E(t) = E(0)·sinc(wt/k)^k. Its spectrum is a B-spline supported in [−w, w]
/// with height exactly 1, so E(0) = (1/2π)∫Ê is the envelope mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub width: f64,
    pub order: u32,
}

impl Envelope {
    pub fn new(width: f64, order: u32) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) || order == 0 || order % 2 == 1 || order > 10 {
            return Err(DeclabError::InvalidParameter(format!(
                "envelope needs width > 0 and even order in 2..=10, got ({width}, {order})"
            )));
        }
        Ok(Envelope { width, order })
    }

    fn a(&self) -> f64 {
        self.width / self.order as f64
    }

    pub fn mass(&self) -> f64 {
        self.a() / sinc_power_integral(self.order)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let x = self.a() * t;
        let s = if x.abs() < 1e-6 {
            1.0 - x * x / 6.0
        } else {
            x.sin() / x
        };
        self.mass() * s.powi(self.order as i32)
    }

    /// ∫|E|^p for integer p with order·p ≤ 20.
    pub fn lp_pow_exact(&self, p: u32) -> f64 {
        self.mass().powi(p as i32) * sinc_power_integral(self.order * p) / self.a()
    }

    /// Beyond this |t|, |E|^p < TAIL·E(0)^p.
    pub fn tail_radius(&self, p: f64) -> f64 {
        TAIL.powf(-1.0 / (self.order as f64 * p)) / self.a()
    }
}

/// Σ c_n e^{ita_n}, optionally times a shared envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicSum {
    pub atoms: Vec<(f64, Complex64)>,
    pub envelope: Option<Envelope>,
}

impl AtomicSum {
    pub fn new(mut atoms: Vec<(f64, Complex64)>, envelope: Option<Envelope>) -> Result<Self> {
        if atoms
            .iter()
            .any(|(a, c)| !(a.is_finite() && c.re.is_finite() && c.im.is_finite()))
        {
            return Err(DeclabError::InvalidParameter("non-finite atom".into()));
        }
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        Ok(AtomicSum { atoms, envelope })
    }

    pub fn unit_atoms(freqs: &[f64], envelope: Option<Envelope>) -> Result<Self> {
        Self::new(
            freqs
                .iter()
                .map(|&a| (a, Complex64::new(1.0, 0.0)))
                .collect(),
            envelope,
        )
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn width(&self) -> f64 {
        self.envelope.map_or(0.0, |e| e.width)
    }

    /// Declared spectral support of atom i: B_w(a_i).
    pub fn atom_support(&self, i: usize) -> Interval {
        Interval::centered(self.atoms[i].0, self.width())
    }

    pub fn xi_max(&self) -> f64 {
        self.atoms.iter().map(|a| a.0.abs()).fold(0.0, f64::max) + self.width()
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for &(a, c) in &self.atoms {
            s += c * Complex64::from_polar(1.0, a * t);
        }
        match self.envelope {
            Some(e) => s * e.eval(t),
            None => s,
        }
    }

    fn subset(&self, idx: &[usize]) -> AtomicSum {
        AtomicSum {
            atoms: idx.iter().map(|&i| self.atoms[i]).collect(),
            envelope: self.envelope,
        }
    }
}

fn owner(f: &AtomicSum, i: usize, cells: &[FreqCell]) -> Result<usize> {
    let sup = IntervalSet::single(f.atom_support(i));
    cells
        .iter()
        .position(|c| sup.is_subset_of(&c.balls))
        .ok_or(DeclabError::NonNestedAtom { freq: f.atoms[i].0 })
}

/// f_{I_j}: the atoms whose declared support nests in cell j. Every atom
/// must nest in some cell, so the projections sum to f exactly.
pub fn project(f: &AtomicSum, cells: &[FreqCell], j: usize) -> Result<AtomicSum> {
    Ok(split(f, cells)?.swap_remove(j))
}

/// All projections at once.
pub fn split(f: &AtomicSum, cells: &[FreqCell]) -> Result<Vec<AtomicSum>> {
    let mut idx = vec![Vec::new(); cells.len()];
    for i in 0..f.len() {
        idx[owner(f, i, cells)?].push(i);
    }
    Ok(idx.iter().map(|v| f.subset(v)).collect())
}

/// Integration region for `lp_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Interval(Interval),
    FatAp(FatAP),
    Weight(WeightSpec),
    /// All of ℝ, truncated where the envelope falls below TAIL.
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub p: f64,
    pub region: Region,
    pub averaged: bool,
    pub value: f64,
    /// ∫|f|^p over the region (weighted for weight regions).
    pub integral: f64,
    /// |region| or ‖W‖₁, the averaging denominator.
    pub mass: f64,
    pub step: f64,
    /// Estimated absolute error of `value`.
    pub error: f64,
}

type WeightFn<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// One demodulated sum laid out for the phasor recurrence.
struct Factor {
    freq: Vec<f64>,
    cr: Vec<f64>,
    ci: Vec<f64>,
    env: Option<Envelope>,
}

impl Factor {
    fn new(f: &AtomicSum) -> (Self, f64) {
        let (lo, hi) = match (f.atoms.first(), f.atoms.last()) {
            (Some(a), Some(b)) => (a.0, b.0),
            _ => (0.0, 0.0),
        };
        let c0 = 0.5 * (lo + hi);
        (Factor::with_center(f, c0), 0.5 * (hi - lo) + f.width())
    }

    fn with_center(f: &AtomicSum, c0: f64) -> Self {
        Factor {
            freq: f.atoms.iter().map(|a| a.0 - c0).collect(),
            cr: f.atoms.iter().map(|a| a.1.re).collect(),
            ci: f.atoms.iter().map(|a| a.1.im).collect(),
            env: f.envelope,
        }
    }

    /// f(t0 + i h)·e^{−i c0 (t0 + i h)} for i in 0..out.len().
    fn block_complex(&self, t0: f64, h: f64, out: &mut [Complex64]) {
        let m = self.freq.len();
        let rr: Vec<f64> = self.freq.iter().map(|a| (a * h).cos()).collect();
        let ri: Vec<f64> = self.freq.iter().map(|a| (a * h).sin()).collect();
        let mut zr = vec![0.0; m];
        let mut zi = vec![0.0; m];
        for (s, chunk) in out.chunks_mut(RESEED).enumerate() {
            let ts = t0 + (s * RESEED) as f64 * h;
            for n in 0..m {
                let (sn, cs) = (self.freq[n] * ts).sin_cos();
                zr[n] = self.cr[n] * cs - self.ci[n] * sn;
                zi[n] = self.cr[n] * sn + self.ci[n] * cs;
            }
            for o in chunk.iter_mut() {
                let (mut sr, mut si) = (0.0, 0.0);
                for n in 0..m {
                    sr += zr[n];
                    si += zi[n];
                    let a = zr[n] * rr[n] - zi[n] * ri[n];
                    zi[n] = zr[n] * ri[n] + zi[n] * rr[n];
                    zr[n] = a;
                }
                *o = Complex64::new(sr, si);
            }
        }
        if let Some(e) = self.env {
            for (i, o) in out.iter_mut().enumerate() {
                *o *= e.eval(t0 + i as f64 * h);
            }
        }
    }

    /// |f(t0 + i h)|² for i in 0..out.len(); phasors reseeded every RESEED steps.
    fn block(&self, t0: f64, h: f64, out: &mut [f64]) {
        let m = self.freq.len();
        let rr: Vec<f64> = self.freq.iter().map(|a| (a * h).cos()).collect();
        let ri: Vec<f64> = self.freq.iter().map(|a| (a * h).sin()).collect();
        let mut zr = vec![0.0; m];
        let mut zi = vec![0.0; m];
        for (s, chunk) in out.chunks_mut(RESEED).enumerate() {
            let ts = t0 + (s * RESEED) as f64 * h;
            for n in 0..m {
                let (sn, cs) = (self.freq[n] * ts).sin_cos();
                zr[n] = self.cr[n] * cs - self.ci[n] * sn;
                zi[n] = self.cr[n] * sn + self.ci[n] * cs;
            }
            for o in chunk.iter_mut() {
                let mut acc = [0.0f64; 8];
                let mut n = 0;
                while n + 4 <= m {
                    for l in 0..4 {
                        acc[l] += zr[n + l];
                        acc[4 + l] += zi[n + l];
                    }
                    n += 4;
                }
                while n < m {
                    acc[0] += zr[n];
                    acc[4] += zi[n];
                    n += 1;
                }
                let sr = (acc[0] + acc[1]) + (acc[2] + acc[3]);
                let si = (acc[4] + acc[5]) + (acc[6] + acc[7]);
                *o = sr * sr + si * si;
                for n in 0..m {
                    let a = zr[n] * rr[n] - zi[n] * ri[n];
                    zi[n] = zr[n] * ri[n] + zi[n] * rr[n];
                    zr[n] = a;
                }
            }
        }
        if let Some(e) = self.env {
            for (i, o) in out.iter_mut().enumerate() {
                let x = e.eval(t0 + i as f64 * h);
                *o *= x * x;
            }
        }
    }

    fn abs2_at(&self, t: f64) -> f64 {
        let (mut sr, mut si) = (0.0, 0.0);
        for n in 0..self.freq.len() {
            let (sn, cs) = (self.freq[n] * t).sin_cos();
            sr += self.cr[n] * cs - self.ci[n] * sn;
            si += self.cr[n] * sn + self.ci[n] * cs;
        }
        let e = self.env.map_or(1.0, |e| e.eval(t));
        (sr * sr + si * si) * e * e
    }
}

/// Π_i |f_i|², sampled with one phasor recurrence per factor. `xi` bounds
/// half the band of the product, so |Π f_i|^p is band-limited to p·xi.
struct Sampler {
    factors: Vec<Factor>,
    xi: f64,
    real: bool,
}

impl Sampler {
    fn new(f: &AtomicSum) -> Self {
        Self::product(&[f])
    }

    fn product(fs: &[&AtomicSum]) -> Self {
        let mut factors = Vec::with_capacity(fs.len());
        let mut xi = 0.0;
        for f in fs {
            let (fac, x) = Factor::new(f);
            factors.push(fac);
            xi += x;
        }
        let empty = fs.iter().any(|f| f.is_empty());
        Sampler {
            factors: if empty { Vec::new() } else { factors },
            xi,
            real: fs.iter().all(|f| f.atoms.iter().all(|a| a.1.im == 0.0)),
        }
    }

    fn is_zero(&self) -> bool {
        self.factors.is_empty()
    }

    fn block(&self, t0: f64, h: f64, out: &mut [f64]) {
        if self.is_zero() {
            out.fill(0.0);
            return;
        }
        self.factors[0].block(t0, h, out);
        if self.factors.len() > 1 {
            let mut tmp = vec![0.0; out.len()];
            for f in &self.factors[1..] {
                f.block(t0, h, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o *= t;
                }
            }
        }
    }

    fn abs2_at(&self, t: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        self.factors.iter().map(|f| f.abs2_at(t)).product()
    }

    fn abs2_grid(&self, t0: f64, h: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        out.par_chunks_mut(BLOCK)
            .enumerate()
            .for_each(|(b, chunk)| self.block(t0 + (b * BLOCK) as f64 * h, h, chunk));
        out
    }

    /// Step resolving |f|^p for every p in the list.
    fn band_step(&self, ps: &[f64]) -> f64 {
        let pe = ps
            .iter()
            .map(|&p| {
                if p.is_infinite() {
                    2.0
                } else {
                    2.0 * (p / 2.0).ceil()
                }
            })
            .fold(8.0, f64::max);
        let omega = pe * self.xi;
        if omega > 0.0 {
            PI / omega
        } else {
            f64::INFINITY
        }
    }

    /// Trapezoid T and midpoint M sums of |f|^p·w over [a, b] for each p,
    /// doubling the panel count while |T − M| exceeds REFINE_RTOL relative.
    fn integrate(&self, a: f64, b: f64, ps: &[f64], weight: Option<WeightFn>) -> Quad {
        let sym = self.real && weight.is_none() && a < 0.0 && (a + b).abs() <= 1e-12 * b.abs();
        let a0 = if sym { 0.0 } else { a };
        let len = b - a0;
        if len <= 0.0 || self.is_zero() {
            return Quad::zero(ps.len());
        }
        let hb = self.band_step(ps);
        let mut n = if hb.is_finite() {
            ((len / hb).ceil() as usize).max(MIN_PANELS)
        } else {
            MIN_PANELS
        };
        let mut refine = 0;
        loop {
            let h = len / n as f64;
            let q = self.trap_mid(a0, h, n, ps, weight);
            let done = q.t.iter().zip(&q.m).all(|(t, m)| {
                (t - m).abs() <= REFINE_RTOL * t.abs().max(m.abs()) + f64::MIN_POSITIVE
            });
            if done || refine == MAX_REFINE {
                let f = if sym { 2.0 } else { 1.0 };
                return Quad {
                    t: q.t.iter().map(|x| f * x).collect(),
                    m: q.m.iter().map(|x| f * x).collect(),
                    ..q
                };
            }
            n *= 2;
            refine += 1;
        }
    }

    fn trap_mid(&self, a: f64, h: f64, n: usize, ps: &[f64], weight: Option<WeightFn>) -> Quad {
        let hs = 0.5 * h;
        let total = 2 * n + 1;
        let nblocks = total.div_ceil(BLOCK);
        let np = ps.len();
        let parts: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..nblocks)
            .into_par_iter()
            .map(|b| {
                let i0 = b * BLOCK;
                let cnt = BLOCK.min(total - i0);
                let mut buf = vec![0.0; cnt];
                self.block(a + i0 as f64 * hs, hs, &mut buf);
                let mut ev = vec![Vec::with_capacity(cnt / 2 + 1); np];
                let mut od = vec![Vec::with_capacity(cnt / 2 + 1); np];
                let mut mx = 0.0f64;
                for (j, &s) in buf.iter().enumerate() {
                    let i = i0 + j;
                    mx = mx.max(s);
                    let w = weight.map_or(1.0, |wf| wf(a + i as f64 * hs));
                    let end = if i == 0 || i == total - 1 { 0.5 } else { 1.0 };
                    for (k, &p) in ps.iter().enumerate() {
                        let g = if p.is_infinite() {
                            0.0
                        } else {
                            s.powf(0.5 * p) * w
                        };
                        if i % 2 == 0 {
                            ev[k].push(end * g);
                        } else {
                            od[k].push(g);
                        }
                    }
                }
                let es: Vec<f64> = ev.iter().map(|v| pairwise_sum(v)).collect();
                let os: Vec<f64> = od.iter().map(|v| pairwise_sum(v)).collect();
                (es, os, mx)
            })
            .collect();
        let mut t = Vec::with_capacity(np);
        let mut m = Vec::with_capacity(np);
        for k in 0..np {
            let ev: Vec<f64> = parts.iter().map(|p| p.0[k]).collect();
            let od: Vec<f64> = parts.iter().map(|p| p.1[k]).collect();
            t.push(h * pairwise_sum(&ev));
            m.push(h * pairwise_sum(&od));
        }
        let max_abs2 = parts.iter().map(|p| p.2).fold(0.0, f64::max);
        Quad {
            t,
            m,
            h: hs,
            max_abs2,
        }
    }
}

#[derive(Debug, Clone)]
struct Quad {
    t: Vec<f64>,
    m: Vec<f64>,
    h: f64,
    max_abs2: f64,
}

impl Quad {
    fn zero(np: usize) -> Self {
        Quad {
            t: vec![0.0; np],
            m: vec![0.0; np],
            h: 0.0,
            max_abs2: 0.0,
        }
    }

    /// Simpson combination (T + 2M)/3 with the conservative estimate |T − M|/2.
    fn values(&self) -> Vec<(f64, f64)> {
        self.t
            .iter()
            .zip(&self.m)
            .map(|(t, m)| ((t + 2.0 * m) / 3.0, 0.5 * (t - m).abs()))
            .collect()
    }
}

/// Accumulated (integral, error) per p, plus bookkeeping.
struct Acc {
    vals: Vec<Vec<f64>>,
    errs: Vec<Vec<f64>>,
    max_abs2: f64,
    step: f64,
}

impl Acc {
    fn new(np: usize) -> Self {
        Acc {
            vals: vec![Vec::new(); np],
            errs: vec![Vec::new(); np],
            max_abs2: 0.0,
            step: 0.0,
        }
    }

    fn add_quad(&mut self, q: &Quad) {
        for (k, (v, e)) in q.values().into_iter().enumerate() {
            self.vals[k].push(v);
            self.errs[k].push(e);
        }
        self.max_abs2 = self.max_abs2.max(q.max_abs2);
        self.step = self.step.max(q.h);
    }

    fn totals(&self) -> Vec<(f64, f64)> {
        self.vals
            .iter()
            .zip(&self.errs)
            .map(|(v, e)| (pairwise_sum(v), pairwise_sum(e)))
            .collect()
    }
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(DeclabError::InvalidParameter(format!(
            "p = {p} outside [1, ∞]"
        )))
    }
}

/// ‖f‖_{L^p(region)}, plain or averaged.
pub fn lp_norm(f: &AtomicSum, p: f64, region: &Region, averaged: bool) -> Result<NormReport> {
    Ok(lp_norms(f, &[p], region, averaged)?.swap_remove(0))
}

/// Several exponents from one set of samples.
pub fn lp_norms(
    f: &AtomicSum,
    ps: &[f64],
    region: &Region,
    averaged: bool,
) -> Result<Vec<NormReport>> {
    for &p in ps {
        check_p(p)?;
    }
    norms_with(&Sampler::new(f), f.envelope, ps, region, averaged)
}

/// ∫ Π_i |f_i|^p over the region, reported like `lp_norm` of the product.
pub fn product_lp_norm(
    fs: &[&AtomicSum],
    p: f64,
    region: &Region,
    averaged: bool,
) -> Result<NormReport> {
    check_p(p)?;
    let env = fs
        .iter()
        .filter_map(|f| f.envelope)
        .min_by(|a, b| a.tail_radius(p).total_cmp(&b.tail_radius(p)));
    Ok(norms_with(&Sampler::product(fs), env, &[p], region, averaged)?.swap_remove(0))
}

fn norms_with(
    s: &Sampler,
    envelope: Option<Envelope>,
    ps: &[f64],
    region: &Region,
    averaged: bool,
) -> Result<Vec<NormReport>> {
    let mut acc = Acc::new(ps.len());
    let mass = match region {
        Region::Interval(iv) => {
            acc.add_quad(&s.integrate(iv.lo, iv.hi, ps, None));
            iv.len()
        }
        Region::FatAp(p) => {
            let ivs = p.intervals()?;
            for iv in ivs.parts() {
                acc.add_quad(&s.integrate(iv.lo, iv.hi, ps, None));
            }
            ivs.measure()
        }
        Region::Line => {
            let e = envelope.ok_or_else(|| {
                DeclabError::UnboundedRegion("the whole line needs an enveloped sum".into())
            })?;
            if averaged {
                return Err(DeclabError::UnboundedRegion(
                    "averaged norm over the whole line".into(),
                ));
            }
            let pmin = ps.iter().copied().fold(f64::INFINITY, f64::min).min(64.0);
            let r = e.tail_radius(pmin);
            acc.add_quad(&s.integrate(-r, r, ps, None));
            2.0 * r
        }
        Region::Weight(ws) => weighted(s, ws, ps, &mut acc),
    };
    let totals = acc.totals();
    Ok(ps
        .iter()
        .zip(totals)
        .map(|(&p, (integral, err))| {
            let (value, error) = if p.is_infinite() {
                (acc.max_abs2.sqrt(), 0.0)
            } else {
                let base = if averaged { integral / mass } else { integral };
                let ebase = if averaged { err / mass } else { err };
                let v = base.max(0.0).powf(1.0 / p);
                let e = if base > 0.0 {
                    v * ebase / (p * base)
                } else {
                    ebase.powf(1.0 / p)
                };
                (v, e)
            };
            NormReport {
                p,
                region: *region,
                averaged,
                value,
                integral,
                mass,
                step: acc.step,
                error,
            }
        })
        .collect())
}

/// ∫|f|^p W for W = W_{P,k}; returns ‖W‖₁. Degenerate P has no lattice
/// factor, so trapezoid applies on the ball and its two tails. Otherwise the
/// lattice factor concentrates within δ·(TAIL^{−1/k} − 1) of each lattice
/// point and is integrated by Gauss–Legendre on panels graded toward the kink.
fn weighted(s: &Sampler, ws: &WeightSpec, ps: &[f64], acc: &mut Acc) -> f64 {
    let p = ws.base;
    let k = ws.k as f64;
    let rt = ws.truncation_radius(TAIL);
    if p.is_degenerate() {
        let w = |x: f64| ws.eval(x);
        acc.add_quad(&s.integrate(p.x0 - p.r, p.x0 + p.r, ps, None));
        acc.add_quad(&s.integrate(p.x0 + p.r, p.x0 + rt, ps, Some(&w)));
        acc.add_quad(&s.integrate(p.x0 - rt, p.x0 - p.r, ps, Some(&w)));
        return 2.0 * p.r + 2.0 * p.r / (k - 1.0) * (1.0 - (rt / p.r).powf(1.0 - k));
    }
    let dm = (0.5 * p.v).min(p.delta * (TAIL.powf(-1.0 / k) - 1.0));
    let osc = s.band_step(ps);
    let kmax = ((rt + dm) / p.v).ceil() as i64;
    let (gx, gw) = gauss_legendre(20);
    let (hx, hw) = gauss_legendre(10);
    let np = ps.len();
    let per_point: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = (-kmax..=kmax)
        .into_par_iter()
        .map(|j| {
            let c = p.x0 + j as f64 * p.v;
            let mut cuts = vec![c - dm, c, c + dm];
            for e in [p.x0 - p.r, p.x0 + p.r] {
                if (c - dm..c + dm).contains(&e) {
                    cuts.push(e);
                }
            }
            let mut g = p.delta / k / 16.0;
            while g < dm {
                cuts.push(c - g);
                cuts.push(c + g);
                g *= 2.0;
            }
            cuts.retain(|&x| (p.x0 - rt..=p.x0 + rt).contains(&x));
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut v20 = vec![Vec::new(); np];
            let mut v10 = vec![Vec::new(); np];
            let mut wm = Vec::new();
            let mut mx = 0.0f64;
            for seg in cuts.windows(2) {
                let (lo, hi) = (seg[0], seg[1]);
                let pieces = if osc.is_finite() {
                    ((hi - lo) / osc).ceil().max(1.0) as usize
                } else {
                    1
                };
                let ph = (hi - lo) / pieces as f64;
                for q in 0..pieces {
                    let mid = lo + (q as f64 + 0.5) * ph;
                    for (nodes, wts, out, is20) in
                        [(&gx, &gw, &mut v20, true), (&hx, &hw, &mut v10, false)]
                    {
                        let mut sums = vec![0.0; np];
                        let mut wsum = 0.0;
                        for (x, w) in nodes.iter().zip(wts.iter()) {
                            let t = mid + 0.5 * ph * x;
                            let wt = ws.eval(t);
                            let a2 = s.abs2_at(t);
                            if is20 {
                                mx = mx.max(a2);
                                wsum += w * wt;
                            }
                            for (kk, &pp) in ps.iter().enumerate() {
                                if pp.is_finite() {
                                    sums[kk] += w * a2.powf(0.5 * pp) * wt;
                                }
                            }
                        }
                        for kk in 0..np {
                            out[kk].push(0.5 * ph * sums[kk]);
                        }
                        if is20 {
                            wm.push(0.5 * ph * wsum);
                        }
                    }
                }
            }
            let a: Vec<f64> = v20.iter().map(|v| pairwise_sum(v)).collect();
            let b: Vec<f64> = v10.iter().map(|v| pairwise_sum(v)).collect();
            (a, b, pairwise_sum(&wm), mx)
        })
        .collect();
    for kk in 0..np {
        let a: Vec<f64> = per_point.iter().map(|r| r.0[kk]).collect();
        let b: Vec<f64> = per_point.iter().map(|r| r.1[kk]).collect();
        let (sa, sb) = (pairwise_sum(&a), pairwise_sum(&b));
        acc.vals[kk].push(sa);
        acc.errs[kk].push((sa - sb).abs());
    }
    acc.max_abs2 = per_point.iter().map(|r| r.3).fold(acc.max_abs2, f64::max);
    acc.step = acc.step.max(p.delta / k / 16.0);
    let masses: Vec<f64> = per_point.iter().map(|r| r.2).collect();
    pairwise_sum(&masses)
}

/// f(x_i)·e^{−i c0 x_i} on x_i = origin + i·step, i < len: the sum
/// demodulated by `center`, so its samples carry frequencies a − c0.
pub fn sample_demodulated(
    f: &AtomicSum,
    center: f64,
    origin: f64,
    step: f64,
    len: usize,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    if f.is_empty() {
        return out;
    }
    let fac = Factor::with_center(f, center);
    out.par_chunks_mut(BLOCK)
        .enumerate()
        .for_each(|(b, chunk)| fac.block_complex(origin + (b * BLOCK) as f64 * step, step, chunk));
    out
}

/// The default physical window [−κW, κW], W = N²/(L²θ).
pub fn kappa_window(n: f64, l: f64, theta: f64, kappa: f64) -> Interval {
    let w = n * n / (l * l * theta);
    Interval::new(-kappa * w, kappa * w)
}

/// Samples g(origin + i·step). A non-periodic field is trusted only at
/// distance ≥ `pad` from both ends; a periodic one lives on the torus of
/// length len·step.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub origin: f64,
    pub step: f64,
    pub samples: Vec<Complex64>,
    pub xi_max: f64,
    pub pad: f64,
    pub periodic: bool,
}

impl GridField {
    pub fn new(origin: f64, step: f64, samples: Vec<Complex64>, xi_max: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(DeclabError::InvalidParameter(format!("grid step {step}")));
        }
        if xi_max > 0.0 && step > PI / (8.0 * xi_max) * (1.0 + 1e-12) {
            return Err(DeclabError::InvalidParameter(format!(
                "step {step} exceeds π/(8ξ_max) = {}",
                PI / (8.0 * xi_max)
            )));
        }
        Ok(GridField {
            origin,
            step,
            samples,
            xi_max,
            pad: 0.0,
            periodic: false,
        })
    }

    pub fn with_padding(mut self, pad: f64) -> Self {
        self.pad = pad;
        self
    }

    pub fn into_periodic(mut self) -> Self {
        self.periodic = true;
        self
    }

    /// Direct evaluation of an atomic sum at every grid point.
    pub fn from_atomic(f: &AtomicSum, origin: f64, step: f64, len: usize) -> Result<Self> {
        let samples = (0..len)
            .into_par_iter()
            .map(|i| f.eval(origin + i as f64 * step))
            .collect();
        GridField::new(origin, step, samples, f.xi_max())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn point(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    /// Angular frequency of DFT bin q.
    pub fn frequency(&self, q: usize) -> f64 {
        let n = self.len();
        let qs = if q <= n / 2 {
            q as f64
        } else {
            q as f64 - n as f64
        };
        2.0 * PI * qs / (n as f64 * self.step)
    }

    /// Unnormalized forward DFT, G_q = Σ_j g_j e^{−2πijq/n}.
    pub fn dft(&self) -> Vec<Complex64> {
        let mut buf = self.samples.clone();
        FftPlanner::new()
            .plan_fft_forward(buf.len())
            .process(&mut buf);
        buf
    }

    /// Inverse of `dft` on the same grid.
    pub fn from_dft(&self, mut spec: Vec<Complex64>) -> GridField {
        let n = spec.len();
        FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
        let inv = 1.0 / n as f64;
        spec.iter_mut().for_each(|z| *z *= inv);
        GridField {
            samples: spec,
            ..self.clone()
        }
    }

    /// h·Σ g_j.
    pub fn integral(&self) -> Complex64 {
        let re: Vec<f64> = self.samples.iter().map(|z| z.re).collect();
        let im: Vec<f64> = self.samples.iter().map(|z| z.im).collect();
        Complex64::new(pairwise_sum(&re), pairwise_sum(&im)) * self.step
    }

    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        check_p(p)?;
        if p.is_infinite() {
            return Ok(self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        let v: Vec<f64> = self.samples.iter().map(|z| z.norm().powf(p)).collect();
        Ok((self.step * pairwise_sum(&v)).powf(1.0 / p))
    }

    /// (h/n)·Σ|G_q|², equal to h·Σ|g_j|² by Parseval.
    pub fn spectral_l2_norm_sq(&self) -> f64 {
        let v: Vec<f64> = self.dft().iter().map(|z| z.norm_sqr()).collect();
        self.step / self.len() as f64 * pairwise_sum(&v)
    }

    fn check_padding(&self, radius: f64) -> Result<()> {
        if !self.periodic && self.pad < radius {
            return Err(DeclabError::Padding {
                required: (radius / self.step).ceil() as usize,
                available: (self.pad / self.step).floor() as usize,
            });
        }
        Ok(())
    }

    /// Multiplies the spectrum by `symbol(ω)`. `radius` is the distance beyond
    /// which the symbol's kernel is below TAIL; the padding must cover it.
    pub fn convolve_symbol(
        &self,
        symbol: &(dyn Fn(f64) -> Complex64 + Sync),
        radius: f64,
    ) -> Result<GridField> {
        self.check_padding(radius)?;
        let mut spec = self.dft();
        spec.par_iter_mut()
            .enumerate()
            .for_each(|(q, z)| *z *= symbol(self.frequency(q)));
        let mut out = self.from_dft(spec);
        if !self.periodic {
            out.pad = self.pad - radius;
        }
        Ok(out)
    }

    /// (g*k)(x_i) = h Σ_j g(x_j) k(x_i − x_j). The kernel grid must share the
    /// step and have its origin on the lattice hℤ.
    pub fn convolve(&self, kernel: &GridField, radius: f64) -> Result<GridField> {
        let h = self.step;
        let off = kernel.origin / h;
        if (kernel.step - h).abs() > 1e-12 * h || (off - off.round()).abs() > 1e-9 {
            return Err(DeclabError::InvalidParameter(
                "incompatible kernel grid".into(),
            ));
        }
        self.check_padding(radius)?;
        let n = self.len();
        let off = off.round() as i64;
        let mut kk = vec![Complex64::new(0.0, 0.0); n];
        for (j, &z) in kernel.samples.iter().enumerate() {
            let idx = (off + j as i64).rem_euclid(n as i64) as usize;
            kk[idx] += z;
        }
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut kk);
        let mut spec = self.dft();
        for (a, b) in spec.iter_mut().zip(&kk) {
            *a *= b * h;
        }
        let mut out = self.from_dft(spec);
        if !self.periodic {
            out.pad = self.pad - radius;
        }
        Ok(out)
    }

    /// Binary little-endian dump: origin f64, step f64, len u64, then len
    /// complex64 values as (re f32, im f32).
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.origin.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for z in &self.samples {
            w.write_all(&(z.re as f32).to_le_bytes())?;
            w.write_all(&(z.im as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<GridField> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let origin = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let step = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut samples = Vec::with_capacity(len);
        let mut b4 = [0u8; 4];
        for _ in 0..len {
            r.read_exact(&mut b4)?;
            let re = f32::from_le_bytes(b4) as f64;
            r.read_exact(&mut b4)?;
            let im = f32::from_le_bytes(b4) as f64;
            samples.push(Complex64::new(re, im));
        }
        GridField::new(origin, step, samples, 0.0)
    }
}

/// Σ_I |f_I|² * ρ_I on a grid covering `core`. Each |f_I|² is band-limited
/// to 2ξ_I, so ρ̂_I is applied through a smooth cutoff that is 1 on that band
/// and 0 beyond 4ξ_I; the result is exact for the band-limited input while
/// the effective kernel stays short. The grid is padded by ρ's decay radius.
pub fn square_function(
    f: &AtomicSum,
    cells: &[FreqCell],
    rhos: &[Mollifier],
    core: Interval,
) -> Result<GridField> {
    if rhos.len() != cells.len() {
        return Err(DeclabError::InvalidParameter(format!(
            "{} mollifiers for {} cells",
            rhos.len(),
            cells.len()
        )));
    }
    let parts = split(f, cells)?;
    let samplers: Vec<Sampler> = parts.iter().map(Sampler::new).collect();
    let xi = samplers.iter().map(|s| s.xi).fold(0.0, f64::max);
    if xi <= 0.0 {
        return Err(DeclabError::InvalidParameter(
            "square function of a constant".into(),
        ));
    }
    let band = 2.0 * xi;
    let step = PI / (8.0 * band);
    let cut_radius = 300.0 / band;
    let radius = rhos.iter().map(|r| r.support_radius()).fold(0.0, f64::max) + cut_radius;
    let origin = core.lo - radius;
    let n = crate::numeric::next_pow2(((core.len() + 2.0 * radius) / step).ceil() as usize + 1);
    let zero =
        GridField::new(origin, step, vec![Complex64::new(0.0, 0.0); n], band)?.with_padding(radius);
    let mut total = vec![Complex64::new(0.0, 0.0); n];
    for ((s, part), rho) in samplers.iter().zip(&parts).zip(rhos) {
        if part.is_empty() {
            continue;
        }
        let g = GridField {
            samples: s
                .abs2_grid(origin, step, n)
                .into_iter()
                .map(|x| Complex64::new(x, 0.0))
                .collect(),
            ..zero.clone()
        };
        let bi = 2.0 * s.xi;
        let spec = rho.spectrum(2.0 * bi);
        let sym = |w: f64| Complex64::new(spec.eval(w) * plateau(w / bi), 0.0);
        let out = g.convolve_symbol(&sym, radius)?;
        for (t, z) in total.iter_mut().zip(&out.samples) {
            *t += z;
        }
    }
    Ok(GridField {
        samples: total,
        pad: 0.0,
        ..zero
    })
}
