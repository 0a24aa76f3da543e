//! Adapted kernels: Dirichlet products with exactly unit Fourier weights on a
//! core, the C^∞ plateau profile, the functions ψ_k whose spectrum is 1 on a
//! fat AP, wave-packet bumps φ_P and mollifiers ρ.
//!
//! Fourier convention: f̂(ω) = ∫ f(t) e^{−iωt} dt, so f(t) = (1/2π)∫ f̂(ω) e^{iωt} dω.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DeclabError, Result};
use crate::fatap::{FatAP, FreqCell, GeomConsts, Tile};
use crate::numeric::{gauss_legendre, pairwise_sum};

/// Largest Fourier support (in lattice units) a kernel may reach.
pub const MAX_SUPPORT: usize = 1 << 22;
/// Decay orders above this are indistinguishable in double precision here.
pub const MAX_ORDER: u32 = 6;

fn flat(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for x ≤ 0, 1 for x ≥ 1, all derivatives vanish at both ends.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = flat(x);
        a / (a + flat(1.0 - x))
    }
}

/// Even C^∞ plateau: 1 on [−1, 1], 0 outside (−2, 2).
pub fn plateau(u: f64) -> f64 {
    smooth_step(2.0 - u.abs())
}

// Trapezoid on [−2, 2] is spectrally accurate for the compactly supported
// smooth plateau; the node spacing resolves |s| ≤ PLATEAU_FT_SMAX with an
// aliasing margin where the transform is already below 1e−12.
const PLATEAU_FT_SMAX: f64 = 600.0;
const PLATEAU_FT_MARGIN: f64 = 400.0;

struct PlateauTable {
    h: f64,
    vals: Vec<f64>,
}

fn plateau_table() -> &'static PlateauTable {
    static T: OnceLock<PlateauTable> = OnceLock::new();
    T.get_or_init(|| {
        let h0 = 2.0 * PI / (PLATEAU_FT_SMAX + PLATEAU_FT_MARGIN);
        let n = (2.0 / h0).ceil() as usize;
        let h = 2.0 / n as f64;
        let vals = (0..=n).map(|m| plateau(m as f64 * h)).collect();
        PlateauTable { h, vals }
    })
}

/// Φ̃(s) = ∫ plateau(u) e^{ius} du; Φ̃(0) = 3. Beyond |s| = 600 the value is
/// below 1e−15 and returned as 0.
pub fn plateau_ft(s: f64) -> f64 {
    let s = s.abs();
    if s > PLATEAU_FT_SMAX {
        return 0.0;
    }
    let t = plateau_table();
    let rot = Complex64::from_polar(1.0, t.h * s);
    let mut ph = Complex64::new(1.0, 0.0);
    let mut acc = 0.0;
    for (m, &p) in t.vals.iter().enumerate().skip(1) {
        if m % 64 == 0 {
            ph = Complex64::from_polar(1.0, m as f64 * t.h * s);
        } else {
            ph *= rot;
        }
        acc += p * ph.re;
    }
    t.h * (t.vals[0] + 2.0 * acc)
}

const FT_TABLE_SMAX: f64 = 100.0;
const FT_TABLE_STEP: f64 = 0.004;

fn plateau_ft_table() -> &'static Vec<f64> {
    static T: OnceLock<Vec<f64>> = OnceLock::new();
    T.get_or_init(|| {
        let n = (FT_TABLE_SMAX / FT_TABLE_STEP).ceil() as usize + 3;
        (0..=n)
            .map(|i| plateau_ft(i as f64 * FT_TABLE_STEP))
            .collect()
    })
}

/// Tabulated Φ̃ with 4-point Lagrange interpolation (absolute error ≲ 1e−10),
/// zero beyond |s| = 100. Used where speed matters more than the last digits.
pub fn plateau_ft_fast(s: f64) -> f64 {
    let s = s.abs();
    if s >= FT_TABLE_SMAX {
        return 0.0;
    }
    let t = plateau_ft_table();
    let u = s / FT_TABLE_STEP;
    let i = (u.floor() as usize).max(1);
    let f = u - i as f64;
    let (a, b, c, d) = (t[i - 1], t[i], t[i + 1], t[i + 2]);
    // Nodes at −1, 0, 1, 2 relative to i.
    -a * f * (f - 1.0) * (f - 2.0) / 6.0 + b * (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0
        - c * (f + 1.0) * f * (f - 2.0) / 2.0
        + d * (f + 1.0) * f * (f - 1.0) / 6.0
}

/// ∫ plateau(u) plateau(u − d) du, exact up to round-off (smooth compact integrand).
pub fn plateau_autocorr(d: f64) -> f64 {
    let d = d.abs();
    if d >= 4.0 {
        return 0.0;
    }
    let n = 4000;
    let lo = d - 2.0;
    let h = (2.0 - lo) / n as f64;
    let vals: Vec<f64> = (0..=n)
        .map(|i| {
            let u = lo + i as f64 * h;
            plateau(u) * plateau(u - d)
        })
        .collect();
    h * pairwise_sum(&vals)
}

/// D_M(x) = Σ_{|j|≤M} e^{2πijx} = sin((2M+1)πx)/sin(πx), value 2M+1 on ℤ.
pub fn dirichlet_kernel(m: u64, x: f64) -> f64 {
    let r = x - x.round();
    if r == 0.0 {
        return (2 * m + 1) as f64;
    }
    // Period 1 since 2M+1 is odd; evaluate at the reduced argument.
    let k = (2 * m + 1) as f64;
    (k * PI * r).sin() / (PI * r).sin()
}

/// Direct 2M+1-term sum, the oracle for the closed form.
pub fn dirichlet_direct(m: u64, x: f64) -> f64 {
    let mut s = 1.0;
    for j in 1..=m {
        s += 2.0 * (2.0 * PI * j as f64 * x).cos();
    }
    s
}

/// D̃_k = D̃_{k−1}·D_{K_k}/d_k with K_k = ⌊8^{k−1}M/2⌋ and d_k the ℓ¹ mass of the
/// weights of D̃_{k−1}. This normalization makes every weight at |j| ≤ M exactly 1
/// and all weights lie in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TildeD {
    pub k: u32,
    pub m: u64,
    /// Factors K_1 = M, K_2, ..., K_k.
    pub factors: Vec<u64>,
    /// d_2, ..., d_k.
    pub norms: Vec<f64>,
    /// Fourier weights b_j for j = 0..=support (even in j).
    pub weights: Vec<f64>,
}

impl TildeD {
    pub fn new(k: u32, m: u64) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(DeclabError::InvalidParameter(format!(
                "tilde_D needs k, M >= 1, got k = {k}, M = {m}"
            )));
        }
        let mut factors = vec![m];
        let mut support = m as usize;
        for i in 2..=k {
            let kk = 8u64
                .checked_pow(i - 1)
                .and_then(|p| p.checked_mul(m))
                .map(|p| p / 2)
                .ok_or_else(|| DeclabError::Budget(format!("8^{} M overflows", i - 1)))?;
            support = support.saturating_add(kk as usize);
            factors.push(kk);
        }
        if support > MAX_SUPPORT {
            return Err(DeclabError::Budget(format!(
                "tilde_D support {support} exceeds {MAX_SUPPORT} frequencies"
            )));
        }
        // Weights on j ∈ [−S, S], stored two-sided during the convolutions.
        let mut w: Vec<f64> = vec![1.0; 2 * m as usize + 1];
        let mut norms = Vec::new();
        for &kk in &factors[1..] {
            let mass = pairwise_sum(&w);
            let s_old = (w.len() - 1) / 2;
            let s_new = s_old + kk as usize;
            // Box convolution via prefix sums.
            let mut prefix = vec![0.0; w.len() + 1];
            for (i, &x) in w.iter().enumerate() {
                prefix[i + 1] = prefix[i] + x;
            }
            let mut out = vec![0.0; 2 * s_new + 1];
            for (idx, o) in out.iter_mut().enumerate() {
                let j = idx as i64 - s_new as i64;
                let lo = (j - kk as i64).max(-(s_old as i64)) + s_old as i64;
                let hi = (j + kk as i64).min(s_old as i64) + s_old as i64;
                if lo <= hi {
                    *o = ((prefix[hi as usize + 1] - prefix[lo as usize]) / mass).min(1.0);
                }
            }
            norms.push(mass);
            w = out;
        }
        let s = (w.len() - 1) / 2;
        Ok(TildeD {
            k,
            m,
            factors,
            norms,
            weights: w[s..].to_vec(),
        })
    }

    pub fn support(&self) -> usize {
        self.weights.len() - 1
    }

    /// Σ_j b_j, equal to D̃_k(0).
    pub fn mass(&self) -> f64 {
        self.weights[0] + 2.0 * pairwise_sum(&self.weights[1..])
    }

    /// Closed-form product evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        let mut v = 1.0;
        for &kk in &self.factors {
            v *= dirichlet_kernel(kk, x);
        }
        for &d in &self.norms {
            v /= d;
        }
        v
    }

    /// Σ_j b_j e^{2πijx} summed directly from the weights.
    pub fn eval_from_weights(&self, x: f64) -> f64 {
        let mut s = self.weights[0];
        for (j, &b) in self.weights.iter().enumerate().skip(1) {
            s += 2.0 * b * (2.0 * PI * j as f64 * x).cos();
        }
        s
    }
}

pub fn tilde_d(k: u32, m: u64, x: f64) -> Result<f64> {
    Ok(TildeD::new(k, m)?.eval(x))
}

/// ψ(t) = e^{i x0 t} φ_δ(t) D̃_k(vt/2π) with φ̂_δ(ω) = plateau(ω/δ), so
/// ψ̂(ω) = Σ_j b_j plateau((ω − x0 − jv)/δ): equal to 1 on the δ-neighborhood
/// of x0 + jv for |j| ≤ M and supported in the 2δ-neighborhood of |j| ≤ S_k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedKernel {
    pub x0: f64,
    pub delta: f64,
    pub v: f64,
    pub m: u64,
    pub dk: TildeD,
}

impl AdaptedKernel {
    pub fn new(x0: f64, delta: f64, v: f64, m: u64, k: u32) -> Result<Self> {
        if !(delta > 0.0 && v > 0.0) || delta > v / 2.0 {
            return Err(DeclabError::InvalidParameter(format!(
                "adapted kernel needs 0 < delta <= v/2, got delta = {delta}, v = {v}"
            )));
        }
        if k == 0 || k > MAX_ORDER {
            return Err(DeclabError::InvalidParameter(format!(
                "order k = {k} outside 1..={MAX_ORDER}"
            )));
        }
        Ok(AdaptedKernel {
            x0,
            delta,
            v,
            m,
            dk: TildeD::new(k, m.max(1))?,
        })
    }

    /// Kernel for a frequency fat AP (x0, δ, v, R) with M = ⌊R/v⌋.
    pub fn for_fat_ap(p: &FatAP, k: u32) -> Result<Self> {
        let m = ((p.r / p.v).floor() as u64).max(1);
        AdaptedKernel::new(p.x0, p.delta, p.v, m, k)
    }

    pub fn order(&self) -> u32 {
        self.dk.k
    }

    /// Largest |ω − x0| in the spectrum.
    pub fn spectral_radius(&self) -> f64 {
        self.dk.support() as f64 * self.v + 2.0 * self.delta
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.delta / (2.0 * PI) * plateau_ft(self.delta * t)
    }

    /// Real envelope φ_δ(t)·D̃_k(vt/2π) without the modulation.
    pub fn envelope(&self, t: f64) -> f64 {
        self.phi(t) * self.dk.eval(self.v * t / (2.0 * PI))
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        Complex64::from_polar(self.envelope(t), self.x0 * t)
    }

    /// Exact spectrum.
    pub fn spectrum(&self, w: f64) -> f64 {
        let u = (w - self.x0) / self.v;
        let j0 = u.round() as i64;
        let reach = (2.0 * self.delta / self.v).ceil() as i64 + 1;
        let mut s = 0.0;
        for j in j0 - reach..=j0 + reach {
            let ja = j.unsigned_abs() as usize;
            if ja < self.dk.weights.len() {
                s += self.dk.weights[ja] * plateau((w - self.x0 - j as f64 * self.v) / self.delta);
            }
        }
        s
    }

    /// ‖ψ‖₂² by Parseval from the bump autocorrelations.
    pub fn l2_norm_sq(&self) -> f64 {
        let w = &self.dk.weights;
        let s = w.len() as i64 - 1;
        let reach = (4.0 * self.delta / self.v).ceil() as i64;
        let mut acc = Vec::new();
        for d in -reach..=reach {
            let a = plateau_autocorr(d as f64 * self.v / self.delta);
            if a == 0.0 {
                continue;
            }
            let mut c = 0.0;
            for j in -s..=s {
                let jj = j + d;
                if jj.abs() <= s {
                    c += w[j.unsigned_abs() as usize] * w[jj.unsigned_abs() as usize];
                }
            }
            acc.push(a * c);
        }
        self.delta / (2.0 * PI) * pairwise_sum(&acc)
    }
}

/// Kernel adapted to a cell's enclosing fat AP Ĩ.
pub fn build_psi(cell: &FreqCell, k: u32) -> Result<AdaptedKernel> {
    AdaptedKernel::for_fat_ap(&cell.enclosing, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCheck {
    /// max |ψ̂| outside the stated support, relative to max |ψ̂|.
    pub leakage: f64,
    /// max | ψ̂(x0 + jv) − 1 | over |j| ≤ M.
    pub core_defect: f64,
    pub samples: usize,
}

/// Discrete Fourier check of a sampled window: half-width chosen so that
/// |φ_δ| has fallen below 1e−10 of its peak, sampling 8× past Nyquist.
pub fn spectrum_check(kern: &AdaptedKernel) -> Result<SpectrumCheck> {
    use rustfft::FftPlanner;
    let xi_max = kern.x0.abs() + kern.spectral_radius();
    let h = PI / (8.0 * xi_max);
    let half = 250.0 / kern.delta;
    let n_half = (half / h).ceil() as usize;
    let n = crate::numeric::next_pow2(2 * n_half + 1);
    if n > 1 << 24 {
        return Err(DeclabError::Budget(format!(
            "spectrum check needs {n} samples"
        )));
    }
    // Demodulate so the window spectrum is centered at x0.
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..=2 * n_half {
        let t = (i as f64 - n_half as f64) * h;
        buf[i] = Complex64::new(kern.envelope(t), 0.0);
    }
    let raw = buf.clone();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    // Bin q ↔ ω = 2πq/(nh) (wrapped); phase from the window start −n_half·h.
    let dw = 2.0 * PI / (n as f64 * h);
    let mut peak: f64 = 0.0;
    let mut outside: f64 = 0.0;
    let s_sup = kern.dk.support() as f64;
    for (q, z) in buf.iter().enumerate() {
        let qq = if q > n / 2 {
            q as f64 - n as f64
        } else {
            q as f64
        };
        let w = qq * dw;
        let mag = z.norm() * h;
        peak = peak.max(mag);
        let u = w / kern.v;
        let lat = (u - u.round()).abs() * kern.v;
        let inside = lat <= 2.0 * kern.delta && w.abs() <= s_sup * kern.v + 2.0 * kern.delta;
        if !inside {
            outside = outside.max(mag);
        }
    }
    // Direct evaluation at the core lattice frequencies.
    let mut core: f64 = 0.0;
    for j in 0..=kern.m as i64 {
        let w = j as f64 * kern.v;
        let mut acc = Complex64::new(0.0, 0.0);
        let rot = Complex64::from_polar(1.0, -w * h);
        let mut ph = Complex64::from_polar(1.0, w * n_half as f64 * h);
        for (i, r) in raw.iter().enumerate().take(2 * n_half + 1) {
            if i % 1024 == 0 {
                ph = Complex64::from_polar(1.0, -w * (i as f64 - n_half as f64) * h);
            }
            acc += r * ph;
            ph *= rot;
        }
        core = core.max((acc.re * h - 1.0).abs().max(acc.im.abs() * h));
    }
    Ok(SpectrumCheck {
        leakage: outside / peak,
        core_defect: core,
        samples: 2 * n_half + 1,
    })
}

/// Shell-wise decay profile of |ψ_k|: for dyadic shells d(t, (2π/v)ℤ) ∈
/// [2^{-s−1}, 2^{-s}]·(2π/v) inside the central envelope, the maximum of
/// |ψ_k(t)|·(1 + d/(2π/(Mv)))^k/(Mδ).
pub fn decay_profile(kern: &AdaptedKernel, shells: usize, samples_per_shell: usize) -> Vec<f64> {
    let period = 2.0 * PI / kern.v;
    let width = period / kern.m as f64;
    let k = kern.order() as i32;
    let scale = kern.m as f64 * kern.delta;
    (0..shells)
        .map(|s| {
            let hi = period * 0.5f64.powi(s as i32 + 1);
            let lo = hi * 0.5;
            let mut best: f64 = 0.0;
            for i in 0..samples_per_shell {
                let d = lo + (hi - lo) * (i as f64 + 0.5) / samples_per_shell as f64;
                let val = kern.envelope(d).abs() * (1.0 + d / width).powi(k) / scale;
                best = best.max(val);
            }
            best
        })
        .collect()
}

/// ρ = |ψ|²/‖ψ‖₂² for the cell's kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub kernel: AdaptedKernel,
    pub norm_sq: f64,
}

impl Mollifier {
    pub fn new(kernel: AdaptedKernel) -> Self {
        let norm_sq = kernel.l2_norm_sq();
        Mollifier { kernel, norm_sq }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.kernel;
        let e =
            k.delta / (2.0 * PI) * plateau_ft_fast(k.delta * t) * k.dk.eval(k.v * t / (2.0 * PI));
        e * e / self.norm_sq
    }

    /// Beyond this |t| the envelope φ_δ² is below 1e−12 of its peak.
    pub fn support_radius(&self) -> f64 {
        80.0 / self.kernel.delta
    }

    /// ∫_a^b ρ by Gauss–Legendre on panels no wider than a tenth of the
    /// oscillation scale 2π/(S v).
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let r = self.support_radius();
        let (a, b) = (a.max(-r), b.min(r));
        if a >= b {
            return 0.0;
        }
        let (gx, gw) = gl20();
        let scale = 2.0 * PI / (self.kernel.spectral_radius() * 2.0);
        let panels = ((b - a) / scale).ceil().max(1.0) as usize;
        let ph = (b - a) / panels as f64;
        let mut acc = Vec::with_capacity(panels);
        for p in 0..panels {
            let c = a + (p as f64 + 0.5) * ph;
            let mut s = 0.0;
            for (x, w) in gx.iter().zip(gw) {
                s += w * self.eval(c + 0.5 * ph * x);
            }
            acc.push(0.5 * ph * s);
        }
        pairwise_sum(&acc)
    }
}

/// ρ̂ restricted to |ω| ≤ `omega_max`, from the lattice autocorrelation of the
/// kernel weights. Returns 0 outside that range.
#[derive(Debug, Clone)]
pub struct RhoSpectrum {
    delta: f64,
    v: f64,
    scale: f64,
    dmax: i64,
    corr: Vec<f64>,
}

impl RhoSpectrum {
    pub fn eval(&self, w: f64) -> f64 {
        let u = w / self.v;
        let reach = (4.0 * self.delta / self.v).ceil() as i64;
        let d0 = u.round() as i64;
        let mut s = 0.0;
        for d in d0 - reach..=d0 + reach {
            if d.abs() > self.dmax {
                continue;
            }
            let a = plateau_autocorr_fast((w - d as f64 * self.v) / self.delta);
            if a != 0.0 {
                s += self.corr[(d + self.dmax) as usize] * a;
            }
        }
        self.scale * s
    }
}

impl Mollifier {
    pub fn spectrum(&self, omega_max: f64) -> RhoSpectrum {
        let k = &self.kernel;
        let w = &k.dk.weights;
        let s = w.len() as i64 - 1;
        let reach = (4.0 * k.delta / k.v).ceil() as i64;
        let dmax = ((omega_max / k.v).ceil() as i64 + reach).min(2 * s);
        let corr = (-dmax..=dmax)
            .map(|d| {
                let lo = (-s).max(-s - d);
                let hi = s.min(s - d);
                let terms: Vec<f64> = (lo..=hi)
                    .map(|j| w[j.unsigned_abs() as usize] * w[(j + d).unsigned_abs() as usize])
                    .collect();
                pairwise_sum(&terms)
            })
            .collect();
        RhoSpectrum {
            delta: k.delta,
            v: k.v,
            scale: k.delta / (2.0 * PI * self.norm_sq),
            dmax,
            corr,
        }
    }
}

const AUTOCORR_STEP: f64 = 0.002;

fn autocorr_table() -> &'static Vec<f64> {
    static T: OnceLock<Vec<f64>> = OnceLock::new();
    T.get_or_init(|| {
        let n = (4.0 / AUTOCORR_STEP).round() as usize + 3;
        (0..=n)
            .map(|i| plateau_autocorr(i as f64 * AUTOCORR_STEP))
            .collect()
    })
}

/// Tabulated plateau autocorrelation, 4-point Lagrange (absolute error ≲ 1e−11).
pub fn plateau_autocorr_fast(d: f64) -> f64 {
    let d = d.abs();
    if d >= 4.0 {
        return 0.0;
    }
    let t = autocorr_table();
    let u = d / AUTOCORR_STEP;
    let i = (u.floor() as usize).max(1);
    let f = u - i as f64;
    let (a, b, c, e) = (t[i - 1], t[i], t[i + 1], t[i + 2]);
    -a * f * (f - 1.0) * (f - 2.0) / 6.0 + b * (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0
        - c * (f + 1.0) * f * (f - 2.0) / 2.0
        + e * (f + 1.0) * f * (f - 1.0) / 6.0
}

fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static G: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    G.get_or_init(|| gauss_legendre(20))
}

/// Mollifier of decay order `k` adapted to the cell.
pub fn build_rho(cell: &FreqCell, k: u32) -> Result<Mollifier> {
    Ok(Mollifier::new(build_psi(cell, k)?))
}

/// φ_P(x) = ∫_P ρ(x − y) dy for one tile.
pub fn wave_packet_value(rho: &Mollifier, tile: &Tile, x: f64) -> f64 {
    let r = rho.support_radius();
    let mut acc = Vec::new();
    for iv in tile.pieces() {
        if iv.lo > x + r || iv.hi < x - r {
            continue;
        }
        acc.push(rho.integrate(x - iv.hi, x - iv.lo));
    }
    pairwise_sum(&acc)
}

/// Wave packets of a cell: one bump per tile of the tiling of P_I.
#[derive(Debug, Clone)]
pub struct WavePackets {
    pub rho: Mollifier,
    pub tiles: Vec<Tile>,
}

impl WavePackets {
    pub fn new(cell: &FreqCell, tiles: Vec<Tile>, k: u32) -> Result<Self> {
        Ok(WavePackets {
            rho: build_rho(cell, k)?,
            tiles,
        })
    }

    pub fn value(&self, tile: usize, x: f64) -> f64 {
        wave_packet_value(&self.rho, &self.tiles[tile], x)
    }

    /// Σ_P φ_P(x), visiting only tiles that reach within ρ's support.
    pub fn sum(&self, x: f64) -> f64 {
        let r = self.rho.support_radius();
        let vals: Vec<f64> = self
            .tiles
            .iter()
            .filter(|t| t.ball.lo <= x + r && t.ball.hi >= x - r)
            .map(|t| wave_packet_value(&self.rho, t, x))
            .collect();
        pairwise_sum(&vals)
    }
}

/// Tiling of P_I(0) covering `core` plus ρ's support on both sides.
pub fn build_wave_packets(
    cell: &FreqCell,
    core: crate::intervals::Interval,
    k: u32,
    consts: &GeomConsts,
) -> Result<WavePackets> {
    let rho = build_rho(cell, k)?;
    let r = rho.support_radius();
    let p = cell.p_i(0.0, consts);
    let tiles = crate::fatap::tile(
        &p,
        crate::intervals::Interval::new(core.lo - r, core.hi + r),
    )?;
    Ok(WavePackets { rho, tiles })
}

/// η(ξ) = plateau(ξ/c): 1 on B_c(0), 0 outside B_{2c}(0); every level uses the same profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowPass {
    pub cutoff: f64,
}

impl LowPass {
    pub fn eval(&self, xi: f64) -> f64 {
        plateau(xi / self.cutoff)
    }
}

/// η_m with cutoff L_{m+1}/N.
pub fn build_eta(l_next: f64, n: f64) -> LowPass {
    LowPass { cutoff: l_next / n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plateau_shape() {
        assert_eq!(plateau(0.0), 1.0);
        assert_eq!(plateau(1.0), 1.0);
        assert_eq!(plateau(2.0), 0.0);
        assert!((plateau(1.5) - 0.5).abs() < 1e-15);
        assert!((plateau_ft(0.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_ft_matches_high_precision_values() {
        // Reference values from 30-digit adaptive quadrature.
        for (s, r) in [
            (5.0, 0.26332722685265886),
            (16.0, 0.010693563206044997),
            (32.0, 0.0001287612050805891),
            (64.0, -5.228489192300139e-06),
            (100.0, -5.675408965290633e-09),
            (200.0, -1.6829432043789195e-10),
        ] {
            assert!((plateau_ft(s) - r).abs() < 2e-13, "s = {s}");
        }
    }

    #[test]
    fn fast_table_tracks_direct_transform() {
        for i in 0..997 {
            let s = i as f64 * 0.1003;
            assert!(
                (plateau_ft_fast(s) - plateau_ft(s)).abs() < 1e-10,
                "s = {s}"
            );
        }
    }

    #[test]
    fn dirichlet_examples() {
        assert_eq!(dirichlet_kernel(2, 0.0), 5.0);
        assert!((dirichlet_kernel(1, 0.5) + 1.0).abs() < 1e-15);
        assert_eq!(dirichlet_kernel(3, 7.0), 7.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-3.0..3.0);
            let m = rng.gen_range(1..40);
            assert!((dirichlet_kernel(m, x) - dirichlet_direct(m, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn tilde_d_core_weights_are_one() {
        let t1 = TildeD::new(1, 5).unwrap();
        assert_eq!(t1.eval(0.123), dirichlet_kernel(5, 0.123));
        let t = TildeD::new(2, 4).unwrap();
        assert_eq!(t.support(), 4 + 16);
        for j in 0..=4 {
            assert_eq!(t.weights[j], 1.0);
        }
        assert!(t.weights.iter().all(|&b| (0.0..=1.0).contains(&b)));
        for x in [0.0, 0.01, 0.3, 0.77] {
            assert!((t.eval(x) - t.eval_from_weights(x)).abs() < 1e-9 * t.mass());
        }
        let t3 = TildeD::new(3, 4).unwrap();
        assert!(t3.weights[..=4].iter().all(|&b| b == 1.0));
        assert!((t3.eval(0.21) - t3.eval_from_weights(0.21)).abs() < 1e-9 * t3.mass());
    }

    #[test]
    fn tilde_d_decay_envelope() {
        for m in [8u64, 64] {
            let t = TildeD::new(2, m).unwrap();
            let mut sups = Vec::new();
            let mf = m as f64;
            for s in 0..(mf.log2() as i32 + 2) {
                let (lo, hi) = (0.5f64.powi(s + 2), 0.5f64.powi(s + 1));
                let best = (0..200)
                    .map(|i| lo + (hi - lo) * i as f64 / 199.0)
                    .map(|d| t.eval(d).abs() * (1.0 + d * mf).powi(2))
                    .fold(0.0, f64::max);
                sups.push(best / mf);
            }
            let mx = sups.iter().cloned().fold(0.0, f64::max);
            assert!(mx < 64.0, "M = {m}: {sups:?}");
        }
    }

    #[test]
    fn psi_at_zero_and_core() {
        let k = AdaptedKernel::new(0.3, 0.01, 0.1, 4, 2).unwrap();
        let md = 4.0 * 0.01;
        let v0 = k.envelope(0.0);
        assert!(v0 > 3.0 * md && v0 < 5.0 * md, "{v0}");
        for j in -4..=4 {
            assert!((k.spectrum(0.3 + j as f64 * 0.1) - 1.0).abs() < 1e-15);
        }
        assert_eq!(k.spectrum(0.3 + 0.05), 0.0);
    }

    #[test]
    fn spectrum_check_small_kernels() {
        for kk in 1..=3 {
            let k = AdaptedKernel::new(0.0, 0.02, 0.1, 4, kk).unwrap();
            let c = spectrum_check(&k).unwrap();
            assert!(c.leakage <= 1e-8, "k = {kk}: {c:?}");
            assert!(c.core_defect <= 1e-6, "k = {kk}: {c:?}");
        }
    }

    #[test]
    fn l2_norm_matches_quadrature() {
        let k = AdaptedKernel::new(0.0, 0.02, 0.1, 3, 2).unwrap();
        let rho = Mollifier::new(k.clone());
        let tot = rho.integrate(-rho.support_radius(), rho.support_radius());
        assert!((tot - 1.0).abs() < 1e-8, "{tot}");
    }

    #[test]
    fn wave_packets_partition_unity() {
        use crate::fatap::canonical_partition;
        use crate::seqgen::gen_log;
        let c = GeomConsts::default();
        let seq = gen_log(256).unwrap();
        let cells = canonical_partition(&seq, 4, &c).unwrap();
        let p = cells[1].p_i(0.0, &c);
        let core = crate::intervals::Interval::centered(0.0, p.r);
        let wp = build_wave_packets(&cells[1], core, 2, &c).unwrap();
        for i in 0..7 {
            let x = core.lo + core.len() * (i as f64 + 0.31) / 7.0;
            assert!((wp.sum(x) - 1.0).abs() < 1e-6, "x = {x}: {}", wp.sum(x));
        }
        let centre = wp
            .tiles
            .iter()
            .position(|t| t.ball_index == 0 && t.shift == 0)
            .unwrap();
        assert!(wp.value(centre, wp.tiles[centre].anchor) >= 0.5);
    }

    #[test]
    fn low_pass_profile() {
        let e = build_eta(4.0, 256.0);
        assert_eq!(e.eval(0.0), 1.0);
        assert_eq!(e.eval(8.0 / 256.0), 0.0);
        let e2 = build_eta(8.0, 256.0);
        for xi in [0.001, 0.01, 0.02, 0.03] {
            assert_eq!(e.eval(xi), e2.eval(xi * 2.0));
        }
    }
}
