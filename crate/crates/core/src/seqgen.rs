//! Generalized Dirichlet sequences: convex sequences whose first gap is of
//! order 1/N and whose second differences are of order θ/N².
//!
//! Terms are stored 0-based; `terms[0]` is what the literature calls a_1.
//! Every generator normalizes `terms[0] = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DeclabError, Result};

/// Default threshold below which the AP-rich construction is refused.
pub const DEFAULT_N0: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqKind {
    Log,
    ApRich,
    Random,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDirichletSeq {
    pub terms: Vec<f64>,
    #[serde(rename = "N")]
    pub param_n: u64,
    pub theta: f64,
    pub kind: SeqKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenDirichletSeq {
    pub fn custom(terms: Vec<f64>, param_n: u64, theta: f64) -> Self {
        GenDirichletSeq {
            terms,
            param_n,
            theta,
            kind: SeqKind::Custom,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_f64(&self) -> f64 {
        self.param_n as f64
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        validate(&self.terms, self.param_n, self.theta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sequence serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| DeclabError::InvalidParameter(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub first_gap: f64,
    pub min_second_diff: f64,
    pub max_second_diff: f64,
    /// 0-based index of the term at which the first violation is detected:
    /// 1 for the first gap, i + 2 for the second difference at i.
    pub first_violation: Option<usize>,
}

/// Checks the first gap against [1/(4N), 4/N] and every second difference
/// against [θ/(4N²), 4θ/N²], closed intervals.
pub fn validate(terms: &[f64], n: u64, theta: f64) -> Result<ValidationReport> {
    if terms.len() < 3 {
        return Err(DeclabError::TooShort { len: terms.len() });
    }
    if n == 0 || !(theta > 0.0) {
        return Err(DeclabError::InvalidParameter(format!(
            "validate needs N >= 1 and theta > 0, got N = {n}, theta = {theta}"
        )));
    }
    let nf = n as f64;
    let (g_lo, g_hi) = (1.0 / (4.0 * nf), 4.0 / nf);
    let (d_lo, d_hi) = (theta / (4.0 * nf * nf), 4.0 * theta / (nf * nf));
    let first_gap = terms[1] - terms[0];
    let mut first_violation = (!(g_lo <= first_gap && first_gap <= g_hi)).then_some(1);
    let mut min_d = f64::INFINITY;
    let mut max_d = f64::NEG_INFINITY;
    for i in 0..terms.len() - 2 {
        let d = (terms[i + 2] - terms[i + 1]) - (terms[i + 1] - terms[i]);
        min_d = min_d.min(d);
        max_d = max_d.max(d);
        if first_violation.is_none() && !(d_lo <= d && d <= d_hi) {
            first_violation = Some(i + 2);
        }
    }
    Ok(ValidationReport {
        valid: first_violation.is_none(),
        first_gap,
        min_second_diff: min_d,
        max_second_diff: max_d,
        first_violation,
    })
}

fn isqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Number of terms in a short sequence, ⌊N^{1/2}⌋.
pub fn short_len(n: u64) -> usize {
    isqrt(n) as usize
}

/// The literal shifted logarithms {log(N+n) − log(N+1)}, n = 1..⌊N^{1/2}⌋.
/// These are concave, so they fail `validate`; `gen_log` returns their reflection.
pub fn log_unreflected(n: u64) -> Vec<f64> {
    let m = short_len(n) as u64;
    let base = (n + 1) as f64;
    (1..=m).map(|k| (((k - 1) as f64) / base).ln_1p()).collect()
}

/// Reflection a_n ↦ a_M − a_{M+1−n}: turns a concave increasing sequence into
/// a convex increasing one with the same gaps in reverse order; keeps a_1 = 0.
pub fn reflect(terms: &[f64]) -> Vec<f64> {
    let m = terms.len();
    if m == 0 {
        return Vec::new();
    }
    (0..m).map(|i| terms[m - 1] - terms[m - 1 - i]).collect()
}

/// Short log sequence in its convex orientation:
/// a_n = log(N+M) − log(N+M+1−n), n = 1..M, M = ⌊N^{1/2}⌋.
pub fn gen_log(n: u64) -> Result<GenDirichletSeq> {
    if n < 4 {
        return Err(DeclabError::InvalidParameter(format!(
            "gen_log needs N >= 4, got {n}"
        )));
    }
    let m = short_len(n) as u64;
    let top = (n + m) as f64;
    // log(top) − log(top − k) = −ln(1 − k/top), evaluated without cancellation.
    let terms = (0..m).map(|k| -(-(k as f64) / top).ln_1p()).collect();
    Ok(GenDirichletSeq {
        terms,
        param_n: n,
        theta: 1.0,
        kind: SeqKind::Log,
        seed: None,
    })
}

/// g(x) = (4x + (N^{1/2} − (N−4x)^{1/2})²)/(4N), rewritten as
/// x/N + 4x²/(N(N^{1/2} + (N−4x)^{1/2})²) to avoid cancellation.
pub fn ap_rich_g(n: f64, x: f64) -> f64 {
    let s = n.sqrt() + (n - 4.0 * x).sqrt();
    x / n + 4.0 * x * x / (n * s * s)
}

/// a_n = g(n) for n = 0..⌊N/8⌋, refused below `DEFAULT_N0`.
///
/// The tail of this range is not certified: the second differences exceed
/// 4/N² once n passes roughly 0.092·N. See [`certified_prefix`].
pub fn gen_ap_rich(n: u64) -> Result<GenDirichletSeq> {
    gen_ap_rich_with_n0(n, DEFAULT_N0)
}

pub fn gen_ap_rich_with_n0(n: u64, n0: u64) -> Result<GenDirichletSeq> {
    if n < n0 {
        return Err(DeclabError::NeedsLargeN { n, n0 });
    }
    let nf = n as f64;
    let terms = (0..=n / 8).map(|k| ap_rich_g(nf, k as f64)).collect();
    Ok(GenDirichletSeq {
        terms,
        param_n: n,
        theta: 1.0,
        kind: SeqKind::ApRich,
        seed: None,
    })
}

/// Indices n_k = k N^{1/2} − k² with k ≤ N^{1/2}/2 that fall inside the sequence.
pub fn ap_rich_indices(n: u64, len: usize) -> Vec<(u64, usize)> {
    let r = isqrt(n);
    (0..=r / 2)
        .map(|k| (k, (k * r - k * k) as usize))
        .filter(|&(_, idx)| idx < len)
        .collect()
}

/// Longest prefix that passes `validate`. Errors if fewer than three terms survive.
pub fn certified_prefix(seq: &GenDirichletSeq) -> Result<GenDirichletSeq> {
    let rep = seq.validate()?;
    let mut out = seq.clone();
    if let Some(bad) = rep.first_violation {
        if bad < 3 {
            return Err(DeclabError::Hypothesis(format!(
                "no certified prefix: violation at term {bad}"
            )));
        }
        out.terms.truncate(bad);
    }
    Ok(out)
}

/// Extends to `len` terms by repeating the last second difference.
pub fn extend_constant_second_diff(seq: &GenDirichletSeq, len: usize) -> Result<GenDirichletSeq> {
    let t = &seq.terms;
    if t.len() < 3 {
        return Err(DeclabError::TooShort { len: t.len() });
    }
    let k = t.len();
    let d = (t[k - 1] - t[k - 2]) - (t[k - 2] - t[k - 3]);
    let mut out = seq.clone();
    let mut gap = t[k - 1] - t[k - 2];
    while out.terms.len() < len {
        gap += d;
        let last = *out.terms.last().unwrap();
        out.terms.push(last + gap);
    }
    Ok(out)
}

/// Samples the admissible class: first gap uniform on [1/(2N), 2/N], second
/// differences i.i.d. uniform on [θ/(2N²), 2θ/N²], ⌊N^{1/2}⌋ terms.
pub fn gen_random(n: u64, theta: f64, seed: u64) -> Result<GenDirichletSeq> {
    gen_random_len(n, theta, seed, short_len(n))
}

pub fn gen_random_len(n: u64, theta: f64, seed: u64, len: usize) -> Result<GenDirichletSeq> {
    if n < 4 || !(theta > 0.0 && theta <= 1.0) {
        return Err(DeclabError::InvalidParameter(format!(
            "gen_random needs N >= 4 and theta in (0, 1], got N = {n}, theta = {theta}"
        )));
    }
    let nf = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::with_capacity(len);
    terms.push(0.0);
    let mut gap = rng.gen_range(0.5 / nf..=2.0 / nf);
    for _ in 1..len {
        let last = *terms.last().unwrap();
        terms.push(last + gap);
        gap += rng.gen_range(0.5 * theta / (nf * nf)..=2.0 * theta / (nf * nf));
    }
    Ok(GenDirichletSeq {
        terms,
        param_n: n,
        theta,
        kind: SeqKind::Random,
        seed: Some(seed),
    })
}

/// {K²(a_{start+i} − a_start)}, i < count, as a sequence with Ñ = N/K² and
/// θ̃ = θ/K². Gaps scale by K² and so do the Def. bounds, so the segment
/// validates whenever the original does.
pub fn rescale_segment(
    seq: &GenDirichletSeq,
    k: u64,
    start: usize,
    count: usize,
) -> Result<GenDirichletSeq> {
    if k == 0 {
        return Err(DeclabError::Rescale("K must be >= 1".into()));
    }
    let k2 = k * k;
    if seq.param_n % k2 != 0 || seq.param_n / k2 < 4 {
        return Err(DeclabError::Rescale(format!(
            "K^2 = {k2} does not give an integral N/K^2 >= 4 for N = {}",
            seq.param_n
        )));
    }
    if count == 0 || start + count > seq.len() {
        return Err(DeclabError::Rescale(format!(
            "segment [{start}, {}) outside sequence of length {}",
            start + count,
            seq.len()
        )));
    }
    let s = k2 as f64;
    let base = seq.terms[start];
    let terms = seq.terms[start..start + count]
        .iter()
        .map(|&a| s * (a - base))
        .collect();
    Ok(GenDirichletSeq {
        terms,
        param_n: seq.param_n / k2,
        theta: seq.theta / s,
        kind: seq.kind,
        seed: seq.seed,
    })
}

/// Affine normalization a ↦ (a − a_1)/(N(a_2 − a_1)) so that a_1 = 0 and
/// a_2 − a_1 = 1/N exactly; used by the transference lift.
pub fn normalize_first_gap(seq: &GenDirichletSeq) -> Result<GenDirichletSeq> {
    if seq.len() < 2 {
        return Err(DeclabError::TooShort { len: seq.len() });
    }
    let gap = seq.terms[1] - seq.terms[0];
    if !(gap > 0.0) {
        return Err(DeclabError::InvalidParameter(
            "non-increasing sequence".into(),
        ));
    }
    let scale = 1.0 / (seq.n_f64() * gap);
    let base = seq.terms[0];
    let mut out = seq.clone();
    for t in &mut out.terms {
        *t = (*t - base) * scale;
    }
    out.terms[1] = 1.0 / seq.n_f64();
    Ok(out)
}
