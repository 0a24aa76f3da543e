//! Approximate-solution counting for a+b+c = d+e+f, the triple-product
//! distribution, AP intersections, and rich-point incidences of fat APs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DeclabError, Result};
use crate::fatap::{FatAP, FreqCell, GeomConsts};
use crate::intervals::{Interval, IntervalSet};

/// Brute force is a literal 6-fold loop; refused above this length.
pub const BRUTE_MAX_LEN: usize = 12;
/// Default memory cap for the sorted 3-fold sums.
pub const DEFAULT_BUDGET_BYTES: u64 = 2 << 30;
const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMethod {
    Brute,
    Mitm,
}

impl CountMethod {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "brute" => Ok(CountMethod::Brute),
            "mitm" => Ok(CountMethod::Mitm),
            _ => Err(DeclabError::Unknown(format!("count method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionCount {
    pub len: usize,
    pub tol: f64,
    /// Ordered 6-tuples with |s₁₂₃ − s₄₅₆| ≤ tol.
    pub total: u64,
    /// Tuples whose second triple is a permutation of the first.
    pub diagonal: u64,
    pub method: CountMethod,
}

/// Number of ordered pairs of triples that are permutations of each other.
pub fn diagonal_count(m: usize) -> u64 {
    let m = m as u64;
    let distinct = m * m.saturating_sub(1) * m.saturating_sub(2);
    let two_equal = 3 * m * m.saturating_sub(1);
    6 * distinct + 3 * two_equal + m
}

/// Summed in ascending index order, so permuted triples give bit-identical
/// sums and the diagonal survives tol = 0.
#[inline]
fn triple(a: &[f64], i: usize, j: usize, k: usize) -> f64 {
    let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
    let (lo, mid, hi) = if k <= lo {
        (k, lo, hi)
    } else if k <= hi {
        (lo, k, hi)
    } else {
        (lo, hi, k)
    };
    a[lo] + a[mid] + a[hi]
}

pub fn count_solutions(terms: &[f64], tol: f64, method: CountMethod) -> Result<SolutionCount> {
    count_solutions_with_budget(terms, tol, method, DEFAULT_BUDGET_BYTES)
}

/// Closed comparison |s₁₂₃ − s₄₅₆| ≤ tol. Both methods evaluate each triple
/// sum the same way, so they agree exactly, not just approximately.
pub fn count_solutions_with_budget(
    terms: &[f64],
    tol: f64,
    method: CountMethod,
    budget: u64,
) -> Result<SolutionCount> {
    if !(tol >= 0.0) || !tol.is_finite() {
        return Err(DeclabError::InvalidParameter(format!("tolerance {tol}")));
    }
    let m = terms.len();
    let total = match method {
        CountMethod::Brute => {
            if m > BRUTE_MAX_LEN {
                return Err(DeclabError::Budget(format!(
                    "brute force needs M <= {BRUTE_MAX_LEN}, got {m}"
                )));
            }
            brute(terms, tol)
        }
        CountMethod::Mitm => {
            let need = (m as u64).pow(3) * 8;
            if need > budget {
                return Err(DeclabError::Budget(format!(
                    "meet-in-the-middle needs {need} bytes of 3-fold sums, budget {budget}"
                )));
            }
            mitm(terms, tol)
        }
    };
    Ok(SolutionCount {
        len: m,
        tol,
        total,
        diagonal: diagonal_count(m),
        method,
    })
}

fn brute(a: &[f64], tol: f64) -> u64 {
    let m = a.len();
    let mut count = 0u64;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let s = triple(a, i, j, k);
                for x in 0..m {
                    for y in 0..m {
                        for z in 0..m {
                            if (s - triple(a, x, y, z)).abs() <= tol {
                                count += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    count
}

/// Both sides range over the same multiset of 3-fold sums, so one sorted
/// array serves as both; each element counts its closed tol-window.
fn mitm(a: &[f64], tol: f64) -> u64 {
    let m = a.len();
    let mut sums: Vec<f64> = (0..m * m * m)
        .into_par_iter()
        .map(|t| triple(a, t / (m * m), (t / m) % m, t % m))
        .collect();
    sums.par_sort_unstable_by(f64::total_cmp);
    let s = &sums;
    s.par_chunks(CHUNK)
        .map(|chunk| {
            let mut lo = s.partition_point(|&y| chunk[0] - y > tol);
            let mut hi = s.partition_point(|&y| y - chunk[0] <= tol);
            let mut acc = 0u64;
            for &x in chunk {
                while x - s[lo] > tol {
                    lo += 1;
                }
                while hi < s.len() && s[hi] - x <= tol {
                    hi += 1;
                }
                acc += (hi - lo) as u64;
            }
            acc
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleLevel {
    pub lambda: u64,
    pub e_lambda: u64,
    pub lambda_sq_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleProductStats {
    #[serde(rename = "N")]
    pub n: u64,
    pub len: usize,
    pub interval_len: f64,
    pub products: u64,
    pub nonempty_intervals: u64,
    pub total_intervals: u64,
    /// Dyadic λ = 1, 2, 4, ... up to the fullest interval.
    pub levels: Vec<TripleLevel>,
}

impl TripleProductStats {
    pub fn max_lambda_sq_e(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| l.lambda_sq_e)
            .fold(0.0, f64::max)
    }
}

/// Ordered triple products n₁n₂n₃ with N+1 ≤ nᵢ ≤ N+⌊N^{1/2}⌋, binned into
/// intervals [N³ + kcN, N³ + (k+1)cN). Products are exact u64 integers.
pub fn triple_product_stats(n: u64, c: f64) -> Result<TripleProductStats> {
    if !(4..=1 << 16).contains(&n) || !(c > 0.0) {
        return Err(DeclabError::InvalidParameter(format!(
            "N = {n} outside [4, 2^16] or c = {c} <= 0"
        )));
    }
    let m = crate::seqgen::short_len(n) as u64;
    let n3 = n * n * n;
    let width = c * n as f64;
    let mut bins: Vec<u64> = (0..m * m * m)
        .into_par_iter()
        .map(|t| {
            let p = (n + 1 + t / (m * m)) * (n + 1 + (t / m) % m) * (n + 1 + t % m);
            ((p - n3) as f64 / width).floor() as u64
        })
        .collect();
    bins.par_sort_unstable();
    let mut counts = Vec::new();
    let mut i = 0;
    while i < bins.len() {
        let j = i + bins[i..].partition_point(|&b| b == bins[i]);
        counts.push((j - i) as u64);
        i = j;
    }
    let top = (n + m) * (n + m) * (n + m) - n3;
    let total_intervals = (top as f64 / width).floor() as u64 + 1;
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut levels = Vec::new();
    let mut lambda = 1u64;
    while lambda <= max {
        let e = counts.iter().filter(|&&k| k >= lambda).count() as u64;
        levels.push(TripleLevel {
            lambda,
            e_lambda: e,
            lambda_sq_e: (lambda * lambda) as f64 * e as f64,
        });
        lambda *= 2;
    }
    Ok(TripleProductStats {
        n,
        len: m as usize,
        interval_len: width,
        products: m * m * m,
        nonempty_intervals: counts.len() as u64,
        total_intervals,
        levels,
    })
}

/// Terms within 1e−9·a of a multiple of a.
pub fn ap_intersection_count(terms: &[f64], a: f64) -> Result<usize> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(DeclabError::InvalidParameter(format!("AP step {a}")));
    }
    Ok(terms
        .iter()
        .filter(|&&t| (t - (t / a).round() * a).abs() <= 1e-9 * a)
        .count())
}

/// Upper bound for a long sequence against aℤ with a = N^{−α}, implied
/// constant 1: N^α for α ≤ 1/2, N^{1/3+α/3} for α ∈ [1/2, 2].
pub fn ap_intersection_bound(n: f64, alpha: f64) -> f64 {
    if alpha <= 0.5 {
        n.powf(alpha)
    } else {
        n.powf(1.0 / 3.0 + alpha / 3.0)
    }
}

/// One member of an incidence collection: P_I(x) for cell `cell`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedAp {
    pub cell: usize,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidenceLayout {
    /// Every P_I centered at 0.
    Bush,
    /// One P_I per cell with a uniform center in the ball of P(L).
    Random,
    /// `mult` parallel translates per cell, spaced by twice the thickness of
    /// P_I, all inside the P_J through the origin.
    Stacked { mult: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum IncidenceCase {
    Small { s: u64, m_s: u64 },
    Large,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceReport {
    pub r: usize,
    pub members: usize,
    /// Largest multiplicity over (J, P_J) pairs, after the hypothesis check.
    pub multiplicity: usize,
    pub q_r: f64,
    pub p_measure: f64,
    pub p_of_l_measure: f64,
    pub case: IncidenceCase,
    /// Smallest constant C making the matched case's inequalities hold.
    pub constant: f64,
    /// Constants for every candidate, case (1) by dyadic s then case (2).
    pub candidates: Vec<(IncidenceCase, f64)>,
}

/// Builds a collection inside P(L) for the given layout.
pub fn incidence_collection(
    cells: &[FreqCell],
    ball: &FatAP,
    layout: &IncidenceLayout,
    seed: u64,
    consts: &GeomConsts,
) -> Vec<PlacedAp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match layout {
        IncidenceLayout::Bush => cells
            .iter()
            .map(|c| PlacedAp {
                cell: c.index,
                x: ball.x0,
            })
            .collect(),
        IncidenceLayout::Random => cells
            .iter()
            .map(|c| PlacedAp {
                cell: c.index,
                x: ball.x0 + rng.gen_range(-ball.r..=ball.r),
            })
            .collect(),
        IncidenceLayout::Stacked { mult } => cells
            .iter()
            .flat_map(|c| {
                let d = c.p_i(0.0, consts).delta;
                (0..*mult).map(move |k| PlacedAp {
                    cell: c.index,
                    x: ball.x0 + 2.0 * d * k as f64,
                })
            })
            .collect(),
    }
}

/// Measure of the set covered by at least r of the sets, by an event sweep.
pub fn rich_measure(sets: &[IntervalSet], r: usize) -> f64 {
    if r == 0 {
        return f64::INFINITY;
    }
    let mut ev: Vec<(f64, i32)> = sets
        .iter()
        .flat_map(|s| s.parts().iter().flat_map(|iv| [(iv.lo, 1), (iv.hi, -1)]))
        .collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut depth = 0i64;
    let mut last = f64::NEG_INFINITY;
    let mut acc = Vec::new();
    for (x, d) in ev {
        if depth >= r as i64 {
            acc.push(x - last);
        }
        depth += d as i64;
        last = x;
    }
    crate::numeric::pairwise_sum(&acc)
}

/// Largest number of P_I ⊆ P_J(y) over small caps J ⊆ I and translates y
/// taken at the members' own centers; errors unless every count found is
/// 0 or a single common value.
fn check_multiplicity(
    members: &[PlacedAp],
    sets: &[IntervalSet],
    cells: &[FreqCell],
    caps: &[FreqCell],
    consts: &GeomConsts,
) -> Result<usize> {
    let mut common: Option<usize> = None;
    for cap in caps {
        let Some(owner) = cells
            .iter()
            .find(|c| c.first <= cap.first && cap.end <= c.end)
        else {
            continue;
        };
        for m in members.iter().filter(|m| m.cell == owner.index) {
            let pj = cap.p_i(m.x, consts).intervals()?;
            let k = members
                .iter()
                .zip(sets)
                .filter(|(o, s)| o.cell == owner.index && s.is_subset_of(&pj))
                .count();
            match common {
                None => common = Some(k),
                Some(c) if c == k || k == 0 => {}
                Some(c) => {
                    return Err(DeclabError::Hypothesis(format!(
                        "P_J contains {k} parallel members, another contains {c}"
                    )))
                }
            }
        }
    }
    Ok(common.unwrap_or(0))
}

/// M_s: most members lying in one P_s cell, where a P_s cell groups s
/// consecutive canonical cells and s·thickness-wide slots of the lattice
/// coset x mod 2π/v.
fn measured_m_s(members: &[PlacedAp], cells: &[FreqCell], s: u64, consts: &GeomConsts) -> u64 {
    let mut keys: Vec<(usize, i64)> = members
        .iter()
        .map(|m| {
            let p = cells[m.cell].p_i(0.0, consts);
            let slot = (m.x.rem_euclid(p.v) / (2.0 * s as f64 * p.delta)).floor() as i64;
            (m.cell / s as usize, slot)
        })
        .collect();
    keys.sort_unstable();
    let mut best = 0u64;
    let mut i = 0;
    while i < keys.len() {
        let j = i + keys[i..].partition_point(|k| *k == keys[i]);
        best = best.max((j - i) as u64);
        i = j;
    }
    best
}

/// Measures Q_r exactly and finds the case of the two-case incidence bound
/// that holds with the smallest constant.
#[allow(clippy::too_many_arguments)]
pub fn incidence_experiment(
    members: &[PlacedAp],
    cells: &[FreqCell],
    caps: &[FreqCell],
    ball: &FatAP,
    n: u64,
    l: usize,
    r: usize,
    consts: &GeomConsts,
) -> Result<IncidenceReport> {
    if members.is_empty() || r == 0 {
        return Err(DeclabError::InvalidParameter(
            "empty collection or r = 0".into(),
        ));
    }
    let pl = ball.intervals()?;
    let sets: Vec<IntervalSet> = members
        .iter()
        .map(|m| Ok(cells[m.cell].p_i(m.x, consts).intervals()?.intersect(&pl)))
        .collect::<Result<_>>()?;
    let mult = check_multiplicity(members, &sets, cells, caps, consts)?;
    let q_r = rich_measure(&sets, r);
    let p_measure = sets.iter().map(IntervalSet::measure).fold(0.0, f64::max);
    let pl_measure = pl.measure();
    let count = members.len() as f64;
    let rf = r as f64;
    let nf = n as f64;
    let lf = l as f64;
    let s_max = (lf.min(nf.sqrt() / lf)).max(1.0);
    let mut candidates = Vec::new();
    let mut s = 1u64;
    while s as f64 <= s_max {
        let m_s = measured_m_s(members, cells, s, consts).max(1);
        let sf = s as f64;
        let c1 = q_r / (m_s as f64 / (sf * rf * rf) * count * p_measure);
        let c2 = rf / (m_s as f64 * nf.sqrt() / (sf * sf * lf));
        candidates.push((IncidenceCase::Small { s, m_s }, c1.max(c2)));
        s *= 2;
    }
    let large = if q_r <= pl_measure * (1.0 + 1e-12) {
        rf / (count * p_measure / pl_measure)
    } else {
        f64::INFINITY
    };
    candidates.push((IncidenceCase::Large, large));
    let (case, constant) = candidates
        .iter()
        .cloned()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least the large case");
    Ok(IncidenceReport {
        r,
        members: members.len(),
        multiplicity: mult,
        q_r,
        p_measure,
        p_of_l_measure: pl_measure,
        case,
        constant,
        candidates,
    })
}

/// Interval helper for callers building single-P collections by hand.
pub fn single_interval(lo: f64, hi: f64) -> IntervalSet {
    IntervalSet::single(Interval::new(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fatap::{ball_p_of_l, canonical_partition, small_cap_partition};
    use crate::seqgen::{gen_ap_rich, gen_log, short_len};

    #[test]
    fn generic_four_terms_count_only_diagonal() {
        let a = [0.0, 1.0, 2.0f64.sqrt() * 10.0, std::f64::consts::PI * 100.0];
        for m in [CountMethod::Brute, CountMethod::Mitm] {
            let c = count_solutions(&a, 1e-12, m).unwrap();
            assert_eq!(c.total, 256);
            assert_eq!(c.diagonal, 256);
        }
    }

    #[test]
    fn permuted_triples_tie_at_zero_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for m in 2..=9 {
            let a: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            for method in [CountMethod::Brute, CountMethod::Mitm] {
                assert!(count_solutions(&a, 0.0, method).unwrap().total >= diagonal_count(m));
            }
        }
    }

    #[test]
    fn four_term_ap_count() {
        let a = [1.0, 2.0, 3.0, 4.0];
        for m in [CountMethod::Brute, CountMethod::Mitm] {
            assert_eq!(count_solutions(&a, 0.0, m).unwrap().total, 580);
        }
    }

    #[test]
    fn diagonal_counts_small() {
        // Independent count: pairs of ordered triples that sort to the same multiset.
        for m in 1..6usize {
            let mut n = 0u64;
            for t in 0..m.pow(3) {
                for u in 0..m.pow(3) {
                    let mut x = [t / (m * m), (t / m) % m, t % m];
                    let mut y = [u / (m * m), (u / m) % m, u % m];
                    x.sort();
                    y.sort();
                    n += (x == y) as u64;
                }
            }
            assert_eq!(diagonal_count(m), n, "m = {m}");
        }
    }

    #[test]
    fn mitm_budget_and_brute_limit() {
        let a: Vec<f64> = (0..13).map(|i| i as f64).collect();
        assert!(matches!(
            count_solutions(&a, 0.0, CountMethod::Brute),
            Err(DeclabError::Budget(_))
        ));
        assert!(matches!(
            count_solutions_with_budget(&a, 0.0, CountMethod::Mitm, 1000),
            Err(DeclabError::Budget(_))
        ));
    }

    #[test]
    fn triple_products_small_n() {
        let st = triple_product_stats(256, 1.0).unwrap();
        assert_eq!(st.products, 16u64.pow(3));
        let l1 = &st.levels[0];
        assert_eq!(l1.lambda, 1);
        assert_eq!(l1.e_lambda, st.nonempty_intervals);
        assert!(st.nonempty_intervals <= st.total_intervals.min(st.products));
        let covered: u64 = st.levels.iter().map(|l| l.lambda * l.e_lambda).sum();
        assert!(covered >= st.products);
    }

    #[test]
    fn ap_rich_multiples() {
        for n in [256u64, 1024] {
            let seq = gen_ap_rich(n).unwrap();
            let a = 1.0 / (n as f64).sqrt();
            let c = ap_intersection_count(&seq.terms, a).unwrap();
            assert!(c >= short_len(n) / 10, "N = {n}: {c}");
        }
        assert_eq!(ap_intersection_count(&[0.0, 0.3, 0.7], 10.0).unwrap(), 1);
    }

    #[test]
    fn rich_measure_sweep() {
        let a = single_interval(0.0, 2.0);
        let b = single_interval(1.0, 3.0);
        assert_eq!(rich_measure(&[a.clone(), b.clone()], 1), 3.0);
        assert_eq!(rich_measure(&[a, b], 2), 1.0);
    }

    #[test]
    fn single_member_incidence() {
        let seq = gen_log(1024).unwrap();
        let consts = GeomConsts::default();
        let cells = canonical_partition(&seq, 4, &consts).unwrap();
        let caps = small_cap_partition(&seq, 4, 4, &consts).unwrap();
        let ball = ball_p_of_l(&seq, 4, 0.0, &consts).unwrap();
        let m = [PlacedAp { cell: 3, x: 0.0 }];
        let rep = incidence_experiment(&m, &cells, &caps, &ball, 1024, 4, 1, &consts).unwrap();
        assert!((rep.q_r - rep.p_measure).abs() < 1e-9 * rep.p_measure);
        assert_eq!(rep.multiplicity, 1);
        assert!(rep.constant.is_finite());
    }

    #[test]
    fn bush_is_fully_rich_at_center() {
        let seq = gen_log(1024).unwrap();
        let consts = GeomConsts::default();
        let cells = canonical_partition(&seq, 4, &consts).unwrap();
        let ball = ball_p_of_l(&seq, 4, 0.0, &consts).unwrap();
        let members = incidence_collection(&cells, &ball, &IncidenceLayout::Bush, 0, &consts);
        let rep = incidence_experiment(
            &members,
            &cells,
            &cells,
            &ball,
            1024,
            4,
            cells.len(),
            &consts,
        )
        .unwrap();
        assert!(rep.q_r > 0.0);
    }
}
