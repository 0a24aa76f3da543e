//! Both sides of the decoupling-type inequalities, measured on concrete
//! families, and the closed-form bounds they are compared against. Implied
//! constants in bound formulas are 1.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DeclabError, Result};
use crate::fatap::{omega, transversal, FatAP, FreqCell, GeomConsts, WeightSpec};
use crate::field::{
    kappa_window, lp_norm, lp_norms, product_lp_norm, split, AtomicSum, Envelope, Region,
    DEFAULT_ENVELOPE_ORDER,
};
use crate::intervals::{Interval, IntervalSet};
use crate::numeric::pairwise_sum;

pub use crate::numeric::ExponentFit;

pub const DEFAULT_KAPPA: f64 = 4.0;
/// Weight order used for every W_{P,k} in the local inequalities.
pub const WEIGHT_ORDER: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// One unit-height bump per ball of Ω.
    ConstantBump,
    /// One Rademacher-signed bump per cell, at the cell's first ball.
    RandomSignSmallball,
    /// Constant bumps on the balls of cell 0 only.
    SingleCell,
    /// One coefficient per ball of Ω, in order.
    Custom(Vec<f64>),
}

impl FamilyKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "constant_bump" => Ok(FamilyKind::ConstantBump),
            "random_sign_smallball" => Ok(FamilyKind::RandomSignSmallball),
            "single_cell" => Ok(FamilyKind::SingleCell),
            _ => Err(DeclabError::Unknown(format!("family kind {name:?}"))),
        }
    }
}

fn bump_envelope(cells: &[FreqCell]) -> Result<Envelope> {
    let c = cells
        .first()
        .ok_or_else(|| DeclabError::InvalidParameter("empty cell list".into()))?;
    Envelope::new(c.ball_radius, DEFAULT_ENVELOPE_ORDER)
}

/// Test functions whose spectra are bumps adapted to the balls of the cells.
/// Deterministic per seed; only the random-sign kind reads it.
pub fn extremal_family(kind: &FamilyKind, cells: &[FreqCell], seed: u64) -> Result<AtomicSum> {
    let env = bump_envelope(cells)?;
    let one = Complex64::new(1.0, 0.0);
    let atoms: Vec<(f64, Complex64)> = match kind {
        FamilyKind::ConstantBump => cells
            .iter()
            .flat_map(|c| c.centers.iter().map(move |&a| (a, one)))
            .collect(),
        FamilyKind::SingleCell => cells[0].centers.iter().map(|&a| (a, one)).collect(),
        FamilyKind::RandomSignSmallball => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            cells
                .iter()
                .map(|c| {
                    let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    (c.centers[0], Complex64::new(s, 0.0))
                })
                .collect()
        }
        FamilyKind::Custom(coef) => {
            let centers: Vec<f64> = cells
                .iter()
                .flat_map(|c| c.centers.iter().copied())
                .collect();
            if coef.len() != centers.len() {
                return Err(DeclabError::InvalidParameter(format!(
                    "{} coefficients for {} balls",
                    coef.len(),
                    centers.len()
                )));
            }
            centers
                .into_iter()
                .zip(coef)
                .map(|(a, &c)| (a, Complex64::new(c, 0.0)))
                .collect()
        }
    };
    AtomicSum::new(atoms, Some(env))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioParams {
    #[serde(rename = "N")]
    pub n: u64,
    pub theta: f64,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "L1", default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<usize>,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub id: String,
    pub params: RatioParams,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub paper_bound: Option<f64>,
    /// Relative quadrature error carried from the norms, where applicable.
    pub rel_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl RatioReport {
    pub fn new(id: &str, params: RatioParams, lhs: f64, rhs: f64) -> Result<Self> {
        if !(rhs > 0.0) {
            return Err(DeclabError::ZeroRhs(id.to_string()));
        }
        Ok(RatioReport {
            id: id.to_string(),
            params,
            lhs,
            rhs,
            ratio: lhs / rhs,
            paper_bound: None,
            rel_error: 0.0,
            note: None,
        })
    }

    /// Both sides zero: a vacuous instance, reported with ratio 0.
    pub fn vacuous(id: &str, params: RatioParams) -> Self {
        RatioReport {
            id: id.to_string(),
            params,
            lhs: 0.0,
            rhs: 0.0,
            ratio: 0.0,
            paper_bound: None,
            rel_error: 0.0,
            note: Some("vacuous".into()),
        }
    }

    pub(crate) fn with_bound(mut self, b: f64) -> Self {
        self.paper_bound = Some(b);
        self
    }

    pub(crate) fn with_error(mut self, e: f64) -> Self {
        self.rel_error = e;
        self
    }

    pub(crate) fn with_note(mut self, s: &str) -> Self {
        self.note = Some(s.to_string());
        self
    }
}

/// [−κW, κW] with W = N²/(L²θ).
pub fn default_window(n: u64, l: usize, theta: f64) -> Region {
    Region::Interval(kappa_window(n as f64, l as f64, theta, DEFAULT_KAPPA))
}

fn rel(r: &crate::field::NormReport) -> f64 {
    if r.value > 0.0 {
        r.error / r.value
    } else {
        0.0
    }
}

/// ‖Σ f_I‖_p against (Σ‖f_I‖_p²)^{1/2} over one region. Cells with f_I = 0
/// contribute exactly 0 to the right side.
pub fn decoupling_ratio(
    f: &AtomicSum,
    cells: &[FreqCell],
    p: f64,
    region: &Region,
    params: RatioParams,
) -> Result<RatioReport> {
    let (lhs, rhs_sq, err) = lhs_and_aggregate(f, cells, p, 2.0, region)?;
    Ok(RatioReport::new(
        "decoupling",
        RatioParams { p, ..params },
        lhs,
        rhs_sq.sqrt(),
    )?
    .with_error(err))
}

/// Returns (‖f‖_p, Σ‖f_I‖_p^q, worst relative error).
fn lhs_and_aggregate(
    f: &AtomicSum,
    cells: &[FreqCell],
    p: f64,
    q: f64,
    region: &Region,
) -> Result<(f64, f64, f64)> {
    if p < 2.0 {
        return Err(DeclabError::InvalidParameter(format!("p = {p} < 2")));
    }
    let parts = split(f, cells)?;
    let whole = lp_norm(f, p, region, false)?;
    let mut err = rel(&whole);
    let mut terms = Vec::with_capacity(parts.len());
    for part in parts.iter().filter(|g| !g.is_empty()) {
        let r = lp_norm(part, p, region, false)?;
        err = err.max(rel(&r));
        terms.push(r.value.powf(q));
    }
    Ok((whole.value, pairwise_sum(&terms), err))
}

/// Same as `decoupling_ratio` for several exponents from shared samples.
pub fn decoupling_ratios(
    f: &AtomicSum,
    cells: &[FreqCell],
    ps: &[f64],
    region: &Region,
    params: RatioParams,
) -> Result<Vec<RatioReport>> {
    let parts = split(f, cells)?;
    let whole = lp_norms(f, ps, region, false)?;
    let mut sq = vec![Vec::new(); ps.len()];
    let mut errs: Vec<f64> = whole.iter().map(rel).collect();
    for part in parts.iter().filter(|g| !g.is_empty()) {
        for (k, r) in lp_norms(part, ps, region, false)?.iter().enumerate() {
            sq[k].push(r.value * r.value);
            errs[k] = errs[k].max(rel(r));
        }
    }
    ps.iter()
        .enumerate()
        .map(|(k, &p)| {
            Ok(RatioReport::new(
                "decoupling",
                RatioParams {
                    p,
                    ..params.clone()
                },
                whole[k].value,
                pairwise_sum(&sq[k]).sqrt(),
            )?
            .with_error(errs[k]))
        })
        .collect()
}

/// The refined inequality on X ⊆ P(L):
/// ‖f‖_{L^p(X)} against (sup_{x∈X} Σ_I ‖f_I‖²_{avg L²(W_{P_I(x)})})^{1/2−1/p}
/// · (Σ_I ‖f_I‖²_{L²(W_{P(L)})})^{1/p}. The sup is taken over `grid` points
/// of X, so the right side is a lower estimate of the true one.
#[allow(clippy::too_many_arguments)]
pub fn refined_decoupling_ratio(
    f: &AtomicSum,
    cells: &[FreqCell],
    x_set: &IntervalSet,
    p_of_l: &FatAP,
    p: f64,
    grid: usize,
    consts: &GeomConsts,
    params: RatioParams,
) -> Result<RatioReport> {
    let hull = x_set
        .hull()
        .ok_or_else(|| DeclabError::InvalidParameter("empty X".into()))?;
    let parts = split(f, cells)?;
    let mut lhs_terms = Vec::new();
    for iv in x_set.parts() {
        lhs_terms.push(lp_norm(f, p, &Region::Interval(*iv), false)?.integral);
    }
    let lhs = pairwise_sum(&lhs_terms).powf(1.0 / p);
    let xs: Vec<f64> = (0..grid.max(1))
        .map(|i| hull.lo + (i as f64 + 0.5) * hull.len() / grid.max(1) as f64)
        .filter(|&x| x_set.contains(x))
        .collect();
    let mut sup: f64 = 0.0;
    for &x in &xs {
        let mut acc = Vec::new();
        for (cell, part) in cells.iter().zip(&parts) {
            if part.is_empty() {
                continue;
            }
            let ws = WeightSpec::new(cell.p_i(x, consts), WEIGHT_ORDER)?;
            acc.push(lp_norm(part, 2.0, &Region::Weight(ws), true)?.value.powi(2));
        }
        sup = sup.max(pairwise_sum(&acc));
    }
    let wl = WeightSpec::new(*p_of_l, WEIGHT_ORDER)?;
    let mut global = Vec::new();
    for part in parts.iter().filter(|g| !g.is_empty()) {
        global.push(
            lp_norm(part, 2.0, &Region::Weight(wl), false)?
                .value
                .powi(2),
        );
    }
    let rhs = sup.powf(0.5 - 1.0 / p) * pairwise_sum(&global).powf(1.0 / p);
    Ok(
        RatioReport::new("refined_decoupling", RatioParams { p, ..params }, lhs, rhs)?
            .with_note(&format!("sup over {} grid points of X", xs.len())),
    )
}

/// Two-term small-cap bound with implied constant 1. q = p, or L1 = 1 with
/// 1/q + 3/p ≤ 1; p ≥ 4.
pub fn small_cap_bound(n: f64, l: f64, l1: f64, p: f64, q: f64) -> Result<f64> {
    let ok = p >= 4.0 && ((q - p).abs() < 1e-12 || (l1 == 1.0 && 1.0 / q + 3.0 / p <= 1.0 + 1e-12));
    if !ok {
        return Err(DeclabError::Unsupported(format!(
            "p = {p}, q = {q}, L1 = {l1}"
        )));
    }
    let first =
        n.powf(0.5 - 0.5 / q - 1.5 / p) * l.powf(2.0 / p) / l1.powf(1.0 - 1.0 / p - 1.0 / q);
    let second = (n.sqrt() / l1).powf(0.5 - 1.0 / q);
    Ok(first + second)
}

/// ‖Σ f_J‖_p against (Σ‖f_J‖_p^q)^{1/q} over small caps J.
pub fn small_cap_ratio(
    f: &AtomicSum,
    caps: &[FreqCell],
    p: f64,
    q: f64,
    region: &Region,
    params: RatioParams,
) -> Result<RatioReport> {
    let l1 = params.l1.unwrap_or(1) as f64;
    let bound = small_cap_bound(params.n as f64, params.l as f64, l1, p, q)?;
    let (lhs, agg, err) = lhs_and_aggregate(f, caps, p, q, region)?;
    Ok(RatioReport::new(
        "small_cap",
        RatioParams {
            p,
            q: Some(q),
            ..params
        },
        lhs,
        agg.powf(1.0 / q),
    )?
    .with_bound(bound)
    .with_error(err))
}

/// Flat decoupling into unit intervals U = [j, j+1) ⊂ [0, M):
/// ‖f‖_p against M^{1/2−1/p}(Σ_U ‖f_U‖_p²)^{1/2}.
pub fn flat_decoupling_ratio(
    f: &AtomicSum,
    m: usize,
    p: f64,
    region: &Region,
    params: RatioParams,
) -> Result<RatioReport> {
    let units = unit_cells(f, m)?;
    let (lhs, agg, err) = lhs_and_aggregate(f, &units, p, 2.0, region)?;
    let factor = (m as f64).powf(0.5 - 1.0 / p);
    Ok(RatioReport::new(
        "flat_decoupling",
        RatioParams { p, ..params },
        lhs,
        factor * agg.sqrt(),
    )?
    .with_bound(1.0)
    .with_error(err))
}

/// Pseudo-cells [j, j+1), j < m, for flat decoupling; every atom support
/// must sit inside one of them.
fn unit_cells(f: &AtomicSum, m: usize) -> Result<Vec<FreqCell>> {
    for i in 0..f.len() {
        let s = f.atom_support(i);
        let j = s.lo.floor();
        if s.lo < 0.0 || s.hi >= m as f64 || s.hi >= j + 1.0 {
            return Err(DeclabError::Hypothesis(format!(
                "atom support [{}, {}] not inside one unit interval of [0, {m})",
                s.lo, s.hi
            )));
        }
    }
    (0..m)
        .map(|j| {
            let iv = Interval::new(j as f64, j as f64 + 1.0 - 1e-12);
            Ok(FreqCell {
                index: j,
                first: j,
                end: j + 1,
                centers: vec![j as f64 + 0.5],
                ball_radius: 0.5,
                balls: IntervalSet::single(iv),
                v: 1.0,
                enclosing: FatAP::new(j as f64, 0.5, 1.0, 0.5)?,
            })
        })
        .collect()
}

/// A function on cell I built from `mult` wave packets placed at distinct
/// P_I-shifts inside one P_J translate, random unimodular signs. Returns the
/// function and the small caps of L1 consecutive balls.
pub fn multiplicity_family(
    cell: &FreqCell,
    l1: usize,
    mult: usize,
    seed: u64,
    consts: &GeomConsts,
) -> Result<(AtomicSum, Vec<FreqCell>)> {
    let l = cell.centers.len();
    if l1 == 0 || l % l1 != 0 {
        return Err(DeclabError::InvalidParameter(format!(
            "L1 = {l1} must divide L = {l}"
        )));
    }
    let pi = cell.p_i(0.0, consts);
    let period = pi.v;
    let shifts_i = (period / (2.0 * pi.delta)).ceil().max(1.0) as usize;
    let per_j = (shifts_i * l1 / l).max(1);
    let room = shifts_i / per_j;
    if mult == 0 || mult > room {
        return Err(DeclabError::Hypothesis(format!(
            "multiplicity {mult} outside 1..={room} P_I-shifts per P_J translate"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = period / shifts_i as f64;
    let signs: Vec<f64> = (0..mult)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let atoms = cell
        .centers
        .iter()
        .map(|&a| {
            let c: Complex64 = signs
                .iter()
                .enumerate()
                .map(|(m, &s)| s * Complex64::from_polar(1.0, -a * m as f64 * step))
                .sum();
            (a, c)
        })
        .collect();
    let env = Envelope::new(cell.ball_radius, DEFAULT_ENVELOPE_ORDER)?;
    let f = AtomicSum::new(atoms, Some(env))?;
    let caps = cell
        .centers
        .chunks(l1)
        .enumerate()
        .map(|(j, ch)| {
            let balls = IntervalSet::from_intervals(
                ch.iter()
                    .map(|&a| Interval::centered(a, cell.ball_radius))
                    .collect(),
            );
            FreqCell {
                index: j,
                first: cell.first + j * l1,
                end: cell.first + (j + 1) * l1,
                centers: ch.to_vec(),
                ball_radius: cell.ball_radius,
                balls,
                v: cell.v,
                enclosing: cell.enclosing,
            }
        })
        .collect();
    Ok((f, caps))
}

/// ‖f_I‖_p against M^{1/p−1/2}(L/L1)^{1−1/p−1/q}(Σ_J‖f_J‖_p^q)^{1/q}.
pub fn refined_flat_ratio(
    f: &AtomicSum,
    caps: &[FreqCell],
    mult: usize,
    p: f64,
    q: f64,
    region: &Region,
    params: RatioParams,
) -> Result<RatioReport> {
    let l = params.l as f64;
    let l1 = params.l1.unwrap_or(1) as f64;
    let factor = (mult as f64).powf(1.0 / p - 0.5) * (l / l1).powf(1.0 - 1.0 / p - 1.0 / q);
    let (lhs, agg, err) = lhs_and_aggregate(f, caps, p, q, region)?;
    Ok(RatioReport::new(
        "refined_flat",
        RatioParams {
            p,
            q: Some(q),
            ..params
        },
        lhs,
        factor * agg.powf(1.0 / q),
    )?
    .with_bound(1.0)
    .with_error(err))
}

/// One weighted member of a Kakeya family: c·1_{P_I(x)}.
#[derive(Debug, Clone)]
pub struct KakeyaMember {
    pub cell: FreqCell,
    pub x: f64,
    pub weight: f64,
}

/// ⨍_{P(L)} g₁g₂ against ⨍_{2P(L)} g₁ · ⨍_{2P(L)} g₂ for g_k = Σ c·1_{P_I(x)},
/// every measure an exact interval merge.
pub fn bilinear_kakeya_check(
    fam1: &[KakeyaMember],
    fam2: &[KakeyaMember],
    ball: &FatAP,
    n: u64,
    consts: &GeomConsts,
    params: RatioParams,
) -> Result<RatioReport> {
    for a in fam1 {
        for b in fam2 {
            if !transversal(&a.cell, &b.cell, n, consts) {
                return Err(DeclabError::NotTransversal(a.cell.index, b.cell.index));
            }
        }
    }
    if fam1.is_empty() || fam2.is_empty() {
        return Ok(RatioReport::vacuous("bilinear_kakeya", params));
    }
    let pl = ball.intervals()?;
    let pl2 = ball.dilated(2.0).intervals()?;
    let (m1, m2) = (pl.measure(), pl2.measure());
    let local = |fam: &[KakeyaMember]| -> Result<Vec<(IntervalSet, f64)>> {
        fam.iter()
            .map(|m| {
                Ok((
                    m.cell.p_i(m.x, consts).intervals()?.intersect(&pl2),
                    m.weight,
                ))
            })
            .collect()
    };
    let s1 = local(fam1)?;
    let s2 = local(fam2)?;
    let avg2 = |s: &[(IntervalSet, f64)]| {
        pairwise_sum(
            &s.iter()
                .map(|(set, w)| w * set.measure())
                .collect::<Vec<_>>(),
        ) / m2
    };
    let s1_in: Vec<(IntervalSet, f64)> = s1.iter().map(|(s, w)| (s.intersect(&pl), *w)).collect();
    let mut cross = Vec::with_capacity(s1.len() * s2.len());
    for (a, wa) in &s1_in {
        for (b, wb) in &s2 {
            cross.push(wa * wb * a.intersection_measure(b));
        }
    }
    let lhs = pairwise_sum(&cross) / m1;
    let rhs = avg2(&s1) * avg2(&s2);
    if rhs == 0.0 && lhs == 0.0 {
        return Ok(RatioReport::vacuous("bilinear_kakeya", params));
    }
    RatioReport::new("bilinear_kakeya", params, lhs, rhs)
}

/// Random transversal configuration: members drawn from the first and last
/// blocks of cells separated by at least c_trans·N^{−1/2}, centers uniform
/// in the ball of P(L), weights uniform in (0, 1].
pub fn random_kakeya_config(
    cells: &[FreqCell],
    ball: &FatAP,
    per_side: usize,
    n: u64,
    consts: &GeomConsts,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<KakeyaMember>, Vec<KakeyaMember>)> {
    let (left, right) = transversal_blocks(cells, n, consts)?;
    let draw = |pool: &[FreqCell], rng: &mut ChaCha8Rng| -> Vec<KakeyaMember> {
        (0..per_side)
            .map(|_| KakeyaMember {
                cell: pool.choose(rng).expect("non-empty block").clone(),
                x: ball.x0 + rng.gen_range(-ball.r..=ball.r),
                weight: 1.0 - rng.gen::<f64>(),
            })
            .collect()
    };
    let a = draw(left, rng);
    let b = draw(right, rng);
    Ok((a, b))
}

/// Largest prefix/suffix split whose blocks are mutually transversal.
pub fn transversal_blocks<'a>(
    cells: &'a [FreqCell],
    n: u64,
    consts: &GeomConsts,
) -> Result<(&'a [FreqCell], &'a [FreqCell])> {
    let k = cells.len();
    if k < 2 {
        return Err(DeclabError::InvalidParameter(
            "need two cells for a transversal pair".into(),
        ));
    }
    let half = k / 2;
    let gap = consts.c_trans / (n as f64).sqrt();
    let left = &cells[..half];
    let lo_right = left.last().expect("half >= 1").hull().hi + gap;
    let start = cells
        .iter()
        .position(|c| c.hull().lo >= lo_right)
        .ok_or_else(|| DeclabError::InvalidParameter("no transversal split of the cells".into()))?;
    Ok((left, &cells[start..]))
}

/// ⨍_{P(L)}|F₁|²|F₂|² against |P(L)|^{−2}∫_win|F₁|²·∫_win|F₂|².
#[allow(clippy::too_many_arguments)]
pub fn bilinear_restriction_check(
    f1: &AtomicSum,
    f2: &AtomicSum,
    supp1: &[FreqCell],
    supp2: &[FreqCell],
    ball: &FatAP,
    window: Interval,
    n: u64,
    consts: &GeomConsts,
    params: RatioParams,
) -> Result<RatioReport> {
    let (o1, o2) = (omega(supp1), omega(supp2));
    if o1.distance(&o2) < consts.c_trans / (n as f64).sqrt() {
        return Err(DeclabError::NotTransversal(
            supp1.first().map_or(0, |c| c.index),
            supp2.first().map_or(0, |c| c.index),
        ));
    }
    let region = if ball.is_degenerate() {
        Region::Interval(ball.ball())
    } else {
        Region::FatAp(*ball)
    };
    let prod = product_lp_norm(&[f1, f2], 2.0, &region, true)?;
    let lhs = prod.integral / prod.mass;
    let e1 = lp_norm(f1, 2.0, &Region::Interval(window), false)?.integral;
    let e2 = lp_norm(f2, 2.0, &Region::Interval(window), false)?.integral;
    let rhs = e1 * e2 / (prod.mass * prod.mass);
    if lhs == 0.0 && rhs == 0.0 {
        return Ok(RatioReport::vacuous("bilinear_restriction", params));
    }
    RatioReport::new("bilinear_restriction", params, lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fatap::{ball_p_of_l, canonical_partition, small_cap_partition};
    use crate::seqgen::gen_log;

    fn setup(n: u64, l: usize) -> (crate::seqgen::GenDirichletSeq, Vec<FreqCell>) {
        let seq = gen_log(n).unwrap();
        let cells = canonical_partition(&seq, l, &GeomConsts::default()).unwrap();
        (seq, cells)
    }

    fn params(n: u64, l: usize) -> RatioParams {
        RatioParams {
            n,
            theta: 1.0,
            l,
            ..Default::default()
        }
    }

    #[test]
    fn single_cell_ratio_is_one() {
        let (_, cells) = setup(1024, 4);
        let f = extremal_family(&FamilyKind::SingleCell, &cells, 0).unwrap();
        for p in [2.0, 4.0, 6.0] {
            let r = decoupling_ratio(
                &f,
                &cells,
                p,
                &default_window(1024, 4, 1.0),
                params(1024, 4),
            )
            .unwrap();
            assert!((r.ratio - 1.0).abs() < 1e-12, "p={p}: {}", r.ratio);
        }
    }

    #[test]
    fn constant_bump_peak_is_count_times_mass() {
        let (_, cells) = setup(1024, 2);
        let f = extremal_family(&FamilyKind::ConstantBump, &cells, 0).unwrap();
        let mass = f.envelope.unwrap().mass();
        assert!((f.eval(0.0).norm() - f.len() as f64 * mass).abs() < 1e-12 * f.len() as f64 * mass);
    }

    #[test]
    fn plancherel_bound_at_p2() {
        let (_, cells) = setup(1024, 2);
        let f = extremal_family(&FamilyKind::ConstantBump, &cells, 0).unwrap();
        let r = decoupling_ratio(&f, &cells, 2.0, &Region::Line, params(1024, 2)).unwrap();
        assert!(r.ratio <= 1.0 + 1e-6, "{}", r.ratio);
    }

    #[test]
    fn random_sign_energy_matches_parseval() {
        // E‖f‖₂² = Σ‖atom‖₂² over seeds, each atom contributing ∫E².
        let (_, cells) = setup(256, 4);
        let mut vals = Vec::new();
        for seed in 0..32 {
            let f = extremal_family(&FamilyKind::RandomSignSmallball, &cells, seed).unwrap();
            vals.push(lp_norm(&f, 2.0, &Region::Line, false).unwrap().integral);
        }
        let env = bump_envelope(&cells).unwrap();
        let expect = cells.len() as f64 * env.lp_pow_exact(2);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean / expect - 1.0).abs() < 0.1, "{mean} vs {expect}");
    }

    #[test]
    fn homogeneity_and_zero_cells() {
        let (_, cells) = setup(1024, 4);
        let f = extremal_family(&FamilyKind::SingleCell, &cells, 0).unwrap();
        let g = extremal_family(&FamilyKind::ConstantBump, &cells[..2], 0).unwrap();
        let win = default_window(1024, 4, 1.0);
        let r1 = decoupling_ratio(&g, &cells[..2], 4.0, &win, params(1024, 4)).unwrap();
        // The same function over the full partition: extra cells are empty.
        let r2 = decoupling_ratio(&g, &cells, 4.0, &win, params(1024, 4)).unwrap();
        assert_eq!(r1.ratio, r2.ratio);
        let scaled = AtomicSum::new(
            g.atoms.iter().map(|&(a, c)| (a, c * 3.5)).collect(),
            g.envelope,
        )
        .unwrap();
        let r3 = decoupling_ratio(&scaled, &cells, 4.0, &win, params(1024, 4)).unwrap();
        assert!((r3.ratio / r2.ratio - 1.0).abs() < 1e-12);
        assert!(!f.is_empty());
    }

    #[test]
    fn small_cap_bound_formula() {
        for n in [256.0f64, 4096.0] {
            let b = small_cap_bound(n, 1.0, 1.0, 4.0, 4.0).unwrap();
            assert!((b - (1.0 + n.powf(0.125))).abs() < 1e-12);
        }
        assert!(matches!(
            small_cap_bound(256.0, 4.0, 2.0, 6.0, 3.0),
            Err(DeclabError::Unsupported(_))
        ));
        assert!(small_cap_bound(256.0, 4.0, 1.0, 6.0, 2.0).is_ok());
    }

    #[test]
    fn flat_decoupling_cases() {
        let e = Envelope::new(0.2, 4).unwrap();
        let win = Region::Line;
        let one = AtomicSum::new(vec![(0.5, Complex64::new(1.0, 0.0))], Some(e)).unwrap();
        let r = flat_decoupling_ratio(&one, 1, 4.0, &win, RatioParams::default()).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        let many =
            AtomicSum::unit_atoms(&(0..8).map(|m| m as f64 + 0.5).collect::<Vec<_>>(), Some(e))
                .unwrap();
        let r2 = flat_decoupling_ratio(&many, 8, 2.0, &win, RatioParams::default()).unwrap();
        assert!(r2.ratio <= 1.0 + 1e-6);
        let bad = AtomicSum::unit_atoms(&[0.9], Some(e)).unwrap();
        assert!(matches!(
            flat_decoupling_ratio(&bad, 1, 4.0, &win, RatioParams::default()),
            Err(DeclabError::Hypothesis(_))
        ));
    }

    #[test]
    fn refined_flat_trivial_cases() {
        let (_, cells) = setup(4096, 4);
        let consts = GeomConsts::default();
        let (f, caps) = multiplicity_family(&cells[0], 4, 1, 3, &consts).unwrap();
        let p = RatioParams {
            l1: Some(4),
            ..params(4096, 4)
        };
        let r =
            refined_flat_ratio(&f, &caps, 1, 4.0, 4.0, &default_window(4096, 4, 1.0), p).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        assert!(multiplicity_family(&cells[0], 1, 1000, 3, &consts).is_err());
    }

    #[test]
    fn kakeya_single_pair_and_empty() {
        let (seq, cells) = setup(1024, 4);
        let consts = GeomConsts::default();
        let ball = ball_p_of_l(&seq, 4, 0.0, &consts).unwrap();
        let (left, right) = transversal_blocks(&cells, 1024, &consts).unwrap();
        let a = KakeyaMember {
            cell: left[0].clone(),
            x: 0.0,
            weight: 1.0,
        };
        let b = KakeyaMember {
            cell: right[0].clone(),
            x: 5.0,
            weight: 1.0,
        };
        let r = bilinear_kakeya_check(
            std::slice::from_ref(&a),
            std::slice::from_ref(&b),
            &ball,
            1024,
            &consts,
            params(1024, 4),
        )
        .unwrap();
        let pa = a.cell.p_i(a.x, &consts).intervals().unwrap();
        let pb = b.cell.p_i(b.x, &consts).intervals().unwrap();
        let pl = ball.intervals().unwrap();
        let pl2 = ball.dilated(2.0).intervals().unwrap();
        let lhs = pa.intersect(&pb).intersection_measure(&pl) / pl.measure();
        let rhs =
            pa.intersection_measure(&pl2) * pb.intersection_measure(&pl2) / pl2.measure().powi(2);
        assert!((r.lhs - lhs).abs() <= 1e-12 * lhs && (r.rhs - rhs).abs() <= 1e-12 * rhs);
        let e = bilinear_kakeya_check(
            std::slice::from_ref(&a),
            &[],
            &ball,
            1024,
            &consts,
            params(1024, 4),
        )
        .unwrap();
        assert_eq!((e.lhs, e.rhs), (0.0, 0.0));
        let bad = KakeyaMember {
            cell: left[0].clone(),
            x: 0.0,
            weight: 1.0,
        };
        assert!(matches!(
            bilinear_kakeya_check(&[a], &[bad], &ball, 1024, &consts, params(1024, 4)),
            Err(DeclabError::NotTransversal(..))
        ));
    }

    #[test]
    fn restriction_single_atoms_closed_form() {
        let (seq, cells) = setup(1024, 4);
        let consts = GeomConsts::default();
        let ball = ball_p_of_l(&seq, 4, 0.0, &consts).unwrap();
        let (left, right) = transversal_blocks(&cells, 1024, &consts).unwrap();
        let win = kappa_window(1024.0, 4.0, 1.0, DEFAULT_KAPPA);
        let f1 = AtomicSum::unit_atoms(&[left[0].centers[0]], None).unwrap();
        let f2 = AtomicSum::unit_atoms(&[right[0].centers[0]], None).unwrap();
        let r = bilinear_restriction_check(
            &f1,
            &f2,
            &left[..1],
            &right[..1],
            &ball,
            win,
            1024,
            &consts,
            params(1024, 4),
        )
        .unwrap();
        let pm = ball.measure().unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-10);
        assert!((r.rhs - (win.len() / pm).powi(2)).abs() < 1e-9 * r.rhs);
        let zero = AtomicSum::new(vec![], None).unwrap();
        let z = bilinear_restriction_check(
            &f1,
            &zero,
            &left[..1],
            &right[..1],
            &ball,
            win,
            1024,
            &consts,
            params(1024, 4),
        )
        .unwrap();
        assert_eq!(z.lhs, 0.0);
    }

    #[test]
    fn small_cap_partition_ratio_runs() {
        let seq = gen_log(256).unwrap();
        let consts = GeomConsts::default();
        let caps = small_cap_partition(&seq, 4, 1, &consts).unwrap();
        let f = extremal_family(&FamilyKind::ConstantBump, &caps, 0).unwrap();
        let p = RatioParams {
            l1: Some(1),
            ..params(256, 4)
        };
        let r = small_cap_ratio(&f, &caps, 4.0, 4.0, &default_window(256, 4, 1.0), p).unwrap();
        assert!(r.ratio >= 1.0 && r.paper_bound.unwrap() > 1.0);
    }
}
