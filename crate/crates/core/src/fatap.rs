//! Fat arithmetic progressions P^δ_v(x0) ∩ B_R(x0): the δ-neighborhood of the
//! progression x0 + vℤ cut to the ball of radius R.
//!
//! Frequency-side fat APs live in the units of the sequence. Physical-side fat
//! APs carry the 2π of the e^{ita} convention in all three parameters, so the
//! period of |f_I| for a cell of step v is exactly 2π/v.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DeclabError, Result};
use crate::intervals::{Interval, IntervalSet};
use crate::seqgen::GenDirichletSeq;

/// Above this many lattice intervals a fat AP is refused rather than enumerated.
pub const MAX_INTERVALS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FatAP {
    pub x0: f64,
    pub delta: f64,
    pub v: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

impl FatAP {
    pub fn new(x0: f64, delta: f64, v: f64, r: f64) -> Result<Self> {
        if !(delta > 0.0 && v > 0.0 && r > 0.0) || !x0.is_finite() {
            return Err(DeclabError::InvalidParameter(format!(
                "fat AP needs positive parameters, got x0 = {x0}, delta = {delta}, v = {v}, R = {r}"
            )));
        }
        Ok(FatAP { x0, delta, v, r })
    }

    /// Intervals of width 2δ overlap or touch; the set is then the whole ball.
    pub fn is_degenerate(&self) -> bool {
        2.0 * self.delta >= self.v
    }

    /// (δ, v, R) ↦ (1/R, 1/v, 1/δ), same center.
    pub fn dual(&self) -> FatAP {
        FatAP {
            x0: self.x0,
            delta: 1.0 / self.r,
            v: 1.0 / self.v,
            r: 1.0 / self.delta,
        }
    }

    /// Physical-side dual under the e^{ita} pairing: `dual` scaled by 2π.
    pub fn phys_dual(&self) -> FatAP {
        self.dual().scaled(2.0 * PI)
    }

    /// Multiplies all three lengths by `s` (a change of units).
    pub fn scaled(&self, s: f64) -> FatAP {
        FatAP {
            x0: self.x0,
            delta: self.delta * s,
            v: self.v * s,
            r: self.r * s,
        }
    }

    /// cP: thickness and radius multiplied by c, step kept.
    pub fn dilated(&self, c: f64) -> FatAP {
        FatAP {
            x0: self.x0,
            delta: self.delta * c,
            v: self.v,
            r: self.r * c,
        }
    }

    pub fn recentered(&self, x0: f64) -> FatAP {
        FatAP { x0, ..*self }
    }

    pub fn ball(&self) -> Interval {
        Interval::centered(self.x0, self.r)
    }

    pub fn interval_count(&self) -> usize {
        if self.is_degenerate() {
            1
        } else {
            2 * ((self.r + self.delta) / self.v).floor() as usize + 1
        }
    }

    /// Exact interval list, merged.
    pub fn intervals(&self) -> Result<IntervalSet> {
        let ball = self.ball();
        if self.is_degenerate() {
            return Ok(IntervalSet::single(ball));
        }
        let kmax = ((self.r + self.delta) / self.v).floor() as i64;
        if (2 * kmax + 1) as usize > MAX_INTERVALS {
            return Err(DeclabError::Budget(format!(
                "fat AP with {} intervals exceeds {MAX_INTERVALS}",
                2 * kmax + 1
            )));
        }
        let mut parts = Vec::with_capacity((2 * kmax + 1) as usize);
        for k in -kmax..=kmax {
            let c = self.x0 + k as f64 * self.v;
            if let Some(iv) = Interval::centered(c, self.delta).intersect(&ball) {
                parts.push(iv);
            }
        }
        Ok(IntervalSet::from_intervals(parts))
    }

    pub fn measure(&self) -> Result<f64> {
        Ok(self.intervals()?.measure())
    }

    /// d(x, x0 + vℤ) ≤ δ and |x − x0| ≤ R.
    pub fn contains(&self, x: f64) -> bool {
        (x - self.x0).abs() <= self.r
            && (self.is_degenerate() || self.lattice_distance(x) <= self.delta)
    }

    pub fn lattice_distance(&self, x: f64) -> f64 {
        let u = (x - self.x0) / self.v;
        (u - u.round()).abs() * self.v
    }
}

/// Exact |P ∩ Q| by merging the two sorted interval lists.
pub fn intersection_measure(p: &FatAP, q: &FatAP) -> Result<f64> {
    Ok(p.intervals()?.intersection_measure(&q.intervals()?))
}

/// Geometry constants; the defaults make I_j ⊆ Ĩ_j and the P_I ⊆ 2P(L) containment hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomConsts {
    pub c_thick: f64,
    pub c_rad: f64,
    pub c_dual: f64,
    pub c_trans: f64,
}

impl Default for GeomConsts {
    fn default() -> Self {
        GeomConsts {
            c_thick: 4.0,
            c_rad: 16.0,
            c_dual: 16.0,
            c_trans: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqCell {
    pub index: usize,
    /// Half-open range of sequence indices covered by the cell.
    pub first: usize,
    pub end: usize,
    pub centers: Vec<f64>,
    pub ball_radius: f64,
    pub balls: IntervalSet,
    pub v: f64,
    pub enclosing: FatAP,
}

impl FreqCell {
    /// P_I(x): the physical dual of Ĩ dilated by C_dual, centered at x.
    /// Thickness 2πN/L, step 2π/v_j, radius 2π·4N²/(L²θ) with default constants.
    pub fn p_i(&self, x: f64, consts: &GeomConsts) -> FatAP {
        self.enclosing
            .phys_dual()
            .dilated(consts.c_dual)
            .recentered(x)
    }

    pub fn hull(&self) -> Interval {
        self.balls.hull().expect("cells are non-empty")
    }
}

fn make_cell(
    seq: &GenDirichletSeq,
    index: usize,
    first: usize,
    end: usize,
    ball_radius: f64,
    thick: f64,
    rad: f64,
) -> Result<FreqCell> {
    let t = &seq.terms;
    let v = if first + 1 < t.len() {
        t[first + 1] - t[first]
    } else {
        t[first] - t[first - 1]
    };
    let centers: Vec<f64> = t[first..end].to_vec();
    let balls = IntervalSet::from_intervals(
        centers
            .iter()
            .map(|&a| Interval::centered(a, ball_radius))
            .collect(),
    );
    let enclosing = FatAP::new(t[first], thick, v, rad)?;
    if !balls.is_subset_of(&enclosing.intervals()?) {
        return Err(DeclabError::Containment { cell: index });
    }
    Ok(FreqCell {
        index,
        first,
        end,
        centers,
        ball_radius,
        balls,
        v,
        enclosing,
    })
}

fn check_partition_args(seq: &GenDirichletSeq, l: usize) -> Result<()> {
    if l == 0 || l > seq.len() {
        return Err(DeclabError::InvalidParameter(format!(
            "L = {l} must lie in [1, M] for a sequence of length M = {}",
            seq.len()
        )));
    }
    if seq.len() < 2 {
        return Err(DeclabError::TooShort { len: seq.len() });
    }
    Ok(())
}

/// Cells of L consecutive θL²/N²-balls; a trailing partial cell is dropped.
/// Enclosing fat AP Ĩ_j has thickness C_thick·L²θ/N² and radius C_rad·L/N.
pub fn canonical_partition(
    seq: &GenDirichletSeq,
    l: usize,
    consts: &GeomConsts,
) -> Result<Vec<FreqCell>> {
    check_partition_args(seq, l)?;
    let n = seq.n_f64();
    let lf = l as f64;
    let rb = seq.theta * lf * lf / (n * n);
    (0..seq.len() / l)
        .map(|j| {
            make_cell(
                seq,
                j,
                j * l,
                (j + 1) * l,
                rb,
                consts.c_thick * rb,
                consts.c_rad * lf / n,
            )
        })
        .collect()
}

/// Cells of L1 consecutive θL²/N²-balls covering the same terms as the
/// canonical partition at L; nested in it when L1 divides L.
pub fn small_cap_partition(
    seq: &GenDirichletSeq,
    l: usize,
    l1: usize,
    consts: &GeomConsts,
) -> Result<Vec<FreqCell>> {
    check_partition_args(seq, l)?;
    if l1 == 0 || l1 > l {
        return Err(DeclabError::InvalidParameter(format!(
            "L1 = {l1} must lie in [1, L = {l}]"
        )));
    }
    let n = seq.n_f64();
    let lf = l as f64;
    let rb = seq.theta * lf * lf / (n * n);
    let covered = (seq.len() / l) * l;
    let mut cells = Vec::new();
    let mut first = 0;
    while first < covered {
        let end = (first + l1).min(covered);
        cells.push(make_cell(
            seq,
            cells.len(),
            first,
            end,
            rb,
            consts.c_thick * rb,
            consts.c_rad * l1 as f64 / n,
        )?);
        first = end;
    }
    Ok(cells)
}

/// Ω as one interval set.
pub fn omega(cells: &[FreqCell]) -> IntervalSet {
    cells
        .iter()
        .fold(IntervalSet::empty(), |acc, c| acc.union(&c.balls))
}

/// P(L, y): thickness 2πC_dual N^{3/2}/L², step 2π/v_1, radius 2πC_dual N²/(L²θ).
/// Collapses to the ball whenever thickness ≥ step/2, which covers L ≤ N^{1/4}.
pub fn ball_p_of_l(seq: &GenDirichletSeq, l: usize, y: f64, consts: &GeomConsts) -> Result<FatAP> {
    if seq.len() < 2 {
        return Err(DeclabError::TooShort { len: seq.len() });
    }
    let n = seq.n_f64();
    let l2 = (l * l) as f64;
    let v1 = seq.terms[1] - seq.terms[0];
    FatAP::new(
        y,
        2.0 * PI * consts.c_dual * n.powf(1.5) / l2,
        2.0 * PI / v1,
        2.0 * PI * consts.c_dual * n * n / (l2 * seq.theta),
    )
}

/// d(I, J) ≥ c_trans·N^{-1/2}.
pub fn transversal(a: &FreqCell, b: &FreqCell, n: u64, consts: &GeomConsts) -> bool {
    a.balls.distance(&b.balls) >= consts.c_trans / (n as f64).sqrt()
}

/// All index pairs (i < j) of transversal cells.
pub fn transversal_pairs(cells: &[FreqCell], n: u64, consts: &GeomConsts) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            if transversal(&cells[i], &cells[j], n, consts) {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub base: FatAP,
    pub k: u32,
}

impl WeightSpec {
    pub fn new(base: FatAP, k: u32) -> Result<Self> {
        if k < 100 {
            return Err(DeclabError::InvalidParameter(format!(
                "weight order k = {k} < 100"
            )));
        }
        Ok(WeightSpec { base, k })
    }

    /// (1 + d(x, x0+vℤ)/δ)^{-k} (1 + d(x, B_R(x0))/R)^{-k}.
    pub fn eval(&self, x: f64) -> f64 {
        weight_eval(&self.base, self.k, x)
    }

    /// Distance from x0 beyond which the radial factor drops below `tail`.
    pub fn truncation_radius(&self, tail: f64) -> f64 {
        self.base.r * (1.0 + (tail.powf(-1.0 / self.k as f64) - 1.0))
    }
}

/// The two-factor weight of a physical fat AP, any order k.
pub fn weight_eval(p: &FatAP, k: u32, x: f64) -> f64 {
    let lat = if p.is_degenerate() {
        0.0
    } else {
        p.lattice_distance(x) / p.delta
    };
    let rad = ((x - p.x0).abs() - p.r).max(0.0) / p.r;
    let kf = k as f64;
    (-(kf * lat.ln_1p() + kf * rad.ln_1p())).exp()
}

/// One tile of an exact partition of the line by shrunken translates of P.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    /// Ball translate index m: the ball is [x0 + 2Rm − R, x0 + 2Rm + R).
    pub ball_index: i64,
    /// Lattice shift index s in 0..n_shifts.
    pub shift: usize,
    pub ball: Interval,
    /// One lattice point of the tile; the others are `anchor + kv`.
    pub anchor: f64,
    pub half_width: f64,
    pub v: f64,
}

impl Tile {
    /// Half-open pieces [lo, hi) of the tile, in increasing order.
    pub fn pieces(&self) -> Vec<Interval> {
        let k_lo = ((self.ball.lo - self.half_width - self.anchor) / self.v).floor() as i64;
        let k_hi = ((self.ball.hi + self.half_width - self.anchor) / self.v).ceil() as i64;
        let mut out = Vec::with_capacity((k_hi - k_lo + 1).max(0) as usize);
        for k in k_lo..=k_hi {
            let c = self.anchor + k as f64 * self.v;
            let lo = (c - self.half_width).max(self.ball.lo);
            let hi = (c + self.half_width).min(self.ball.hi);
            if lo < hi {
                out.push(Interval::new(lo, hi));
            }
        }
        out
    }

    pub fn contains(&self, x: f64) -> bool {
        self.pieces().iter().any(|iv| iv.lo <= x && x < iv.hi)
    }

    /// Right end of the tile.
    pub fn sup(&self) -> f64 {
        self.pieces().last().map(|iv| iv.hi).unwrap_or(self.ball.hi)
    }

    /// The tile as a fat AP centered at its lattice point nearest the ball center.
    pub fn as_fat_ap(&self) -> FatAP {
        let mid = self.ball.lo + 0.5 * self.ball.len();
        let k = ((mid - self.anchor) / self.v).round();
        FatAP {
            x0: self.anchor + k * self.v,
            delta: self.half_width,
            v: self.v,
            r: 0.5 * self.ball.len(),
        }
    }
}

/// Exact partition of a neighborhood of `window` by translates of P:
/// within each ball the lattice period is split into n_s = ⌈v/(2δ)⌉ shifted
/// copies of width v/n_s ≤ 2δ; balls are translated by 2R. Pieces are
/// half-open, so every covered point lies in exactly one tile.
pub fn tile(p: &FatAP, window: Interval) -> Result<Vec<Tile>> {
    if !(window.lo.is_finite() && window.hi.is_finite()) {
        return Err(DeclabError::UnboundedRegion(
            "tile window must be bounded".into(),
        ));
    }
    let (n_s, half) = if p.is_degenerate() {
        (1usize, p.v.max(2.0 * p.r))
    } else {
        let n_s = (p.v / (2.0 * p.delta)).ceil() as usize;
        (n_s, p.v / (2.0 * n_s as f64))
    };
    let m_lo = ((window.lo - p.x0 + p.r) / (2.0 * p.r)).floor() as i64;
    let m_hi = ((window.hi - p.x0 + p.r) / (2.0 * p.r)).floor() as i64;
    let count = ((m_hi - m_lo + 1) as usize).saturating_mul(n_s);
    if count > MAX_INTERVALS {
        return Err(DeclabError::Budget(format!("tiling needs {count} tiles")));
    }
    let mut out = Vec::with_capacity(count);
    for m in m_lo..=m_hi {
        let c = p.x0 + 2.0 * p.r * m as f64;
        let ball = Interval::new(c - p.r, c + p.r);
        for s in 0..n_s {
            out.push(Tile {
                ball_index: m,
                shift: s,
                ball,
                anchor: c + s as f64 * 2.0 * half,
                half_width: half,
                v: if p.is_degenerate() { 4.0 * half } else { p.v },
            });
        }
    }
    Ok(out)
}

/// Largest |P_I ∩ P_J|·|P(L)|/(|P_I||P_J|) over transversal pairs, centers
/// aligned at `y` and shifted by each offset (as a fraction of P_J's step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub pairs: usize,
    pub max_constant: f64,
    pub p_l_measure: f64,
}

pub fn overlap_constant(
    cells: &[FreqCell],
    seq: &GenDirichletSeq,
    l: usize,
    offsets: &[f64],
    consts: &GeomConsts,
) -> Result<OverlapReport> {
    let y = 0.0;
    let pl = ball_p_of_l(seq, l, y, consts)?.measure()?;
    let pairs = transversal_pairs(cells, seq.param_n, consts);
    let sets: Vec<IntervalSet> = cells
        .iter()
        .map(|c| c.p_i(y, consts).intervals())
        .collect::<Result<_>>()?;
    let meas: Vec<f64> = sets.iter().map(|s| s.measure()).collect();
    let mut worst: f64 = 0.0;
    for &(i, j) in &pairs {
        for &off in offsets {
            let pj = cells[j]
                .p_i(y + off * cells[j].p_i(y, consts).v, consts)
                .intervals()?;
            let m = sets[i].intersection_measure(&pj);
            worst = worst.max(m * pl / (meas[i] * meas[j]));
        }
    }
    Ok(OverlapReport {
        pairs: pairs.len(),
        max_constant: worst,
        p_l_measure: pl,
    })
}

/// Checks P_I(x) ⊆ 2P(L, y) for every cell and for x at every position where the
/// two outermost intervals of P_I(x) touch the boundary of P(L, y), plus the
/// interior samples supplied. Returns the number of (cell, x) cases checked.
pub fn p_i_containment(
    cells: &[FreqCell],
    seq: &GenDirichletSeq,
    l: usize,
    y: f64,
    interior: &[f64],
    consts: &GeomConsts,
) -> Result<usize> {
    let pl = ball_p_of_l(seq, l, y, consts)?;
    let pl_set = pl.intervals()?;
    let big = pl.dilated(2.0).intervals()?;
    let edges: Vec<f64> = pl_set
        .parts()
        .iter()
        .flat_map(|iv| [iv.lo, iv.hi])
        .collect();
    let mut checked = 0;
    for cell in cells {
        let pi0 = cell.p_i(0.0, consts).intervals()?;
        let parts = pi0.parts();
        let n = parts.len();
        let mut rel: Vec<f64> = Vec::new();
        for idx in [0, 1, n.saturating_sub(2), n - 1] {
            if let Some(iv) = parts.get(idx) {
                rel.push(iv.lo);
                rel.push(iv.hi);
            }
        }
        let mut xs: Vec<f64> = Vec::new();
        for &e in &edges {
            for &f in &rel {
                xs.push(e - f);
            }
        }
        xs.extend(interior.iter().map(|&u| y + u));
        for x in xs {
            let shifted = pi0.translate(x);
            if shifted.intersection_measure(&pl_set) <= 0.0 && shifted.distance(&pl_set) > 0.0 {
                continue;
            }
            checked += 1;
            if !shifted.is_subset_of(&big) {
                return Err(DeclabError::Containment { cell: cell.index });
            }
        }
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqgen::{gen_log, gen_random};

    #[test]
    fn dual_examples() {
        let p = FatAP::new(0.0, 0.01, 0.1, 10.0).unwrap();
        let d = p.dual();
        assert!(
            (d.delta - 0.1).abs() < 1e-15
                && (d.v - 10.0).abs() < 1e-15
                && (d.r - 100.0).abs() < 1e-13
        );
        assert_eq!(d.dual(), p);
    }

    #[test]
    fn measure_examples() {
        let p = FatAP::new(0.0, 0.1, 1.0, 4.5).unwrap();
        assert_eq!(p.intervals().unwrap().len(), 9);
        assert!((intersection_measure(&p, &p).unwrap() - 1.8).abs() < 1e-12);
        let a = FatAP::new(0.0, 0.1, 1.0, 2.0).unwrap();
        let b = FatAP::new(0.5, 0.1, 1.0, 2.0).unwrap();
        assert_eq!(intersection_measure(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_is_a_ball() {
        let p = FatAP::new(1.0, 0.6, 1.0, 3.0).unwrap();
        assert!(p.is_degenerate());
        assert_eq!(p.intervals().unwrap().parts(), &[Interval::new(-2.0, 4.0)]);
    }

    #[test]
    fn membership_matches_intervals() {
        let p = FatAP::new(0.3, 0.1, 1.0, 4.5).unwrap();
        let s = p.intervals().unwrap();
        for i in 0..2000 {
            let x = -6.0 + i as f64 * 0.00613;
            assert_eq!(p.contains(x), s.contains(x), "x = {x}");
        }
    }

    #[test]
    fn canonical_cells_and_separation() {
        let seq = gen_log(4096).unwrap();
        let c = GeomConsts::default();
        let cells = canonical_partition(&seq, 8, &c).unwrap();
        assert_eq!(cells.len(), 8);
        let n2 = 4096f64 * 4096.0;
        for w in cells.windows(2) {
            assert!(w[1].v - w[0].v >= 8.0 * seq.theta / (4.0 * n2));
        }
        let one = canonical_partition(&seq, 64, &c).unwrap();
        assert_eq!(one.len(), 1);
        assert!(omega(&canonical_partition(&seq, 1, &c).unwrap()).is_subset_of(&omega(&one)));
        assert!(canonical_partition(&seq, 65, &c).is_err());
    }

    #[test]
    fn small_caps_nest() {
        let seq = gen_random(4096, 1.0, 1).unwrap();
        let c = GeomConsts::default();
        let big = canonical_partition(&seq, 4, &c).unwrap();
        let small = small_cap_partition(&seq, 4, 1, &c).unwrap();
        assert_eq!(small.len(), 4 * big.len());
        for (k, s) in small.iter().enumerate() {
            assert!(s.balls.is_subset_of(&big[k / 4].balls));
        }
        assert_eq!(omega(&small), omega(&big));
        let same = small_cap_partition(&seq, 4, 4, &c).unwrap();
        assert_eq!(same, big);
    }

    #[test]
    fn p_of_l_shapes() {
        let c = GeomConsts::default();
        let seq = gen_log(256).unwrap();
        let p2 = ball_p_of_l(&seq, 2, 0.0, &c).unwrap();
        assert!(p2.is_degenerate());
        assert!((p2.r - 2.0 * PI * 16.0 * 256.0 * 256.0 / 4.0).abs() < 1e-6);
        let p16 = ball_p_of_l(&seq, 16, 0.0, &c).unwrap();
        assert!((p16.delta - 2.0 * PI * 16.0 * 16.0).abs() < 1e-9);
        // With C_dual = 16 the thickness 2π·256 exceeds half the step 2π/v_1 ≈ 2π·272.
        assert!(p16.is_degenerate());
        let big = gen_log(1 << 20).unwrap();
        assert!(!ball_p_of_l(&big, 1024, 0.0, &c).unwrap().is_degenerate());
    }

    #[test]
    fn transversality_examples() {
        let c = GeomConsts::default();
        let seq = gen_log(4096).unwrap();
        let cells = canonical_partition(&seq, 4, &c).unwrap();
        assert!(!transversal(&cells[0], &cells[1], 4096, &c));
        assert!(!transversal(&cells[3], &cells[3], 4096, &c));
        assert!(transversal(&cells[0], &cells[15], 4096, &c));
    }

    #[test]
    fn weight_examples() {
        let p = FatAP::new(0.0, 0.1, 1.0, 5.0).unwrap();
        assert_eq!(weight_eval(&p, 100, 0.0), 1.0);
        let w = weight_eval(&p, 100, 10.0);
        assert!((w / 2f64.powi(-100) - 1.0).abs() <= 1e-12);
        assert!(WeightSpec::new(p, 99).is_err());
    }

    #[test]
    fn tiles_partition_exactly() {
        let p = FatAP::new(0.2, 0.15, 1.0, 3.5).unwrap();
        let window = Interval::new(-20.0, 20.0);
        let tiles = tile(&p, window).unwrap();
        for i in 0..4001 {
            let x = -20.0 + i as f64 * 0.01;
            let hits = tiles.iter().filter(|t| t.contains(x)).count();
            assert_eq!(hits, 1, "x = {x}");
        }
        let ball = FatAP::new(0.0, 2.0, 1.0, 3.0).unwrap();
        let tb = tile(&ball, window).unwrap();
        for i in 0..4001 {
            let x = -20.0 + i as f64 * 0.01;
            assert_eq!(tb.iter().filter(|t| t.contains(x)).count(), 1);
        }
    }

    #[test]
    fn containment_and_overlap_small_instance() {
        let c = GeomConsts::default();
        let seq = gen_log(1024).unwrap();
        let cells = canonical_partition(&seq, 4, &c).unwrap();
        let n = p_i_containment(&cells, &seq, 4, 0.0, &[0.0, 1e5, -3e6], &c).unwrap();
        assert!(n > 0);
        let r = overlap_constant(&cells, &seq, 4, &[0.0, 0.25], &c).unwrap();
        assert!(r.pairs > 0);
        assert!(
            r.max_constant > 0.0 && r.max_constant < 64.0,
            "{}",
            r.max_constant
        );
    }
}
