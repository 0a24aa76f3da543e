//! Scenario runner: JSON configs, parameter grids, one [`ResultRow`] per
//! measured quantity and grid point, CSV/JSON output and grouped fits.
//!
//! Rows come out in grid order whatever the execution order, and the
//! `seconds` column stays empty unless `record_time` is set, so reruns of a
//! config write byte-identical CSV.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::{
    ap_intersection_bound, ap_intersection_count, count_solutions, incidence_collection,
    incidence_experiment, CountMethod, IncidenceLayout,
};
use crate::error::{DeclabError, Result};
use crate::fatap::{ball_p_of_l, canonical_partition, small_cap_partition, GeomConsts};
use crate::field::kappa_window;
use crate::highlow::{
    dominant_scales, fm_comparable_check, high_lemma_check, low_lemma_check, prune, HighLowSetup,
    PruneParams, ScaleLadder, DEFAULT_C_TILDE, DEFAULT_EPSILON, DEFAULT_SCALE_EXPONENT,
};
use crate::ineqlab::{
    bilinear_kakeya_check, bilinear_restriction_check, decoupling_ratio, default_window,
    extremal_family, random_kakeya_config, small_cap_bound, small_cap_ratio, transversal_blocks,
    FamilyKind, RatioParams, DEFAULT_KAPPA,
};
use crate::numeric::{median, ExponentFit};
use crate::seqgen::{
    gen_ap_rich, gen_log, gen_random, normalize_first_gap, short_len, GenDirichletSeq,
};
use crate::transfer::{
    build_lift, lp_coeff_norm, random_signs, transfer_sweep, unit_coeffs, DEFAULT_LIFT_C,
};

pub const PRESETS: [&str; 11] = [
    "canonical-p6",
    "canonical-p8-sharp",
    "smallcap-constant",
    "smallcap-random",
    "bikakeya",
    "birestriction",
    "highlow",
    "count-solutions",
    "ap-intersect",
    "incidence",
    "transfer-sweep",
];

/// Largest N the counting scenario accepts (the mitm arrays grow as N^{3/2}).
pub const MAX_COUNT_N: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Log,
    Random,
    ApRich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    #[serde(default)]
    pub seed: u64,
}

/// Lists for every swept parameter. An empty list leaves the axis unused.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(rename = "N", default)]
    pub n: Vec<u64>,
    #[serde(rename = "L", default)]
    pub l: Vec<usize>,
    /// When set, L = round(N^e) per N and `L` is ignored.
    #[serde(
        rename = "L_exponent",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub l_exponent: Option<f64>,
    #[serde(rename = "L1", default)]
    pub l1: Vec<usize>,
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default)]
    pub q: Vec<f64>,
    /// T = N^e.
    #[serde(rename = "T_exponent", default)]
    pub t_exponent: Vec<f64>,
    #[serde(default)]
    pub theta: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Richness levels for the incidence scenario.
    #[serde(default)]
    pub r: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitX {
    #[default]
    N,
    SqrtNOverL,
    T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitY {
    #[default]
    Ratio,
    Lhs,
    Rhs,
}

/// How rows sharing an abscissa within a fit group are collapsed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Median,
    Max,
}

/// Which small-cap term goes into `paper_bound`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundTerm {
    #[default]
    Full,
    First,
    Second,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Counting tolerance is `count_tol_scale`·θ/N².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_tol_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Members per side in a random Kakeya configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_side: Option<usize>,
    /// AP step a = N^{−alpha} for ap-intersect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeomConsts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub grid: Grid,
    pub sequence: SequenceSpec,
    /// Test family: constant_bump, random_sign_smallball, single_cell for the
    /// decoupling scenarios; unit or random_sign for transfer-sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default)]
    pub fit_x: FitX,
    #[serde(default)]
    pub fit_y: FitY,
    #[serde(default)]
    pub aggregate: Aggregate,
    #[serde(default)]
    pub bound_term: BoundTerm,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub record_time: bool,
    /// Output directory; the CLI's --out takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

fn pow4(lo: u32, hi: u32) -> Vec<u64> {
    (lo..=hi).step_by(2).map(|k| 1u64 << k).collect()
}

impl ScenarioConfig {
    fn base(scenario: &str, grid: Grid) -> Self {
        ScenarioConfig {
            scenario: scenario.to_string(),
            grid,
            sequence: SequenceSpec {
                kind: SequenceKind::Log,
                seed: 0,
            },
            family: None,
            fit_x: FitX::N,
            fit_y: FitY::Ratio,
            aggregate: Aggregate::Median,
            bound_term: BoundTerm::Full,
            overrides: Overrides::default(),
            threads: None,
            record_time: false,
            out: None,
        }
    }

    /// The stock configuration behind each preset name.
    pub fn preset(name: &str) -> Result<Self> {
        let sweep = pow4(8, 14);
        let one = |v: f64| vec![v];
        let cfg = match name {
            "canonical-p6" | "canonical-p8-sharp" => {
                let p = if name == "canonical-p6" { 6.0 } else { 8.0 };
                let mut c = Self::base(
                    name,
                    Grid {
                        n: sweep,
                        l: vec![1],
                        p: one(p),
                        theta: one(1.0),
                        ..Default::default()
                    },
                );
                c.family = Some("constant_bump".into());
                if p > 6.0 {
                    c.fit_x = FitX::SqrtNOverL;
                }
                c
            }
            "smallcap-constant" | "smallcap-random" => {
                let random = name == "smallcap-random";
                let mut c = Self::base(
                    name,
                    Grid {
                        n: sweep,
                        l_exponent: Some(0.25),
                        l1: vec![1],
                        p: one(4.0),
                        q: one(4.0),
                        theta: one(1.0),
                        seeds: if random {
                            (0..32).collect()
                        } else {
                            Vec::new()
                        },
                        ..Default::default()
                    },
                );
                c.family = Some(
                    if random {
                        "random_sign_smallball"
                    } else {
                        "constant_bump"
                    }
                    .into(),
                );
                c.bound_term = if random {
                    BoundTerm::Second
                } else {
                    BoundTerm::First
                };
                c
            }
            "bikakeya" | "birestriction" => {
                let mut c = Self::base(
                    name,
                    Grid {
                        n: sweep,
                        l_exponent: Some(0.25),
                        theta: one(1.0),
                        seeds: (0..50).collect(),
                        ..Default::default()
                    },
                );
                c.aggregate = Aggregate::Max;
                c
            }
            "highlow" => Self::base(
                name,
                Grid {
                    n: vec![256, 512, 1024, 2048],
                    l_exponent: Some(0.5 - 2.0 * DEFAULT_EPSILON),
                    theta: one(1.0),
                    ..Default::default()
                },
            ),
            "count-solutions" => {
                let mut c = Self::base(
                    name,
                    Grid {
                        n: (8..=16).map(|k| 1u64 << k).collect(),
                        theta: one(1.0),
                        ..Default::default()
                    },
                );
                c.fit_y = FitY::Lhs;
                c
            }
            "ap-intersect" => {
                let mut c = Self::base(
                    name,
                    Grid {
                        n: pow4(8, 14),
                        theta: one(1.0),
                        ..Default::default()
                    },
                );
                c.sequence.kind = SequenceKind::ApRich;
                c.fit_y = FitY::Lhs;
                c
            }
            "incidence" => {
                let mut c = Self::base(
                    name,
                    Grid {
                        n: vec![256, 1024],
                        l: vec![4],
                        theta: one(1.0),
                        seeds: (0..8).collect(),
                        r: vec![1, 2, 4],
                        ..Default::default()
                    },
                );
                c.aggregate = Aggregate::Max;
                c
            }
            "transfer-sweep" => {
                let mut c = Self::base(
                    name,
                    Grid {
                        n: vec![1024],
                        p: one(4.0),
                        t_exponent: vec![1.5, 1.625, 1.75, 1.875, 2.0],
                        theta: one(1.0),
                        ..Default::default()
                    },
                );
                c.family = Some("unit".into());
                c.fit_x = FitX::T;
                c
            }
            _ => {
                return Err(DeclabError::Unknown(format!(
                    "preset {name:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| DeclabError::InvalidParameter(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn consts(&self) -> GeomConsts {
        self.overrides.geometry.unwrap_or_default()
    }

    /// Grid points in output order: N outermost, then L, L1, p, q, T, θ,
    /// seed, r.
    pub fn points(&self) -> Vec<GridPoint> {
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().map(|&x| Some(x)).collect()
            }
        }
        let g = &self.grid;
        let thetas = if g.theta.is_empty() {
            vec![1.0]
        } else {
            g.theta.clone()
        };
        let mut out = Vec::new();
        for &n in &g.n {
            let ls = match g.l_exponent {
                Some(e) => vec![Some(((n as f64).powf(e).round() as usize).max(1))],
                None => axis(&g.l),
            };
            for &l in &ls {
                for &l1 in &axis(&g.l1) {
                    for &p in &axis(&g.p) {
                        for &q in &axis(&g.q) {
                            for &t_exponent in &axis(&g.t_exponent) {
                                for &theta in &thetas {
                                    for &seed in &axis(&g.seeds) {
                                        for &r in &axis(&g.r) {
                                            out.push(GridPoint {
                                                n,
                                                l,
                                                l1,
                                                p,
                                                q,
                                                t_exponent,
                                                theta,
                                                seed,
                                                r,
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Checks every grid point against the preconditions of its scenario.
    pub fn validate(&self) -> Result<()> {
        if !PRESETS.contains(&self.scenario.as_str()) {
            return Err(DeclabError::Unknown(format!(
                "scenario {:?}",
                self.scenario
            )));
        }
        if self.threads == Some(0) {
            return Err(DeclabError::InvalidParameter(
                "threads must be positive".into(),
            ));
        }
        let family = self.family.as_deref();
        let s = self.scenario.as_str();
        match s {
            "transfer-sweep" => {
                if !matches!(family, None | Some("unit") | Some("random_sign")) {
                    return Err(DeclabError::Unknown(format!("transfer family {family:?}")));
                }
            }
            _ => {
                if let Some(f) = family {
                    FamilyKind::from_name(f)?;
                }
            }
        }
        for pt in self.points() {
            pt.check(self).map_err(|e| {
                DeclabError::InvalidParameter(format!("{} at {}: {e}", self.scenario, pt.label()))
            })?;
        }
        Ok(())
    }

    fn sequence(&self, n: u64, theta: f64) -> Result<GenDirichletSeq> {
        match self.sequence.kind {
            SequenceKind::Log => gen_log(n),
            SequenceKind::Random => gen_random(n, theta, self.sequence.seed),
            SequenceKind::ApRich => gen_ap_rich(n),
        }
    }

    fn family_kind(&self) -> Result<FamilyKind> {
        FamilyKind::from_name(self.family.as_deref().unwrap_or("constant_bump"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: u64,
    pub l: Option<usize>,
    pub l1: Option<usize>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub t_exponent: Option<f64>,
    pub theta: f64,
    pub seed: Option<u64>,
    pub r: Option<usize>,
}

fn need<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| DeclabError::InvalidParameter(format!("grid axis {name} is required")))
}

impl GridPoint {
    fn label(&self) -> String {
        serde_json::to_string(self).expect("grid point serializes")
    }

    fn t(&self) -> Option<f64> {
        self.t_exponent.map(|e| (self.n as f64).powf(e))
    }

    fn check(&self, cfg: &ScenarioConfig) -> Result<()> {
        let n = self.n;
        if n < 16 {
            return Err(DeclabError::InvalidParameter(format!("N = {n} < 16")));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(DeclabError::InvalidParameter(format!(
                "theta = {} outside (0, 1]",
                self.theta
            )));
        }
        let len = short_len(n);
        if let Some(l) = self.l {
            if l == 0 || l > len {
                return Err(DeclabError::InvalidParameter(format!(
                    "L = {l} outside [1, {len}]"
                )));
            }
        }
        if let (Some(l1), Some(l)) = (self.l1, self.l) {
            if l1 == 0 || l1 > l {
                return Err(DeclabError::InvalidParameter(format!(
                    "L1 = {l1} outside [1, L = {l}]"
                )));
            }
        }
        if let Some(p) = self.p {
            if !(p >= 2.0 && p.is_finite()) {
                return Err(DeclabError::InvalidParameter(format!("p = {p} < 2")));
            }
        }
        if let Some(e) = self.t_exponent {
            if !(1.0..=2.0).contains(&e) {
                return Err(DeclabError::InvalidParameter(format!(
                    "T exponent {e} outside [1, 2]"
                )));
            }
        }
        let random_family = cfg
            .family
            .as_deref()
            .is_some_and(|f| f.starts_with("random"));
        match cfg.scenario.as_str() {
            "canonical-p6" | "canonical-p8-sharp" => {
                need(self.l, "L")?;
                need(self.p, "p")?;
            }
            "smallcap-constant" | "smallcap-random" => {
                let (l, l1) = (need(self.l, "L")?, need(self.l1, "L1")?);
                let (p, q) = (need(self.p, "p")?, need(self.q, "q")?);
                small_cap_bound(n as f64, l as f64, l1 as f64, p, q)?;
            }
            "bikakeya" | "birestriction" => {
                let l = need(self.l, "L")?;
                need(self.seed, "seeds")?;
                if len / l < 2 {
                    return Err(DeclabError::InvalidParameter(format!(
                        "L = {l} leaves fewer than two cells"
                    )));
                }
            }
            "highlow" => {
                need(self.l, "L")?;
            }
            "count-solutions" => {
                if n > MAX_COUNT_N {
                    return Err(DeclabError::InvalidParameter(format!(
                        "N = {n} above {MAX_COUNT_N}"
                    )));
                }
            }
            "incidence" => {
                need(self.l, "L")?;
                need(self.seed, "seeds")?;
                if need(self.r, "r")? == 0 {
                    return Err(DeclabError::InvalidParameter("r = 0".into()));
                }
            }
            "transfer-sweep" => {
                need(self.p, "p")?;
                need(self.t_exponent, "T_exponent")?;
            }
            _ => {}
        }
        if random_family && self.seed.is_none() && cfg.scenario != "transfer-sweep" {
            return Err(DeclabError::InvalidParameter(
                "random family without seeds".into(),
            ));
        }
        Ok(())
    }

    fn ratio_params(&self) -> RatioParams {
        RatioParams {
            n: self.n,
            theta: self.theta,
            l: self.l.unwrap_or(0),
            l1: self.l1,
            p: self.p.unwrap_or(0.0),
            q: self.q,
            seed: self.seed,
            t: self.t(),
        }
    }
}

/// One measured quantity at one grid point. Column order is the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "L")]
    pub l: Option<usize>,
    #[serde(rename = "L1")]
    pub l1: Option<usize>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub theta: f64,
    pub seed: Option<u64>,
    pub r: Option<usize>,
    /// Abscissa of the scenario's fit.
    pub x: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub paper_bound: Option<f64>,
    pub fit_group: String,
    pub seconds: Option<f64>,
}

pub const CSV_HEADER: [&str; 17] = [
    "scenario",
    "N",
    "L",
    "L1",
    "p",
    "q",
    "T",
    "theta",
    "seed",
    "r",
    "x",
    "lhs",
    "rhs",
    "ratio",
    "paper_bound",
    "fit_group",
    "seconds",
];

impl ResultRow {
    fn new(
        cfg: &ScenarioConfig,
        pt: &GridPoint,
        group: &str,
        lhs: f64,
        rhs: f64,
        ratio: f64,
    ) -> Self {
        let x = match cfg.fit_x {
            FitX::N => pt.n as f64,
            FitX::SqrtNOverL => (pt.n as f64).sqrt() / pt.l.unwrap_or(1) as f64,
            FitX::T => pt.t().unwrap_or(f64::NAN),
        };
        ResultRow {
            scenario: cfg.scenario.clone(),
            n: pt.n,
            l: pt.l,
            l1: pt.l1,
            p: pt.p,
            q: pt.q,
            t: pt.t(),
            theta: pt.theta,
            seed: pt.seed,
            r: pt.r,
            x,
            lhs,
            rhs,
            ratio,
            paper_bound: None,
            fit_group: group.to_string(),
            seconds: None,
        }
    }

    fn bound(mut self, b: f64) -> Self {
        self.paper_bound = Some(b);
        self
    }

    /// Column value as text, for grouping. Missing values are empty.
    pub fn key(&self, column: &str) -> Result<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        Ok(match column {
            "scenario" => self.scenario.clone(),
            "fit_group" => self.fit_group.clone(),
            "N" => self.n.to_string(),
            "L" => opt(self.l.map(|v| v.to_string())),
            "L1" => opt(self.l1.map(|v| v.to_string())),
            "p" => opt(self.p.map(|v| v.to_string())),
            "q" => opt(self.q.map(|v| v.to_string())),
            "T" => opt(self.t.map(|v| v.to_string())),
            "theta" => self.theta.to_string(),
            "seed" => opt(self.seed.map(|v| v.to_string())),
            "r" => opt(self.r.map(|v| v.to_string())),
            _ => return Err(DeclabError::Unknown(format!("group column {column:?}"))),
        })
    }

    /// Numeric column value, for fit axes.
    pub fn value(&self, column: &str) -> Result<Option<f64>> {
        Ok(match column {
            "N" => Some(self.n as f64),
            "L" => self.l.map(|v| v as f64),
            "L1" => self.l1.map(|v| v as f64),
            "p" => self.p,
            "q" => self.q,
            "T" => self.t,
            "theta" => Some(self.theta),
            "r" => self.r.map(|v| v as f64),
            "x" => Some(self.x),
            "lhs" => Some(self.lhs),
            "rhs" => Some(self.rhs),
            "ratio" => Some(self.ratio),
            "paper_bound" => self.paper_bound,
            "seconds" => self.seconds,
            _ => return Err(DeclabError::Unknown(format!("numeric column {column:?}"))),
        })
    }
}

fn ratio_row(cfg: &ScenarioConfig, pt: &GridPoint, group: &str, lhs: f64, rhs: f64) -> ResultRow {
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    ResultRow::new(cfg, pt, group, lhs, rhs, ratio)
}

fn run_canonical(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    let (l, p) = (need(pt.l, "L")?, need(pt.p, "p")?);
    let seq = cfg.sequence(pt.n, pt.theta)?;
    let cells = canonical_partition(&seq, l, &cfg.consts())?;
    let f = extremal_family(&cfg.family_kind()?, &cells, pt.seed.unwrap_or(0))?;
    let rep = decoupling_ratio(
        &f,
        &cells,
        p,
        &default_window(pt.n, l, pt.theta),
        pt.ratio_params(),
    )?;
    // Flat up to N^ε for p ≤ 6, (N^{1/2}/L)^{1/2−3/p} above.
    let bound = ((pt.n as f64).sqrt() / l as f64).powf((0.5 - 3.0 / p).max(0.0));
    Ok(vec![ResultRow::new(
        cfg,
        pt,
        "decoupling",
        rep.lhs,
        rep.rhs,
        rep.ratio,
    )
    .bound(bound)])
}

fn run_small_cap(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    let (l, l1) = (need(pt.l, "L")?, need(pt.l1, "L1")?);
    let (p, q) = (need(pt.p, "p")?, need(pt.q, "q")?);
    let seq = cfg.sequence(pt.n, pt.theta)?;
    let caps = small_cap_partition(&seq, l, l1, &cfg.consts())?;
    let f = extremal_family(&cfg.family_kind()?, &caps, pt.seed.unwrap_or(0))?;
    let rep = small_cap_ratio(
        &f,
        &caps,
        p,
        q,
        &default_window(pt.n, l, pt.theta),
        pt.ratio_params(),
    )?;
    let (nf, lf, l1f) = (pt.n as f64, l as f64, l1 as f64);
    let bound = match cfg.bound_term {
        BoundTerm::Full => small_cap_bound(nf, lf, l1f, p, q)?,
        BoundTerm::First => {
            nf.powf(0.5 - 0.5 / q - 1.5 / p) * lf.powf(2.0 / p) / l1f.powf(1.0 - 1.0 / p - 1.0 / q)
        }
        BoundTerm::Second => (nf.sqrt() / l1f).powf(0.5 - 1.0 / q),
    };
    Ok(vec![ResultRow::new(
        cfg,
        pt,
        "small_cap",
        rep.lhs,
        rep.rhs,
        rep.ratio,
    )
    .bound(bound)])
}

fn run_bikakeya(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    let (l, seed) = (need(pt.l, "L")?, need(pt.seed, "seeds")?);
    let consts = cfg.consts();
    let seq = cfg.sequence(pt.n, pt.theta)?;
    let cells = canonical_partition(&seq, l, &consts)?;
    let ball = ball_p_of_l(&seq, l, 0.0, &consts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_side = cfg.overrides.per_side.unwrap_or(8);
    let (a, b) = random_kakeya_config(&cells, &ball, per_side, pt.n, &consts, &mut rng)?;
    let rep = bilinear_kakeya_check(&a, &b, &ball, pt.n, &consts, pt.ratio_params())?;
    Ok(vec![ResultRow::new(
        cfg,
        pt,
        "bilinear_kakeya",
        rep.lhs,
        rep.rhs,
        rep.ratio,
    )])
}

fn run_birestriction(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    let (l, seed) = (need(pt.l, "L")?, need(pt.seed, "seeds")?);
    let consts = cfg.consts();
    let seq = cfg.sequence(pt.n, pt.theta)?;
    let cells = canonical_partition(&seq, l, &consts)?;
    let ball = ball_p_of_l(&seq, l, 0.0, &consts)?;
    let (left, right) = transversal_blocks(&cells, pt.n, &consts)?;
    let kind = match cfg.family.as_deref() {
        None => FamilyKind::RandomSignSmallball,
        Some(_) => cfg.family_kind()?,
    };
    let f1 = extremal_family(&kind, left, 2 * seed)?;
    let f2 = extremal_family(&kind, right, 2 * seed + 1)?;
    let window = kappa_window(pt.n as f64, l as f64, pt.theta, DEFAULT_KAPPA);
    let rep = bilinear_restriction_check(
        &f1,
        &f2,
        left,
        right,
        &ball,
        window,
        pt.n,
        &consts,
        pt.ratio_params(),
    )?;
    Ok(vec![ResultRow::new(
        cfg,
        pt,
        "bilinear_restriction",
        rep.lhs,
        rep.rhs,
        rep.ratio,
    )])
}

fn run_highlow(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    let l = need(pt.l, "L")?;
    let seq = cfg.sequence(pt.n, pt.theta)?;
    let eps = cfg.overrides.epsilon.unwrap_or(DEFAULT_EPSILON);
    let ladder = ScaleLadder::new(pt.n, l, eps, seq.len())?;
    let setup = HighLowSetup::new(&seq, &ladder, &cfg.consts())?;
    let f = extremal_family(
        &cfg.family_kind()?,
        &setup.cells[setup.depth() - 1],
        pt.seed.unwrap_or(0),
    )?;
    let (alpha, r) = dominant_scales(&f, &setup, DEFAULT_SCALE_EXPONENT)?;
    let c_tilde = cfg.overrides.c_tilde.unwrap_or(DEFAULT_C_TILDE);
    let state = prune(&f, &setup, &PruneParams::new(alpha, r, c_tilde))?;
    let low = low_lemma_check(&state, &setup)?;
    let high = high_lemma_check(&state, &setup)?;
    let fm = fm_comparable_check(&state, &setup)?;
    let mut residual: f64 = 0.0;
    let mut top: f64 = 0.0;
    let mut violations = 0usize;
    let mut leakage: f64 = 0.0;
    for level in &state.levels {
        violations += level.monotone_violations;
        leakage = leakage.max(level.leakage);
        if let Some((lo, hi)) = &level.split {
            for ((g, a), b) in level.g.samples.iter().zip(&lo.samples).zip(&hi.samples) {
                residual = residual.max((g - a - b).norm());
                top = top.max(g.norm());
            }
        }
    }
    let grid_points = (state.grid.len * state.depth()) as f64;
    Ok(vec![
        ResultRow::new(cfg, pt, "low_lemma", low.lhs, low.rhs, low.ratio),
        ResultRow::new(cfg, pt, "high_lemma", high.lhs, high.rhs, high.ratio),
        ResultRow::new(cfg, pt, "fm_comparable", fm.lhs, fm.rhs, fm.ratio),
        ratio_row(cfg, pt, "split_residual", residual, top),
        ratio_row(
            cfg,
            pt,
            "monotone_violations",
            violations as f64,
            grid_points,
        ),
        ResultRow::new(cfg, pt, "leakage", leakage, 1.0, leakage),
    ])
}

fn run_count(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    let seq = cfg.sequence(pt.n, pt.theta)?;
    let nf = pt.n as f64;
    let tol = cfg.overrides.count_tol_scale.unwrap_or(1.0) * pt.theta / (nf * nf);
    let c = count_solutions(&seq.terms, tol, CountMethod::Mitm)?;
    let row = ratio_row(cfg, pt, "solutions", c.total as f64, c.diagonal as f64);
    Ok(vec![row.bound(nf.powf(1.5))])
}

fn run_ap(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    let seq = cfg.sequence(pt.n, pt.theta)?;
    let nf = pt.n as f64;
    let alpha = cfg.overrides.ap_alpha.unwrap_or(0.5);
    let count = ap_intersection_count(&seq.terms, nf.powf(-alpha))?;
    let floor = (nf.sqrt() / 10.0).floor().max(1.0);
    Ok(vec![ratio_row(
        cfg,
        pt,
        "ap_intersection",
        count as f64,
        floor,
    )
    .bound(ap_intersection_bound(nf, alpha))])
}

/// Fitted-constant ceiling for matched incidence cases.
pub const INCIDENCE_CONSTANT_CAP: f64 = 16.0;

fn run_incidence(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    let (l, seed, r) = (need(pt.l, "L")?, need(pt.seed, "seeds")?, need(pt.r, "r")?);
    let consts = cfg.consts();
    let seq = cfg.sequence(pt.n, pt.theta)?;
    let cells = canonical_partition(&seq, l, &consts)?;
    let ball = ball_p_of_l(&seq, l, 0.0, &consts)?;
    let members = incidence_collection(&cells, &ball, &IncidenceLayout::Random, seed, &consts);
    let rep = incidence_experiment(&members, &cells, &cells, &ball, pt.n, l, r, &consts)?;
    Ok(vec![ResultRow::new(
        cfg,
        pt,
        "incidence",
        rep.constant,
        1.0,
        rep.constant,
    )
    .bound(INCIDENCE_CONSTANT_CAP)])
}

fn run_transfer(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    let p = need(pt.p, "p")?;
    let t = need(pt.t(), "T_exponent")?;
    let seq = normalize_first_gap(&cfg.sequence(pt.n, pt.theta)?)?;
    let lift = build_lift(&seq, cfg.overrides.lift_c.unwrap_or(DEFAULT_LIFT_C))?;
    let b = match cfg.family.as_deref() {
        Some("random_sign") => random_signs(seq.len(), pt.seed.unwrap_or(0)),
        _ => unit_coeffs(seq.len()),
    };
    let norm = lp_coeff_norm(&b, p);
    let point = transfer_sweep(&lift, &seq, &b, &[t], p)?.remove(0);
    let nf = pt.n as f64;
    let bound = nf.sqrt() + t.powf(1.0 / p) * nf.powf(0.25 - 0.5 / p);
    Ok(vec![
        ratio_row(cfg, pt, "direct", point.direct_root, norm).bound(bound),
        ratio_row(cfg, pt, "lift2d", point.predicted_root, norm).bound(bound),
        ratio_row(cfg, pt, "lift_defect", lift.defect * nf, 1.0).bound(0.25),
    ])
}

fn run_point(cfg: &ScenarioConfig, pt: &GridPoint) -> Result<Vec<ResultRow>> {
    match cfg.scenario.as_str() {
        "canonical-p6" | "canonical-p8-sharp" => run_canonical(cfg, pt),
        "smallcap-constant" | "smallcap-random" => run_small_cap(cfg, pt),
        "bikakeya" => run_bikakeya(cfg, pt),
        "birestriction" => run_birestriction(cfg, pt),
        "highlow" => run_highlow(cfg, pt),
        "count-solutions" => run_count(cfg, pt),
        "ap-intersect" => run_ap(cfg, pt),
        "incidence" => run_incidence(cfg, pt),
        "transfer-sweep" => run_transfer(cfg, pt),
        s => Err(DeclabError::Unknown(format!("scenario {s:?}"))),
    }
}

/// Validates, then runs every grid point. Any failing point aborts the run
/// with its parameters in the message.
pub fn run(cfg: &ScenarioConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let points = cfg.points();
    let work = || -> Result<Vec<ResultRow>> {
        let per_point: Vec<Result<Vec<ResultRow>>> = points
            .par_iter()
            .map(|pt| {
                let start = Instant::now();
                let mut rows = run_point(cfg, pt).map_err(|e| {
                    DeclabError::InvalidParameter(format!(
                        "{} at {}: {e}",
                        cfg.scenario,
                        pt.label()
                    ))
                })?;
                if cfg.record_time {
                    let secs = start.elapsed().as_secs_f64();
                    rows.iter_mut().for_each(|r| r.seconds = Some(secs));
                }
                Ok(rows)
            })
            .collect();
        let mut out = Vec::new();
        for rows in per_point {
            out.extend(rows?);
        }
        Ok(out)
    };
    match cfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| DeclabError::InvalidParameter(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

pub fn write_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let io = |e: csv::Error| DeclabError::Io(e.to_string());
    wr.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        wr.serialize(r).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd
        .headers()
        .map_err(|e| DeclabError::Io(e.to_string()))?
        .clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(DeclabError::InvalidParameter(format!(
            "CSV header {headers:?} is not the result schema"
        )));
    }
    rd.deserialize()
        .map(|r| r.map_err(|e| DeclabError::InvalidParameter(format!("CSV row: {e}"))))
        .collect()
}

/// One fitted group: the key columns and values, and either a fit or the
/// reason none was possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub group: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<ExponentFit>,
    /// Fit of `paper_bound` over the same abscissae, when every row has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_fit: Option<ExponentFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Log-log fits of `y` against `x` per group. Rows sharing an x inside a
/// group collapse to one point by `aggregate`; groups come out sorted by key.
pub fn fit_groups(
    rows: &[ResultRow],
    x: &str,
    y: &str,
    keys: &[&str],
    aggregate: Aggregate,
) -> Result<Vec<GroupFit>> {
    let mut groups: BTreeMap<Vec<String>, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let k = keys.iter().map(|c| r.key(c)).collect::<Result<Vec<_>>>()?;
        groups.entry(k).or_default().push(r);
    }
    let collapse = |v: &[f64]| match aggregate {
        Aggregate::Median => median(v),
        Aggregate::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let mut out = Vec::new();
    for (k, members) in groups {
        let mut by_x: BTreeMap<u64, (f64, Vec<f64>, Vec<Option<f64>>)> = BTreeMap::new();
        for r in &members {
            let xv = r
                .value(x)?
                .ok_or_else(|| DeclabError::InvalidParameter(format!("row without {x}")))?;
            let yv = r
                .value(y)?
                .ok_or_else(|| DeclabError::InvalidParameter(format!("row without {y}")))?;
            let e = by_x
                .entry(xv.to_bits())
                .or_insert((xv, Vec::new(), Vec::new()));
            e.1.push(yv);
            e.2.push(r.paper_bound);
        }
        let mut pts: Vec<(f64, f64)> = by_x
            .values()
            .map(|(xv, ys, _)| (*xv, collapse(ys)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let bounds: Option<Vec<(f64, f64)>> = by_x
            .values()
            .map(|(xv, _, bs)| {
                bs.iter()
                    .copied()
                    .collect::<Option<Vec<f64>>>()
                    .map(|b| (*xv, collapse(&b)))
            })
            .collect();
        let group = keys.iter().map(|c| c.to_string()).zip(k).collect();
        let (fit, error) = match ExponentFit::from_pairs(&pts) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let bound_fit = bounds.and_then(|mut b| {
            b.sort_by(|a, c| a.0.total_cmp(&c.0));
            ExponentFit::from_pairs(&b).ok()
        });
        out.push(GroupFit {
            group,
            fit,
            bound_fit,
            error,
        });
    }
    Ok(out)
}

/// Default grouping for run summaries.
pub const SUMMARY_KEYS: [&str; 3] = ["scenario", "fit_group", "p"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub rows: usize,
    pub x: String,
    pub y: String,
    pub aggregate: Aggregate,
    pub fits: Vec<GroupFit>,
}

fn y_name(y: FitY) -> &'static str {
    match y {
        FitY::Ratio => "ratio",
        FitY::Lhs => "lhs",
        FitY::Rhs => "rhs",
    }
}

pub fn summarize(cfg: &ScenarioConfig, rows: &[ResultRow]) -> Result<Summary> {
    let y = y_name(cfg.fit_y);
    Ok(Summary {
        scenario: cfg.scenario.clone(),
        rows: rows.len(),
        x: "x".into(),
        y: y.into(),
        aggregate: cfg.aggregate,
        fits: fit_groups(rows, "x", y, &SUMMARY_KEYS, cfg.aggregate)?,
    })
}

/// Writes results.csv and summary.json into `dir`, creating it.
pub fn write_outputs(dir: &Path, rows: &[ResultRow], summary: &Summary) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(rows, fs::File::create(dir.join("results.csv"))?)?;
    let json = serde_json::to_string_pretty(summary).map_err(|e| DeclabError::Io(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x: f64, y: f64, group: &str) -> ResultRow {
        let cfg = ScenarioConfig::preset("canonical-p6").unwrap();
        let pt = GridPoint {
            n: x as u64,
            l: Some(1),
            l1: None,
            p: Some(6.0),
            q: None,
            t_exponent: None,
            theta: 1.0,
            seed: None,
            r: None,
        };
        ResultRow::new(&cfg, &pt, group, y, 1.0, y)
    }

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            let cfg = ScenarioConfig::preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!cfg.points().is_empty());
            assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
        assert!(ScenarioConfig::preset("nope").is_err());
    }

    #[test]
    fn grid_order_is_n_major() {
        let cfg = ScenarioConfig::preset("incidence").unwrap();
        let pts = cfg.points();
        assert_eq!(pts.len(), 2 * 8 * 3);
        assert!(pts.windows(2).all(|w| w[0].n <= w[1].n));
        assert_eq!((pts[0].seed, pts[0].r), (Some(0), Some(1)));
        assert_eq!((pts[1].seed, pts[1].r), (Some(0), Some(2)));
    }

    #[test]
    fn quarter_power_l_per_n() {
        let cfg = ScenarioConfig::preset("smallcap-constant").unwrap();
        let ls: Vec<usize> = cfg.points().iter().map(|p| p.l.unwrap()).collect();
        assert_eq!(ls, vec![4, 6, 8, 11]);
    }

    #[test]
    fn invalid_points_are_rejected_before_running() {
        let mut cfg = ScenarioConfig::preset("canonical-p6").unwrap();
        cfg.grid.l = vec![1000];
        let err = run(&cfg).unwrap_err().to_string();
        assert!(err.contains("L = 1000"), "{err}");
        let mut cfg = ScenarioConfig::preset("count-solutions").unwrap();
        cfg.grid.n.push(1 << 18);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_grid_gives_header_only() {
        let mut cfg = ScenarioConfig::preset("canonical-p6").unwrap();
        cfg.grid.n.clear();
        let rows = run(&cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![row(256.0, 1.5, "a"), row(1024.0, 2.5, "a")];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn exact_power_law_fits_exactly() {
        let rows: Vec<ResultRow> = (8..12)
            .map(|k| {
                row(
                    (1u64 << k) as f64,
                    7.0 * ((1u64 << k) as f64).powf(0.5),
                    "g",
                )
            })
            .collect();
        let fits = fit_groups(&rows, "N", "ratio", &["fit_group"], Aggregate::Median).unwrap();
        assert_eq!(fits.len(), 1);
        assert!((fits[0].fit.as_ref().unwrap().slope - 0.5).abs() < 1e-9);
        let flat: Vec<ResultRow> = (8..12).map(|k| row((1u64 << k) as f64, 3.0, "g")).collect();
        let fits = fit_groups(&flat, "N", "ratio", &["fit_group"], Aggregate::Median).unwrap();
        assert!(fits[0].fit.as_ref().unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn shared_abscissae_collapse_by_aggregate() {
        let mut rows = Vec::new();
        for k in 8..12 {
            let x = (1u64 << k) as f64;
            for y in [1.0, 2.0, 8.0] {
                rows.push(row(x, y * x, "g"));
            }
        }
        let med = fit_groups(&rows, "N", "ratio", &["fit_group"], Aggregate::Median).unwrap();
        let max = fit_groups(&rows, "N", "ratio", &["fit_group"], Aggregate::Max).unwrap();
        let (m, x) = (med[0].fit.as_ref().unwrap(), max[0].fit.as_ref().unwrap());
        assert!((m.slope - 1.0).abs() < 1e-12 && (m.intercept - 1.0).abs() < 1e-12);
        assert!((x.slope - 1.0).abs() < 1e-12 && (x.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn small_groups_report_instead_of_failing() {
        let rows = vec![row(256.0, 1.0, "g")];
        let fits = fit_groups(&rows, "N", "ratio", &["fit_group"], Aggregate::Median).unwrap();
        assert!(fits[0].fit.is_none() && fits[0].error.is_some());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut cfg = ScenarioConfig::preset("ap-intersect").unwrap();
        cfg.grid.n = vec![256, 1024];
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&run(&cfg).unwrap(), &mut a).unwrap();
        write_csv(&run(&cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
    }
}
