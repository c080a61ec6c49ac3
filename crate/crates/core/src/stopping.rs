//! Optimal stopping near the boundaries from the maximizer sets of g/ψ and g/φ.

use std::sync::Arc;

use crate::diffusion::{BoundaryKind, DiffusionSpec};
use crate::error::{Error, Result};
use crate::fundamental::{solve_fundamental, FundamentalPair};
use crate::payoff::{FnReward, Interval, PayoffExpr, Reward};
use crate::ratio::{
    global_max_set, monotone_regions, plateau_check, Component, MaxSet, MonotoneRegions, RatioKind,
};
use crate::resolvent::Resolvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisFn {
    Psi,
    Phi,
    PsiPrime,
    /// −φ′, positive.
    NegPhiPrime,
}

impl BasisFn {
    pub fn eval(self, pair: &FundamentalPair, x: f64) -> f64 {
        match self {
            BasisFn::Psi => pair.psi(x),
            BasisFn::Phi => pair.phi(x),
            BasisFn::PsiPrime => pair.psi_prime(x),
            BasisFn::NegPhiPrime => -pair.phi_prime(x),
        }
    }

    pub fn derivative(self, pair: &FundamentalPair, x: f64) -> f64 {
        match self {
            BasisFn::Psi => pair.psi_prime(x),
            BasisFn::Phi => pair.phi_prime(x),
            BasisFn::PsiPrime => pair.psi_second(x),
            BasisFn::NegPhiPrime => -pair.phi_second(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisFn::Psi => "psi",
            BasisFn::Phi => "phi",
            BasisFn::PsiPrime => "psi'",
            BasisFn::NegPhiPrime => "-phi'",
        }
    }
}

/// Whether some admissible rule achieves a segment's value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attainability {
    Yes,
    No,
    /// Reached only as the limit of admissible rules.
    LimitOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleKind {
    /// Stop on first entry into the listed components.
    HitSet(Vec<Component>),
    HitPoint(f64),
    /// Stop on first exit from (a, b).
    TwoPoint(f64, f64),
    /// No admissible rule attains the value.
    None,
    ImmediateStop,
    /// Never stopping is optimal (payoff nowhere positive).
    NeverStop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleDescription {
    pub kind: RuleKind,
    /// Starting states for which the rule yields the segment value.
    pub valid_on: Interval,
    pub notes: String,
}

impl RuleDescription {
    fn new(kind: RuleKind, valid_on: Interval, notes: impl Into<String>) -> Self {
        RuleDescription {
            kind,
            valid_on,
            notes: notes.into(),
        }
    }
}

/// V(x) = coefficient · basis(x) on `region`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSegment {
    pub region: Interval,
    pub coefficient: f64,
    pub basis: BasisFn,
    pub attainable: Attainability,
    pub rule: RuleDescription,
}

impl ValueSegment {
    pub fn value(&self, pair: &FundamentalPair, x: f64) -> f64 {
        if self.coefficient == 0.0 {
            return 0.0;
        }
        self.coefficient * self.basis.eval(pair, x)
    }

    pub fn slope(&self, pair: &FundamentalPair, x: f64) -> f64 {
        if self.coefficient == 0.0 {
            return 0.0;
        }
        self.coefficient * self.basis.derivative(pair, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DegenerateCase {
    Regular,
    /// z* sits at an unattainable lower boundary: no (0, ε) exit rule is optimal.
    ZStarAtLowerBoundary,
    /// z* = 0 and y* = ∞ with the three possible outcomes listed.
    BothAtBoundaries { outcomes: Vec<String> },
    /// V = Aψ everywhere; finite maximizers up to `b_star`.
    ZStarInfinite {
        a: f64,
        b_star: Option<f64>,
        recurrent: bool,
    },
    /// V = Bφ everywhere; finite maximizers from `a_star` on.
    YStarZero {
        b: f64,
        a_star: Option<f64>,
        recurrent: bool,
    },
    InfiniteValue { at_upper: bool },
}

impl DegenerateCase {
    pub fn name(&self) -> &'static str {
        match self {
            DegenerateCase::Regular => "Regular",
            DegenerateCase::ZStarAtLowerBoundary => "ZStarAtLowerBoundary",
            DegenerateCase::BothAtBoundaries { .. } => "BothAtBoundaries",
            DegenerateCase::ZStarInfinite { .. } => "ZStarInfinite",
            DegenerateCase::YStarZero { .. } => "YStarZero",
            DegenerateCase::InfiniteValue { .. } => "InfiniteValue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateSource {
    /// (0, z*) \ M
    BelowZStar,
    /// (y*, ∞) \ N
    AboveYStar,
    /// g/ψ strictly increasing
    IncreasingPsiRatio,
    /// g/φ strictly decreasing
    DecreasingPhiRatio,
}

/// An open interval proved to lie in the continuation region, with a checked witness.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationCertificate {
    pub region: (f64, f64),
    pub source: CertificateSource,
    /// (x, z, value of stopping at the first hit of z from x, g(x))
    pub witness: (f64, f64, f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothFit {
    pub at: f64,
    pub value_slope: f64,
    pub payoff_slope_left: f64,
    pub payoff_slope_right: f64,
    pub holds: bool,
}

impl SmoothFit {
    pub fn gap(&self) -> f64 {
        (self.value_slope - self.payoff_slope_left)
            .abs()
            .max((self.value_slope - self.payoff_slope_right).abs())
    }
}

/// Value on (a, b) of stopping at the first exit, for rules anchored at a
/// boundary that belongs to the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointSegment {
    pub a: f64,
    pub b: f64,
    pub psi_coef: f64,
    pub phi_coef: f64,
    pub notes: String,
}

#[derive(Clone)]
pub struct StoppingSolution {
    pub pair: FundamentalPair,
    pub m: MaxSet,
    pub n: MaxSet,
    pub z_star: f64,
    pub y_star: f64,
    pub ordering_ok: bool,
    pub lower: Vec<ValueSegment>,
    pub upper: Vec<ValueSegment>,
    /// Band (z*, y*) the method does not resolve.
    pub unknown: Option<(f64, f64)>,
    /// Equivalent optimal rules enumerated for testing.
    pub rules: Vec<RuleDescription>,
    pub continuation: Vec<ContinuationCertificate>,
    pub stopping: Vec<Component>,
    pub degenerate: DegenerateCase,
    pub smooth_fit: Vec<SmoothFit>,
    pub plateaus: Vec<((f64, f64), f64)>,
    pub psi_regions: MonotoneRegions,
    pub phi_regions: MonotoneRegions,
    pub boundary_rules: Vec<TwoPointSegment>,
    pub extensions_applied: Vec<String>,
    pub notes: Vec<String>,
    /// Set when the near-boundary value formula is withheld.
    pub unsupported: Option<String>,
    /// Added to every segment value (the resolvent of a running payoff).
    pub offset: Option<Arc<dyn Reward>>,
}

impl std::fmt::Debug for StoppingSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoppingSolution")
            .field("z_star", &self.z_star)
            .field("y_star", &self.y_star)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("degenerate", &self.degenerate)
            .finish_non_exhaustive()
    }
}

impl StoppingSolution {
    pub fn segment(&self, x: f64) -> Option<&ValueSegment> {
        self.lower.iter().chain(&self.upper).find(|s| s.region.contains(x))
    }

    /// Value at `x`, `None` inside the unresolved band.
    pub fn value(&self, x: f64) -> Option<f64> {
        let v = self.segment(x)?.value(&self.pair, x);
        Some(v + self.offset.as_ref().map_or(0.0, |o| o.value(x)))
    }

    pub fn attainable(&self, x: f64) -> Option<Attainability> {
        self.segment(x).map(|s| s.attainable)
    }

    /// Largest relative shortfall of V below g over `xs` (positive means V < g).
    pub fn majorant_violation(&self, g: &dyn Reward, xs: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for &x in xs {
            if let Some(s) = self.segment(x) {
                let v = s.value(&self.pair, x);
                let gx = g.value(x) - self.offset.as_ref().map_or(0.0, |o| o.value(x));
                if v.is_finite() && gx.is_finite() {
                    worst = worst.max((gx - v) / (1.0 + gx.abs()));
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-9 }
    }
}

/// Solves the stopping problem for payoff `g` on `spec`.
pub fn solve(g: &dyn Reward, spec: &DiffusionSpec) -> Result<StoppingSolution> {
    spec.validate()?;
    let pair = solve_fundamental(spec)?;
    solve_with_pair(g, &pair, SolveOptions::default())
}

fn lower_is_state_point(m: &MaxSet) -> bool {
    m.lower.limsup.is_none()
}

fn upper_is_state_point(m: &MaxSet) -> bool {
    m.upper.limsup.is_none()
}

/// Degenerate-case classification from the two maximizer sets.
pub fn classify_degenerate(m: &MaxSet, n: &MaxSet) -> DegenerateCase {
    let z = m.extremal_point;
    let y = n.extremal_point;
    if z == m.state_hi && !upper_is_state_point(m) {
        if m.sup_value == f64::INFINITY {
            return DegenerateCase::InfiniteValue { at_upper: true };
        }
        return DegenerateCase::ZStarInfinite {
            a: m.sup_value,
            b_star: m.largest_finite(),
            recurrent: m.upper.recurrent,
        };
    }
    if y == n.state_lo && !lower_is_state_point(n) {
        if n.sup_value == f64::INFINITY {
            return DegenerateCase::InfiniteValue { at_upper: false };
        }
        return DegenerateCase::YStarZero {
            b: n.sup_value,
            a_star: n.smallest_finite(),
            recurrent: n.lower.recurrent,
        };
    }
    let z_low = z == m.state_lo && !lower_is_state_point(m);
    let y_high = y == n.state_hi && !upper_is_state_point(n);
    if z_low && y_high {
        return DegenerateCase::BothAtBoundaries {
            outcomes: vec![
                "stopping immediately is optimal everywhere (g is r-excessive)".into(),
                "an optimal rule stops on (0, a] and on [b, inf) for some 0 < a < b < inf".into(),
                "no finite admissible stopping time is optimal".into(),
            ],
        };
    }
    if z_low {
        return DegenerateCase::ZStarAtLowerBoundary;
    }
    DegenerateCase::Regular
}

fn closed(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Interval {
    Interval {
        lo,
        hi,
        lo_closed,
        hi_closed,
    }
}

/// Solve with an already computed fundamental pair.
pub fn solve_with_pair(g: &dyn Reward, pair: &FundamentalPair, opts: SolveOptions) -> Result<StoppingSolution> {
    let spec = pair.spec();
    let m = global_max_set(RatioKind::GOverPsi, g, pair, opts.tol)?;
    let n = global_max_set(RatioKind::GOverPhi, g, pair, opts.tol)?;
    let psi_regions = monotone_regions(RatioKind::GOverPsi, g, pair);
    let phi_regions = monotone_regions(RatioKind::GOverPhi, g, pair);
    let (z, y, ordering_ok) = crate::ratio::extremal_points(&m, &n);
    let (lo, hi) = (spec.state.lo, spec.state.hi);
    let lo_sp = spec.lower.is_state_point();
    let hi_sp = spec.upper.is_state_point();
    let mut notes = Vec::new();
    if !ordering_ok {
        notes.push(format!(
            "ordering check failed: z* = {z} > y* = {y}; review the tolerance and working domain"
        ));
    }

    let never_positive = nowhere_positive(g, pair, &m, &n);
    let degenerate = if never_positive {
        DegenerateCase::Regular
    } else {
        classify_degenerate(&m, &n)
    };

    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut rules = Vec::new();

    if never_positive {
        let whole = spec.state;
        lower.push(ValueSegment {
            region: whole,
            coefficient: 0.0,
            basis: BasisFn::Psi,
            attainable: Attainability::Yes,
            rule: RuleDescription::new(RuleKind::NeverStop, whole, "payoff is nowhere positive"),
        });
    } else {
        match &degenerate {
            DegenerateCase::InfiniteValue { .. } => {
                let whole = spec.state;
                lower.push(ValueSegment {
                    region: whole,
                    coefficient: f64::INFINITY,
                    basis: BasisFn::Psi,
                    attainable: Attainability::No,
                    rule: RuleDescription::new(RuleKind::None, whole, "the ratio is unbounded: the value is infinite"),
                });
            }
            DegenerateCase::ZStarInfinite { a, b_star, recurrent } => {
                let canonical = RuleKind::HitSet(m.components.clone());
                if *recurrent {
                    let whole = spec.state;
                    lower.push(ValueSegment {
                        region: whole,
                        coefficient: *a,
                        basis: BasisFn::Psi,
                        attainable: Attainability::Yes,
                        rule: RuleDescription::new(
                            canonical,
                            whole,
                            "finite maximizers recur toward the upper boundary, so the first entry into M is finite",
                        ),
                    });
                } else {
                    let split = b_star.unwrap_or(lo);
                    if b_star.is_some() {
                        let r = closed(lo, split, lo_sp, true);
                        lower.push(ValueSegment {
                            region: r,
                            coefficient: *a,
                            basis: BasisFn::Psi,
                            attainable: Attainability::Yes,
                            rule: RuleDescription::new(canonical, r, "first entry into the finite part of M"),
                        });
                    }
                    let r = closed(split, hi, b_star.is_none() && lo_sp, false);
                    lower.push(ValueSegment {
                        region: r,
                        coefficient: *a,
                        basis: BasisFn::Psi,
                        attainable: Attainability::No,
                        rule: RuleDescription::new(
                            RuleKind::None,
                            r,
                            "approached by hitting points of the recorded sequence toward the upper boundary",
                        ),
                    });
                }
            }
            DegenerateCase::YStarZero { b, a_star, recurrent } => {
                let canonical = RuleKind::HitSet(n.components.clone());
                if *recurrent {
                    let whole = spec.state;
                    upper.push(ValueSegment {
                        region: whole,
                        coefficient: *b,
                        basis: BasisFn::Phi,
                        attainable: Attainability::Yes,
                        rule: RuleDescription::new(canonical, whole, "finite maximizers recur toward the lower boundary"),
                    });
                } else {
                    let split = a_star.unwrap_or(hi);
                    let r = closed(lo, split, lo_sp, false);
                    upper.push(ValueSegment {
                        region: r,
                        coefficient: *b,
                        basis: BasisFn::Phi,
                        attainable: Attainability::No,
                        rule: RuleDescription::new(
                            RuleKind::None,
                            r,
                            "approached by hitting points of the recorded sequence toward the lower boundary",
                        ),
                    });
                    if a_star.is_some() {
                        let r = closed(split, hi, true, hi_sp);
                        upper.push(ValueSegment {
                            region: r,
                            coefficient: *b,
                            basis: BasisFn::Phi,
                            attainable: Attainability::Yes,
                            rule: RuleDescription::new(canonical, r, "first entry into the finite part of N"),
                        });
                    }
                }
            }
            _ => {
                // Lower side: (0, z*].
                let z_usable = z > lo || (z == lo && lo_sp);
                if z_usable && z.is_finite() {
                    let r = closed(lo, z, lo_sp, true);
                    let kind = if m.components.len() == 1 && matches!(m.components[0], Component::Point(p) if p == z) {
                        RuleKind::HitPoint(z)
                    } else {
                        RuleKind::HitSet(m.components.clone())
                    };
                    lower.push(ValueSegment {
                        region: r,
                        coefficient: m.sup_value,
                        basis: BasisFn::Psi,
                        attainable: Attainability::Yes,
                        rule: RuleDescription::new(kind, r, "stop at the first entry into M"),
                    });
                    rules.extend(rule_family(&m, lo, lo_sp, true));
                }
                let y_usable = y < hi || (y == hi && hi_sp);
                if y_usable && y.is_finite() {
                    let r = closed(y, hi, true, hi_sp);
                    let kind = if n.components.len() == 1 && matches!(n.components[0], Component::Point(p) if p == y) {
                        RuleKind::HitPoint(y)
                    } else {
                        RuleKind::HitSet(n.components.clone())
                    };
                    upper.push(ValueSegment {
                        region: r,
                        coefficient: n.sup_value,
                        basis: BasisFn::Phi,
                        attainable: Attainability::Yes,
                        rule: RuleDescription::new(kind, r, "stop at the first entry into N"),
                    });
                    rules.extend(rule_family(&n, hi, hi_sp, false));
                }
            }
        }
    }

    let covered_hi = lower.iter().map(|s| s.region.hi).fold(lo, f64::max);
    let covered_lo = upper.iter().map(|s| s.region.lo).fold(hi, f64::min);
    let unknown = (covered_lo - covered_hi > 1e-9 * (1.0 + covered_hi.abs())).then_some((covered_hi, covered_lo));
    if unknown.is_some() {
        notes.push("values between z* and y* are not determined by the ratio method".into());
    }
    if matches!(degenerate, DegenerateCase::Regular) && y == hi && !hi_sp && z < hi {
        notes.push("y* is the upper boundary: no rule of the form exit-below-H attains the value above any H".into());
    }

    let plateaus = {
        let mut p = plateau_check(&m, g, pair, RatioKind::GOverPsi)?;
        p.extend(plateau_check(&n, g, pair, RatioKind::GOverPhi)?);
        p
    };

    let mut stopping: Vec<Component> = Vec::new();
    if !never_positive {
        if z > lo || z == lo && lo_sp {
            stopping.extend(m.components.iter().copied());
        }
        if y < hi || y == hi && hi_sp {
            stopping.extend(n.components.iter().copied());
        }
        if let DegenerateCase::ZStarInfinite { .. } = degenerate {
            stopping.extend(m.components.iter().copied());
        }
        if let DegenerateCase::YStarZero { .. } = degenerate {
            stopping.extend(n.components.iter().copied());
        }
    }
    stopping.sort_by(|a, b| a.lo().total_cmp(&b.lo()));
    stopping.dedup();

    let continuation = if never_positive {
        Vec::new()
    } else {
        certificates(g, pair, &m, &n, z, y, &psi_regions, &phi_regions, &stopping)
    };

    let smooth_fit = smooth_fit_report(g, pair, &lower, &upper, &stopping);

    Ok(StoppingSolution {
        pair: pair.clone(),
        z_star: z,
        y_star: y,
        ordering_ok,
        lower,
        upper,
        unknown,
        rules,
        continuation,
        stopping,
        degenerate,
        smooth_fit,
        plateaus,
        psi_regions,
        phi_regions,
        boundary_rules: Vec::new(),
        extensions_applied: Vec::new(),
        notes,
        unsupported: None,
        offset: None,
        m,
        n,
    })
}

/// True when g is nowhere positive up to rounding, so that never stopping is optimal.
fn nowhere_positive(g: &dyn Reward, pair: &FundamentalPair, m: &MaxSet, n: &MaxSet) -> bool {
    if m.sup_value <= 0.0 && n.sup_value <= 0.0 {
        return true;
    }
    let xs = pair.spec().domain.grid();
    let gs: Vec<f64> = xs.iter().map(|&x| g.value(x)).filter(|v| v.is_finite()).collect();
    let scale = gs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let top = gs.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let small = |sup: f64, kind: RatioKind| {
        let ratio_scale = xs
            .iter()
            .map(|&x| (g.value(x) / kind_denominator(kind, pair, x)).abs())
            .filter(|v| v.is_finite())
            .fold(0.0f64, f64::max);
        sup <= 1e-9 * ratio_scale
    };
    top <= 1e-10 * (1.0 + scale) && small(m.sup_value, RatioKind::GOverPsi) && small(n.sup_value, RatioKind::GOverPhi)
}

fn kind_denominator(kind: RatioKind, pair: &FundamentalPair, x: f64) -> f64 {
    match kind {
        RatioKind::GOverPsi => pair.psi(x),
        RatioKind::GOverPhi => pair.phi(x),
        RatioKind::GOverPsiPrime => pair.psi_prime(x),
        RatioKind::NegGOverPhiPrime => -pair.phi_prime(x),
    }
}

/// The equivalent optimal rules: hit z*, hit any b ∈ M, exit between two
/// members of M, and first entry into M.
fn rule_family(set: &MaxSet, edge: f64, edge_closed: bool, psi_side: bool) -> Vec<RuleDescription> {
    let mut members: Vec<f64> = Vec::new();
    for c in &set.components {
        members.push(c.lo());
        if c.hi() != c.lo() {
            members.push(c.hi());
        }
    }
    members.retain(|p| p.is_finite());
    let mut out = Vec::new();
    let ext = set.extremal_point;
    for &b in members.iter().take(16) {
        let valid = if psi_side {
            closed(edge, b, edge_closed, true)
        } else {
            closed(b, edge, true, edge_closed)
        };
        let note = if b == ext { "hit the extremal point" } else { "hit a member of the maximizer set" };
        out.push(RuleDescription::new(RuleKind::HitPoint(b), valid, note));
    }
    for w in members.windows(2).take(16) {
        if w[1] > w[0] {
            out.push(RuleDescription::new(
                RuleKind::TwoPoint(w[0], w[1]),
                closed(w[0], w[1], true, true),
                "exit between two members of the maximizer set",
            ));
        }
    }
    let valid = if psi_side {
        closed(edge, ext, edge_closed, true)
    } else {
        closed(ext, edge, true, edge_closed)
    };
    out.push(RuleDescription::new(
        RuleKind::HitSet(set.components.clone()),
        valid,
        "first entry into the maximizer set (canonical)",
    ));
    out
}

/// Subtracts the stopping components from an open interval.
fn subtract(region: (f64, f64), stop: &[Component]) -> Vec<(f64, f64)> {
    let mut parts = vec![region];
    for c in stop {
        let mut next = Vec::new();
        for (a, b) in parts {
            let (l, h) = (c.lo(), c.hi());
            if h <= a || l >= b {
                next.push((a, b));
                continue;
            }
            if l > a {
                next.push((a, l));
            }
            if h < b {
                next.push((h, b));
            }
        }
        parts = next;
    }
    parts.retain(|(a, b)| b > a);
    parts
}

#[allow(clippy::too_many_arguments)]
fn certificates(
    g: &dyn Reward,
    pair: &FundamentalPair,
    m: &MaxSet,
    n: &MaxSet,
    z: f64,
    y: f64,
    psi_regions: &MonotoneRegions,
    phi_regions: &MonotoneRegions,
    stop: &[Component],
) -> Vec<ContinuationCertificate> {
    let spec = pair.spec();
    let (lo, hi) = (spec.state.lo, spec.state.hi);
    let mut out = Vec::new();
    let probe = |a: f64, b: f64| -> f64 {
        let a = if a.is_finite() { a } else { b - 2.0 * (1.0 + b.abs()) };
        let b = if b.is_finite() { b } else { 2.0 * a.abs().max(1.0) + a };
        if a <= 0.0 && spec.domain.is_log() {
            0.5 * b
        } else {
            crate::grid::mid(a, b)
        }
    };
    let mut push = |region: (f64, f64), source: CertificateSource, x: f64, w: f64| {
        let hv = pair.hitting_value(x, w, g);
        let gx = g.value(x);
        if hv > gx {
            out.push(ContinuationCertificate {
                region,
                source,
                witness: (x, w, hv, gx),
            });
        }
    };
    // Gaps of M below z*, witnessed by the next member of M (or the approach sequence).
    let z_top = if z == hi { m.upper.sequence.last().copied().unwrap_or(z) } else { z };
    if z > lo {
        for (a, b) in subtract((lo, z), &m.components) {
            let x = probe(a, b.min(z_top));
            let w = m
                .components
                .iter()
                .map(|c| c.lo())
                .find(|&p| p >= b)
                .unwrap_or(z_top);
            for (ca, cb) in subtract((a, b), stop) {
                push((ca, cb), CertificateSource::BelowZStar, probe(ca, cb).min(x.max(ca)), w.max(cb.min(w)));
            }
        }
    }
    let y_bottom = if y == lo { n.lower.sequence.last().copied().unwrap_or(y) } else { y };
    if y < hi {
        for (a, b) in subtract((y, hi), &n.components) {
            let w = n
                .components
                .iter()
                .rev()
                .map(|c| c.hi())
                .find(|&p| p <= a)
                .unwrap_or(y_bottom);
            for (ca, cb) in subtract((a, b), stop) {
                push((ca, cb), CertificateSource::AboveYStar, probe(ca, cb), w);
            }
        }
    }
    for (regions, source) in [
        (psi_regions, CertificateSource::IncreasingPsiRatio),
        (phi_regions, CertificateSource::DecreasingPhiRatio),
    ] {
        for &(a, b) in &regions.regions {
            for (ca, cb) in subtract((a, b), stop) {
                let x = probe(ca, cb);
                if let Some(w) = regions.witness(x) {
                    push((ca, cb), source, x, w);
                }
            }
        }
    }
    out
}

fn smooth_fit_report(
    g: &dyn Reward,
    pair: &FundamentalPair,
    lower: &[ValueSegment],
    upper: &[ValueSegment],
    stop: &[Component],
) -> Vec<SmoothFit> {
    let mut out = Vec::new();
    let mut pts: Vec<f64> = Vec::new();
    for c in stop {
        pts.push(c.lo());
        if c.hi() != c.lo() {
            pts.push(c.hi());
        }
    }
    pts.retain(|p| p.is_finite());
    pts.dedup();
    for p in pts.into_iter().take(64) {
        let Some(seg) = lower.iter().chain(upper).find(|s| s.region.contains(p)) else {
            continue;
        };
        if !seg.coefficient.is_finite() {
            continue;
        }
        let v = seg.slope(pair, p);
        let (gl, gr) = (g.slope_left(p), g.slope(p));
        let holds = (v - gl).abs() <= 1e-6 * (1.0 + v.abs()) && (v - gr).abs() <= 1e-6 * (1.0 + v.abs());
        out.push(SmoothFit {
            at: p,
            value_slope: v,
            payoff_slope_left: gl,
            payoff_slope_right: gr,
            holds,
        });
    }
    out
}

/// Adds a running payoff: solves for g − R_rπ and shifts the value by R_rπ.
pub fn with_integral_term(g: Arc<dyn Reward>, pi: Arc<dyn Reward>, spec: &DiffusionSpec) -> Result<StoppingSolution> {
    spec.validate()?;
    let pair = solve_fundamental(spec)?;
    let res = Arc::new(Resolvent::new(&pair, pi.clone())?);
    let mut bps = g.breakpoints();
    bps.extend(pi.breakpoints());
    let (g1, r1, g2, r2) = (g.clone(), res.clone(), g.clone(), res.clone());
    let (g3, r3) = (g.clone(), res.clone());
    let transformed = FnReward::new(move |x| g1.value(x) - r1.value(x))
        .with_slope(move |x| g2.slope(x) - r2.derivative(x))
        .with_left_slope(move |x| g3.slope_left(x) - r3.derivative(x))
        .with_breakpoints(bps);
    let mut sol = solve_with_pair(&transformed, &pair, SolveOptions::default())?;
    sol.offset = Some(res);
    sol.extensions_applied.push("running payoff via its resolvent".into());
    Ok(sol)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BoundaryOptions {
    /// Fail instead of returning a partial solution when the near-boundary
    /// value formula is unavailable.
    pub require_full: bool,
}

/// Solve honouring reflecting and absorbing boundaries where the payoff is
/// defined at the end points.
pub fn solve_with_boundary_kinds(g: &PayoffExpr, spec: &DiffusionSpec, opts: BoundaryOptions) -> Result<StoppingSolution> {
    spec.validate()?;
    let mut spec2 = spec.clone();
    let mut g2 = g.clone();
    let mut applied = Vec::new();
    let mut unsupported = Vec::new();
    for upper_side in [false, true] {
        let (kind, end) = if upper_side { (spec.upper, spec.state.hi) } else { (spec.lower, spec.state.lo) };
        if !kind.is_state_point() {
            continue;
        }
        let gv = if upper_side { g.upper_value() } else { g.lower_value() }.unwrap_or_else(|| g.value(end));
        if !gv.is_finite() {
            return Err(Error::Validation(format!(
                "payoff must be defined at the {} boundary {end}",
                kind.name()
            )));
        }
        if kind == BoundaryKind::Absorbing {
            if gv <= 0.0 {
                // Never worth stopping there: behaves like killing.
                if upper_side {
                    spec2.upper = BoundaryKind::Killing;
                    spec2.state.hi_closed = false;
                } else {
                    spec2.lower = BoundaryKind::Killing;
                    spec2.state.lo_closed = false;
                }
                applied.push(format!("absorbing boundary {end} with g <= 0 treated as killing"));
            } else {
                unsupported.push(format!(
                    "absorbing boundary {end} with positive payoff: only the plateau and monotone-ratio results apply"
                ));
            }
        } else {
            applied.push(format!(
                "reflecting boundary {end} usable as a stopping point; the no-threshold result near it is disabled"
            ));
        }
    }
    if !unsupported.is_empty() && opts.require_full {
        return Err(Error::UnsupportedBoundaryCombination(unsupported.join("; ")));
    }
    if spec2.state != spec.state {
        g2 = PayoffExpr::new(
            g.pieces().to_vec(),
            spec2.state,
            if spec2.state.lo_closed { g.lower_value() } else { None },
            if spec2.state.hi_closed { g.upper_value() } else { None },
        )?;
    }
    let pair = solve_fundamental(&spec2)?;
    let mut sol = solve_with_pair(&g2, &pair, SolveOptions::default())?;
    sol.extensions_applied.extend(applied);
    if !unsupported.is_empty() {
        sol.lower.clear();
        sol.upper.clear();
        sol.rules.clear();
        sol.continuation
            .retain(|c| matches!(c.source, CertificateSource::IncreasingPsiRatio | CertificateSource::DecreasingPhiRatio));
        sol.unknown = Some((spec.state.lo, spec.state.hi));
        sol.unsupported = Some(unsupported.join("; "));
        return Ok(sol);
    }
    if spec2.lower == BoundaryKind::Reflecting && sol.z_star == spec2.state.lo {
        if let Some(seg) = boundary_two_point(&g2, &pair, spec2.state.lo) {
            sol.boundary_rules.push(seg);
        }
    }
    Ok(sol)
}

/// Best exit rule (lo, b) from states just above a reflecting lower boundary.
fn boundary_two_point(g: &dyn Reward, pair: &FundamentalPair, lo: f64) -> Option<TwoPointSegment> {
    let spec = pair.spec();
    let mut cands = crate::grid::with_points(spec.domain.grid(), &g.breakpoints());
    cands.retain(|&b| b > lo);
    let best_b = |x: f64| -> Option<(f64, f64)> {
        cands
            .iter()
            .filter(|&&b| b > x)
            .filter_map(|&b| pair.two_point_value(x, lo, b, g).ok().map(|v| (b, v)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    };
    let mut x = crate::grid::mid(lo, cands[cands.len() / 64]);
    let mut b = best_b(x)?.0;
    for _ in 0..8 {
        x = crate::grid::mid(lo, b);
        let nb = best_b(x)?.0;
        if nb == b {
            break;
        }
        b = nb;
    }
    if pair.two_point_value(x, lo, b, g).ok()? <= g.value(x) {
        return None;
    }
    let (pa, pb, fa, fb) = (pair.psi(lo), pair.psi(b), pair.phi(lo), pair.phi(b));
    let d = pb * fa - fb * pa;
    let (ga, gb) = (g.value(lo), g.value(b));
    Some(TwoPointSegment {
        a: lo,
        b,
        psi_coef: (fa * gb - fb * ga) / d,
        phi_coef: (pb * ga - pa * gb) / d,
        notes: "exit from (a, b) maximizes the two-point value; optimality is checked by simulation".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::Piece;
    use proptest::prelude::*;

    fn gbm() -> DiffusionSpec {
        DiffusionSpec::gbm(0.1, 0.2, 0.24)
    }

    fn half_line() -> Interval {
        Interval::open(0.0, f64::INFINITY)
    }

    fn ex1() -> PayoffExpr {
        PayoffExpr::new(
            vec![
                Piece::parse("(0, 10]", "x - 3").unwrap(),
                Piece::parse("(10, inf)", "7/3*x - 49/3").unwrap(),
            ],
            half_line(),
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn example1_value_and_rules() {
        let g = ex1();
        let s = solve(&g, &gbm()).unwrap();
        assert_eq!(s.degenerate, DegenerateCase::Regular);
        assert!((s.z_star - 14.0).abs() < 1e-6);
        for x in [0.5, 3.0, 6.0, 10.0, s.z_star] {
            assert!((s.value(x).unwrap() - x * x / 12.0).abs() < 1e-9 * x * x);
        }
        assert!(s.value(20.0).is_none());
        // Equivalent rules give the same value.
        let p = &s.pair;
        let v = p.two_point_value(10.0, 6.0, 14.0, &g).unwrap();
        assert!((v / (100.0 / 12.0) - 1.0).abs() < 1e-10);
        assert!(s.rules.iter().any(|r| matches!(r.kind, RuleKind::TwoPoint(..))));
        assert!(s.continuation.iter().all(|c| c.witness.2 > c.witness.3));
        assert!(s.majorant_violation(&g, &crate::grid::log_space(1e-3, 14.0, 2000)) <= 1e-9);
        assert!(s.smooth_fit.iter().all(|f| f.holds));
    }

    #[test]
    fn psi_payoff_stops_immediately() {
        let g = PayoffExpr::single("x^2", half_line()).unwrap();
        let s = solve(&g, &gbm()).unwrap();
        assert!(matches!(
            s.degenerate,
            DegenerateCase::ZStarInfinite { recurrent: false, .. }
        ));
        assert!((s.value(3.0).unwrap() - 9.0).abs() < 1e-9);
        assert_eq!(s.attainable(3.0), Some(Attainability::Yes));
    }

    #[test]
    fn infinite_value() {
        let g = PayoffExpr::single("x^3", half_line()).unwrap();
        let s = solve(&g, &gbm()).unwrap();
        assert_eq!(s.degenerate, DegenerateCase::InfiniteValue { at_upper: true });
        assert_eq!(s.value(1.0), Some(f64::INFINITY));
    }

    #[test]
    fn integral_term_zero_and_constant() {
        let g: Arc<dyn Reward> = Arc::new(ex1());
        let zero: Arc<dyn Reward> = Arc::new(FnReward::new(|_| 0.0));
        let s = with_integral_term(g.clone(), zero, &gbm()).unwrap();
        let plain = solve(&ex1(), &gbm()).unwrap();
        for x in [1.0, 5.0, 12.0] {
            assert!((s.value(x).unwrap() - plain.value(x).unwrap()).abs() < 1e-12 * (1.0 + x * x));
        }
        let nothing: Arc<dyn Reward> = Arc::new(FnReward::new(|_| 0.0));
        let c: Arc<dyn Reward> = Arc::new(FnReward::new(|_| 1.2));
        let s = with_integral_term(nothing, c, &gbm()).unwrap();
        assert!(matches!(s.lower[0].rule.kind, RuleKind::NeverStop));
        assert!((s.value(2.0).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn linear_running_payoff() {
        let g: Arc<dyn Reward> = Arc::new(PayoffExpr::single("x - 3", half_line()).unwrap());
        let pi: Arc<dyn Reward> = Arc::new(FnReward::new(|x| x));
        let s = with_integral_term(g, pi, &gbm()).unwrap();
        assert!((s.value(1.0).unwrap() - 1.0 / 0.14).abs() < 1e-8);
    }

    #[test]
    fn absorbing_with_negative_payoff_is_killing() {
        let state = Interval {
            lo: 0.0,
            hi: f64::INFINITY,
            lo_closed: true,
            hi_closed: false,
        };
        let pieces = vec![Piece::parse("(0, inf)", "x - 3").unwrap()];
        let g = PayoffExpr::new(pieces.clone(), state, Some(-1.0), None).unwrap();
        let spec = gbm().with_state(state, BoundaryKind::Absorbing, BoundaryKind::Natural);
        let a = solve_with_boundary_kinds(&g, &spec, BoundaryOptions::default()).unwrap();
        let kspec = gbm().with_state(half_line(), BoundaryKind::Killing, BoundaryKind::Natural);
        let gk = PayoffExpr::new(pieces, half_line(), None, None).unwrap();
        let k = solve(&gk, &kspec).unwrap();
        assert_eq!(a.z_star, k.z_star);
        assert_eq!(a.lower, k.lower);

        let g = PayoffExpr::new(vec![Piece::parse("(0, inf)", "x - 3").unwrap()], state, Some(1.0), None).unwrap();
        let partial = solve_with_boundary_kinds(&g, &spec, BoundaryOptions::default()).unwrap();
        assert!(partial.unsupported.is_some() && partial.lower.is_empty());
        assert!(!partial.continuation.is_empty());
        let full = solve_with_boundary_kinds(&g, &spec, BoundaryOptions { require_full: true });
        assert!(matches!(full, Err(Error::UnsupportedBoundaryCombination(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn two_point_reduction(a in 6.0f64..7.0, t in 0.0f64..1.0) {
            // Any two members of a ψ-level set give the one-sided value.
            let pair = solve_fundamental(&gbm()).unwrap();
            let g = FnReward::new(|x: f64| x * x / 12.0);
            let b = a + 5.0;
            let x = a + t * (b - a);
            let two = pair.two_point_value(x, a, b, &g).unwrap();
            let one = pair.hitting_value(x, b, &g);
            prop_assert!((two - one).abs() <= 1e-12 * one.abs());
        }

        #[test]
        fn majorant_on_random_kinks(k in 2.0f64..20.0, c in 0.5f64..3.0) {
            let g = PayoffExpr::new(
                vec![
                    Piece::parse(&format!("(0, {k}]"), "x - 1").unwrap(),
                    Piece { interval: Interval { lo: k, hi: f64::INFINITY, lo_closed: false, hi_closed: false },
                            expr: crate::expr::Expr::parse(&format!("{c}*(x - {k}) + {k} - 1")).unwrap() },
                ],
                half_line(), None, None).unwrap();
            let s = solve(&g, &gbm()).unwrap();
            let xs = crate::grid::log_space(1e-3, 1e3, 20_000);
            prop_assert!(s.majorant_violation(&g, &xs) <= 1e-9);
        }
    }
}
