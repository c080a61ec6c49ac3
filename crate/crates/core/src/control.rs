//! One-sided singular control through g/ψ′ (downward) and −g/φ′ (upward).

use std::sync::Arc;

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::fundamental::{solve_fundamental, FundamentalPair};
use crate::payoff::{FnReward, Interval, Reward};
use crate::quadrature::integrate;
use crate::ratio::{global_max_set, monotone_regions, plateau_check, Component, MaxSet, MonotoneRegions, RatioKind};
use crate::resolvent::Resolvent;
use crate::stopping::{Attainability, BasisFn, RuleDescription, RuleKind, ValueSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// dX = μdt + σdW − dZ, reflecting downward.
    Down,
    /// dX = μdt + σdW + dY, reflecting upward.
    Up,
}

impl Direction {
    pub fn kind(self) -> RatioKind {
        match self {
            Direction::Down => RatioKind::GOverPsiPrime,
            Direction::Up => RatioKind::NegGOverPhiPrime,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Down => "down",
            Direction::Up => "up",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlKind {
    ReflectAt(f64),
    /// Wait until the set is entered, then reflect at the entry point.
    WaitThenReflect(Vec<Component>),
    /// Wait for the first exit from (a, b), then reflect at the exit point.
    WaitTwoPoint(f64, f64),
    /// On each hit of `trigger`, jump by `jump` (down or up with the direction).
    Impulse { trigger: f64, jump: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDescription {
    pub kind: ControlKind,
    pub valid_on: Interval,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub ok: bool,
    /// Boundary neighbourhood probed: (0, ε) or (ε, ∞).
    pub epsilon: f64,
    pub last_decade_max: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlDegenerate {
    Regular,
    /// The near boundary belongs to the set but the control at it is never usable.
    BoundaryMember,
    /// The extremal point is the near boundary: no ε-threshold reflection is optimal.
    NoThreshold { outcomes: Vec<String> },
    /// The extremal point is the far boundary: W = A·basis everywhere.
    ExtremalAtBoundary {
        a: f64,
        b_star: Option<f64>,
        recurrent: bool,
    },
    InfiniteValue,
}

impl ControlDegenerate {
    pub fn name(&self) -> &'static str {
        match self {
            ControlDegenerate::Regular => "Regular",
            ControlDegenerate::BoundaryMember => "BoundaryMember",
            ControlDegenerate::NoThreshold { .. } => "NoThreshold",
            ControlDegenerate::ExtremalAtBoundary { .. } => "ExtremalAtBoundary",
            ControlDegenerate::InfiniteValue => "InfiniteValue",
        }
    }
}

/// An interval where acting is strictly worse than the optimal value.
#[derive(Debug, Clone, PartialEq)]
pub struct InactionCertificate {
    pub region: (f64, f64),
    /// (x, better threshold w, ratio at w, ratio at x)
    pub witness: (f64, f64, f64, f64),
}

#[derive(Clone)]
pub struct ControlSolution {
    pub direction: Direction,
    pub pair: FundamentalPair,
    pub set: MaxSet,
    /// z′* (down) or y′* (up).
    pub extremal: f64,
    pub segments: Vec<ValueSegment>,
    pub controls: Vec<ControlDescription>,
    pub assumption: AssumptionCheck,
    pub degenerate: ControlDegenerate,
    pub inaction: Vec<InactionCertificate>,
    pub action: Vec<Component>,
    pub plateaus: Vec<((f64, f64), f64)>,
    /// Reported only: strict monotonicity of the ratio does not certify inaction.
    pub monotone: MonotoneRegions,
    pub unknown: Option<(f64, f64)>,
    pub notes: Vec<String>,
    pub offset: Option<Arc<dyn Reward>>,
}

impl std::fmt::Debug for ControlSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlSolution")
            .field("direction", &self.direction)
            .field("extremal", &self.extremal)
            .field("segments", &self.segments)
            .field("degenerate", &self.degenerate)
            .finish_non_exhaustive()
    }
}

impl ControlSolution {
    pub fn segment(&self, x: f64) -> Option<&ValueSegment> {
        self.segments.iter().find(|s| s.region.contains(x))
    }

    pub fn value(&self, x: f64) -> Option<f64> {
        let v = self.segment(x)?.value(&self.pair, x);
        Some(v + self.offset.as_ref().map_or(0.0, |o| o.value(x)))
    }

    /// W′(x) computed from the segment: coefficient·ψ′ or coefficient·φ′.
    pub fn slope(&self, x: f64) -> Option<f64> {
        let s = self.segment(x)?;
        let v = s.coefficient * s.basis.derivative(&self.pair, x);
        Some(v + self.offset.as_ref().map_or(0.0, |o| o.slope(x)))
    }

    /// Slope in the positive convention: coefficient·ψ′ downward, coefficient·(−φ′) upward.
    pub fn slope_magnitude(&self, x: f64) -> Option<f64> {
        let s = self.segment(x)?;
        Some(match self.direction {
            Direction::Down => s.coefficient * self.pair.psi_prime(x),
            Direction::Up => -s.coefficient * self.pair.phi_prime(x),
        })
    }

    pub fn attainable(&self, x: f64) -> Option<Attainability> {
        self.segment(x).map(|s| s.attainable)
    }
}

/// Value of reflecting at `b` from `x`, including the initial jump when x lies beyond b.
pub fn reflection_value(pair: &FundamentalPair, x: f64, b: f64, g: &dyn Reward, dir: Direction) -> Result<f64> {
    match dir {
        Direction::Down => {
            let base = g.value(b) / pair.psi_prime(b);
            if x <= b {
                Ok(base * pair.psi(x))
            } else {
                Ok(integrate(|u| g.value(u), b, x, 1e-12)? + base * pair.psi(b))
            }
        }
        Direction::Up => {
            let base = -g.value(b) / pair.phi_prime(b);
            if x >= b {
                Ok(base * pair.phi(x))
            } else {
                Ok(integrate(|u| g.value(u), x, b, 1e-12)? + base * pair.phi(b))
            }
        }
    }
}

/// Wait for the first exit from (a, b), then reflect at the exit point.
pub fn wait_two_point_value(pair: &FundamentalPair, x: f64, a: f64, b: f64, g: &dyn Reward, dir: Direction) -> Result<f64> {
    if !(a < b) {
        return Err(Error::DegenerateBracket { a, b });
    }
    let va = reflection_value(pair, a, a, g, dir)?;
    let vb = reflection_value(pair, b, b, g, dir)?;
    let (pa, pb, fa, fb) = (pair.psi(a), pair.psi(b), pair.phi(a), pair.phi(b));
    let d = pb * fa - fb * pa;
    let (px, fx) = (pair.psi(x), pair.phi(x));
    Ok((pb * fx - fb * px) / d * va + (px * fa - fx * pa) / d * vb)
}

/// Boundedness of σψ′ near the lower boundary (down) or σφ′ near the upper one (up).
pub fn check_assumption(spec: &DiffusionSpec, pair: &FundamentalPair, dir: Direction) -> AssumptionCheck {
    let d = spec.domain;
    let log = d.is_log();
    let per_decade = 20;
    let decades = 8;
    let (eps, end) = match dir {
        Direction::Down => (d.lo, spec.state.lo),
        Direction::Up => (d.hi, spec.state.hi),
    };
    let mut xs = Vec::new();
    for k in 0..=(per_decade * decades) {
        let t = k as f64 / per_decade as f64;
        let x = match (dir, log) {
            (Direction::Down, true) => eps * 10f64.powf(-t),
            (Direction::Up, true) => eps * 10f64.powf(t),
            (Direction::Down, false) => eps - (10f64.powf(t) - 1.0),
            (Direction::Up, false) => eps + (10f64.powf(t) - 1.0),
        };
        let inside = match dir {
            Direction::Down => x > end || (x == end && spec.lower.is_state_point()),
            Direction::Up => x < end || (x == end && spec.upper.is_state_point()),
        };
        if inside {
            xs.push(x);
        }
    }
    let vals: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let dd = match dir {
                Direction::Down => pair.psi_prime(x),
                Direction::Up => pair.phi_prime(x),
            };
            (spec.sigma(x) * dd).abs()
        })
        .collect();
    if vals.len() < 2 {
        return AssumptionCheck {
            ok: true,
            epsilon: eps,
            last_decade_max: vals.first().copied().unwrap_or(0.0),
            median: vals.first().copied().unwrap_or(0.0),
        };
    }
    let mut sorted: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(f64::INFINITY);
    let tail = vals.len().saturating_sub(per_decade + 1);
    let last_decade_max = vals[tail..].iter().fold(0.0f64, |a, &v| if v.is_nan() { f64::INFINITY } else { a.max(v) });
    AssumptionCheck {
        ok: last_decade_max.is_finite() && last_decade_max <= 10.0 * median.max(f64::MIN_POSITIVE),
        epsilon: eps,
        last_decade_max,
        median,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ControlOptions {
    pub tol: f64,
    /// Solve even when the boundedness check fails.
    pub override_assumption: bool,
}

impl Default for ControlOptions {
    fn default() -> Self {
        ControlOptions {
            tol: 1e-9,
            override_assumption: false,
        }
    }
}

pub fn solve_downward(g: &dyn Reward, spec: &DiffusionSpec) -> Result<ControlSolution> {
    spec.validate()?;
    let pair = solve_fundamental(spec)?;
    solve_with_pair(g, &pair, Direction::Down, ControlOptions::default())
}

pub fn solve_upward(g: &dyn Reward, spec: &DiffusionSpec) -> Result<ControlSolution> {
    spec.validate()?;
    let pair = solve_fundamental(spec)?;
    solve_with_pair(g, &pair, Direction::Up, ControlOptions::default())
}

fn closed(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Interval {
    Interval {
        lo,
        hi,
        lo_closed,
        hi_closed,
    }
}

pub fn solve_with_pair(g: &dyn Reward, pair: &FundamentalPair, dir: Direction, opts: ControlOptions) -> Result<ControlSolution> {
    let spec = pair.spec();
    let assumption = check_assumption(spec, pair, dir);
    if !assumption.ok && !opts.override_assumption {
        return Err(Error::AssumptionViolated(format!(
            "sigma times the derivative of the fundamental solution grows near the {} boundary ({:e} against median {:e})",
            if dir == Direction::Down { "lower" } else { "upper" },
            assumption.last_decade_max,
            assumption.median
        )));
    }
    let kind = dir.kind();
    let set = global_max_set(kind, g, pair, opts.tol)?;
    let monotone = monotone_regions(kind, g, pair);
    let plateaus = plateau_check(&set, g, pair, kind)?;
    let (lo, hi) = (spec.state.lo, spec.state.hi);
    let down = dir == Direction::Down;
    // Near boundary: where the no-threshold result lives; far: where W = A·basis.
    let (near_end, far_end) = if down { (lo, hi) } else { (hi, lo) };
    let (near_flag, far_flag) = if down {
        (set.includes_lower_boundary, set.includes_upper_boundary)
    } else {
        (set.includes_upper_boundary, set.includes_lower_boundary)
    };
    let (near_sp, far_sp) = if down {
        (spec.lower.is_state_point(), spec.upper.is_state_point())
    } else {
        (spec.upper.is_state_point(), spec.lower.is_state_point())
    };
    let far_approach = if down { &set.upper } else { &set.lower };
    let ext = set.extremal_point;
    let basis = if down { BasisFn::Psi } else { BasisFn::Phi };
    let mut notes = Vec::new();
    if !assumption.ok {
        notes.push("boundedness check failed; solved on request".to_string());
    }

    let degenerate = if ext == far_end && !far_sp && far_flag {
        if set.sup_value == f64::INFINITY {
            ControlDegenerate::InfiniteValue
        } else {
            ControlDegenerate::ExtremalAtBoundary {
                a: set.sup_value,
                b_star: if down { set.largest_finite() } else { set.smallest_finite() },
                recurrent: far_approach.recurrent,
            }
        }
    } else if ext == near_end && !near_sp {
        ControlDegenerate::NoThreshold {
            outcomes: vec![
                "driving the process instantly to the boundary is optimal everywhere".into(),
                "acting on a neighbourhood of the boundary is optimal and the inaction region is not empty".into(),
                "the optimal control is not an admissible reflecting control".into(),
            ],
        }
    } else if near_flag {
        ControlDegenerate::BoundaryMember
    } else {
        ControlDegenerate::Regular
    };

    // Region helpers: "toward the near end up to p".
    let near_side = |p: f64, p_closed: bool| {
        if down {
            closed(lo, p, near_sp, p_closed)
        } else {
            closed(p, hi, p_closed, near_sp)
        }
    };
    let far_side = |p: f64, p_closed: bool| {
        if down {
            closed(p, hi, p_closed, far_sp)
        } else {
            closed(lo, p, far_sp, p_closed)
        }
    };
    let mut segments = Vec::new();
    let mut controls = Vec::new();
    match &degenerate {
        ControlDegenerate::InfiniteValue => {
            segments.push(ValueSegment {
                region: spec.state,
                coefficient: f64::INFINITY,
                basis,
                attainable: Attainability::No,
                rule: RuleDescription {
                    kind: RuleKind::None,
                    valid_on: spec.state,
                    notes: "the ratio is unbounded: the value is infinite".into(),
                },
            });
        }
        ControlDegenerate::ExtremalAtBoundary { a, b_star, recurrent } => {
            let wait = ControlKind::WaitThenReflect(set.components.clone());
            if *recurrent {
                segments.push(segment(spec.state, *a, basis, Attainability::Yes, "maximizers recur toward the boundary"));
                controls.push(ControlDescription {
                    kind: wait,
                    valid_on: spec.state,
                    notes: "wait for the maximizer set, then reflect".into(),
                });
            } else {
                if let Some(b) = b_star {
                    let r = near_side(*b, true);
                    segments.push(segment(r, *a, basis, Attainability::Yes, "reflect at the last finite maximizer"));
                    controls.push(ControlDescription {
                        kind: ControlKind::ReflectAt(*b),
                        valid_on: r,
                        notes: "last finite maximizer".into(),
                    });
                    controls.push(ControlDescription {
                        kind: wait,
                        valid_on: r,
                        notes: "wait for the finite maximizers, then reflect".into(),
                    });
                }
                let r = match b_star {
                    Some(b) => far_side(*b, false),
                    None => spec.state,
                };
                segments.push(segment(
                    r,
                    *a,
                    basis,
                    Attainability::No,
                    "approached by reflecting at thresholds moving to the boundary",
                ));
            }
        }
        ControlDegenerate::NoThreshold { .. } => {}
        _ => {
            let r = near_side(ext, true);
            segments.push(segment(r, set.sup_value, basis, Attainability::Yes, "reflect at the extremal maximizer"));
            controls.push(ControlDescription {
                kind: ControlKind::ReflectAt(ext),
                valid_on: r,
                notes: "canonical control".into(),
            });
            let mut members = Vec::new();
            for c in &set.components {
                members.push(c.lo());
                if c.hi() != c.lo() {
                    members.push(c.hi());
                }
            }
            members.retain(|p| p.is_finite() && *p != near_end);
            for &b in members.iter().take(16) {
                if b != ext {
                    controls.push(ControlDescription {
                        kind: ControlKind::ReflectAt(b),
                        valid_on: near_side(b, true),
                        notes: "reflect at another maximizer".into(),
                    });
                }
            }
            for w in members.windows(2).take(16) {
                if w[1] > w[0] {
                    controls.push(ControlDescription {
                        kind: ControlKind::WaitTwoPoint(w[0], w[1]),
                        valid_on: closed(w[0], w[1], true, true),
                        notes: "wait for the exit from a pair of maximizers, then reflect".into(),
                    });
                }
            }
            controls.push(ControlDescription {
                kind: ControlKind::WaitThenReflect(set.components.clone()),
                valid_on: r,
                notes: "wait for the maximizer set, then reflect".into(),
            });
        }
    }
    for &((a, b), _) in &plateaus {
        let (trigger, jump) = if down { (b, b - a) } else { (a, b - a) };
        controls.push(ControlDescription {
            kind: ControlKind::Impulse { trigger, jump },
            valid_on: near_side(trigger, true),
            notes: "impulse across the plateau of maximizers".into(),
        });
    }

    let covered: Vec<Interval> = segments.iter().map(|s| s.region).collect();
    let unknown = if covered.is_empty() {
        Some((lo, hi))
    } else if down {
        let top = covered.iter().map(|r| r.hi).fold(lo, f64::max);
        (top < hi).then_some((top, hi))
    } else {
        let bottom = covered.iter().map(|r| r.lo).fold(hi, f64::min);
        (bottom > lo).then_some((lo, bottom))
    };
    if unknown.is_some() {
        notes.push("the action region beyond the extremal point is not determined by the ratio method".into());
    }
    if !monotone.regions.is_empty() {
        notes.push("regions where the ratio is strictly monotone are reported but do not certify inaction".into());
    }

    let inaction = inaction_certificates(g, pair, &set, dir, &degenerate);
    let action = match degenerate {
        ControlDegenerate::InfiniteValue | ControlDegenerate::NoThreshold { .. } => Vec::new(),
        _ => set.components.clone(),
    };
    Ok(ControlSolution {
        direction: dir,
        pair: pair.clone(),
        extremal: ext,
        set,
        segments,
        controls,
        assumption,
        degenerate,
        inaction,
        action,
        plateaus,
        monotone,
        unknown,
        notes,
        offset: None,
    })
}

fn segment(region: Interval, coefficient: f64, basis: BasisFn, attainable: Attainability, note: &str) -> ValueSegment {
    ValueSegment {
        region,
        coefficient,
        basis,
        attainable,
        rule: RuleDescription {
            kind: RuleKind::None,
            valid_on: region,
            notes: note.into(),
        },
    }
}

/// Gaps of the maximizer set between the near boundary and the extremal point.
fn inaction_certificates(
    g: &dyn Reward,
    pair: &FundamentalPair,
    set: &MaxSet,
    dir: Direction,
    degenerate: &ControlDegenerate,
) -> Vec<InactionCertificate> {
    let spec = pair.spec();
    let ratio = crate::ratio::Ratio::new(dir.kind(), g, pair);
    let down = dir == Direction::Down;
    let (lo, hi) = (spec.state.lo, spec.state.hi);
    let (a0, b0) = match degenerate {
        ControlDegenerate::InfiniteValue | ControlDegenerate::NoThreshold { .. } => return Vec::new(),
        ControlDegenerate::ExtremalAtBoundary { recurrent: false, b_star: None, .. } => (lo, hi),
        _ => {
            if down {
                (lo, set.extremal_point)
            } else {
                (set.extremal_point, hi)
            }
        }
    };
    let mut gaps = vec![(a0, b0)];
    for c in &set.components {
        let mut next = Vec::new();
        for (a, b) in gaps {
            if c.hi() <= a || c.lo() >= b {
                next.push((a, b));
                continue;
            }
            if c.lo() > a {
                next.push((a, c.lo()));
            }
            if c.hi() < b {
                next.push((c.hi(), b));
            }
        }
        gaps = next;
    }
    let log = spec.domain.is_log();
    gaps.into_iter()
        .filter(|(a, b)| b > a)
        .filter_map(|(a, b)| {
            let x = if a <= 0.0 && log {
                0.5 * b
            } else if b.is_infinite() {
                2.0 * a.abs().max(1.0) + a
            } else {
                crate::grid::mid(a, b)
            };
            // Any member of the set beats acting at x.
            let w = set
                .components
                .iter()
                .map(|c| if down { c.lo() } else { c.hi() })
                .find(|p| p.is_finite())
                .or(set.upper.sequence.last().copied())?;
            let (rw, rx) = (ratio.value(w), ratio.value(x));
            (rw > rx).then_some(InactionCertificate {
                region: (a, b),
                witness: (x, w, rw, rx),
            })
        })
        .collect()
}

/// Adds a running payoff: solves for g − (R_rπ)′ and shifts the value by R_rπ.
pub fn with_running_payoff(
    g: Arc<dyn Reward>,
    pi: Arc<dyn Reward>,
    spec: &DiffusionSpec,
    dir: Direction,
    opts: ControlOptions,
) -> Result<ControlSolution> {
    spec.validate()?;
    let pair = solve_fundamental(spec)?;
    let res = Arc::new(Resolvent::new(&pair, pi.clone())?);
    let mut bps = g.breakpoints();
    bps.extend(pi.breakpoints());
    let s2 = spec.clone();
    let (g1, r1, g2, r2, p2) = (g.clone(), res.clone(), g.clone(), res.clone(), pi.clone());
    let (g3, r3, p3, s3) = (g.clone(), res.clone(), pi.clone(), spec.clone());
    // (R_rπ)″ from the resolvent equation ½σ²u″ + μu′ − ru = −π.
    let second = move |s: &DiffusionSpec, r: &Resolvent, p: &Arc<dyn Reward>, x: f64| {
        let sig = s.sigma(x);
        2.0 * (s.r(x) * r.value(x) - s.mu(x) * r.derivative(x) - p.value(x)) / (sig * sig)
    };
    let transformed = FnReward::new(move |x| g1.value(x) - r1.derivative(x))
        .with_slope(move |x| g2.slope(x) - second(&s2, &r2, &p2, x))
        .with_left_slope(move |x| g3.slope_left(x) - second(&s3, &r3, &p3, x))
        .with_breakpoints(bps);
    let mut sol = solve_with_pair(&transformed, &pair, dir, opts)?;
    sol.offset = Some(res);
    sol.notes.push("running payoff included through its resolvent".into());
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::example;
    use crate::diffusion::Coefficient;
    use crate::payoff::PayoffExpr;
    use proptest::prelude::*;

    fn gbm() -> DiffusionSpec {
        DiffusionSpec::gbm(0.1, 0.2, 0.24)
    }

    fn ex(id: u32) -> PayoffExpr {
        example(id).unwrap().problem().unwrap().payoff
    }

    #[test]
    fn assumption_examples() {
        let spec = gbm();
        let pair = solve_fundamental(&spec).unwrap();
        assert!(check_assumption(&spec, &pair, Direction::Down).ok);
        assert!(check_assumption(&spec, &pair, Direction::Up).ok);
        let mut bad = DiffusionSpec::new(
            Coefficient::constant(0.0),
            Coefficient::parse("1/x").unwrap(),
            crate::diffusion::Discount::Constant(0.5),
        );
        bad.discount_floor = Some(0.5);
        let bad = bad
            .with_state(
                Interval { lo: 0.0, hi: 3.0, lo_closed: false, hi_closed: true },
                crate::diffusion::BoundaryKind::Natural,
                crate::diffusion::BoundaryKind::Reflecting,
            )
            .with_domain(1e-3, 3.0, 2048);
        let pair = solve_fundamental(&bad).unwrap();
        let c = check_assumption(&bad, &pair, Direction::Down);
        assert!(!c.ok, "{c:?}");
        let g = PayoffExpr::single("x", Interval::open(0.0, f64::INFINITY)).unwrap();
        assert!(matches!(
            solve_with_pair(&g, &pair, Direction::Down, ControlOptions::default()),
            Err(Error::AssumptionViolated(_))
        ));
    }

    #[test]
    fn plateau_control() {
        let g = ex(9);
        let s = solve_downward(&g, &gbm()).unwrap();
        assert_eq!(s.set.components.len(), 1);
        let (a, b) = (s.set.components[0].lo(), s.set.components[0].hi());
        assert!((a - 16.0).abs() < 1e-6 && (b - 25.0).abs() < 1e-6);
        assert!((s.set.sup_value - 1.0).abs() < 1e-10);
        for x in [1.0, 10.0, 16.0, 24.9] {
            assert!((s.value(x).unwrap() / (x * x) - 1.0).abs() < 1e-9);
        }
        assert!(s.controls.iter().any(|c| matches!(c.kind, ControlKind::ReflectAt(p) if (p - 25.0).abs() < 1e-6)));
        assert!(s
            .controls
            .iter()
            .any(|c| matches!(c.kind, ControlKind::Impulse { trigger, jump } if (trigger - 25.0).abs() < 1e-6 && (jump - 9.0).abs() < 1e-6)));
        // Waiting between two plateau points gives the same value.
        let v = wait_two_point_value(&s.pair, 20.0, 16.0, 25.0, &g, Direction::Down).unwrap();
        assert!((v / 400.0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn monotone_regions_not_inaction() {
        let s = solve_downward(&ex(10), &gbm()).unwrap();
        assert_eq!(s.set.components.len(), 1);
        assert!((s.extremal - 4.0).abs() < 1e-6);
        assert!((s.value(2.0).unwrap() - 4.0 / 8.0).abs() < 1e-9);
        let r = &s.monotone.regions;
        assert_eq!(r.len(), 2, "{r:?}");
        assert!(r[0].0 == 0.0 && (r[0].1 - 4.0).abs() < 1e-2);
        assert!((r[1].0 - 6.25).abs() < 1e-2 && (r[1].1 - 8.16).abs() < 1e-2);
        assert_eq!(s.inaction.len(), 1);
        assert!(s.inaction[0].region.1 <= 4.0 + 1e-6);
        assert!(s.unknown.is_some());
    }

    #[test]
    fn upward_example() {
        let s = solve_upward(&ex(11), &gbm()).unwrap();
        assert!((s.extremal - 1.0).abs() < 1e-6);
        assert!((s.set.sup_value - 1.0 / 6.0).abs() < 1e-10);
        for x in [1.0, 2.0, 7.0] {
            assert!((s.value(x).unwrap() / (x.powi(-6) / 6.0) - 1.0).abs() < 1e-9);
            assert!((s.slope_magnitude(x).unwrap() / x.powi(-7) - 1.0).abs() < 1e-9);
            assert!((s.slope(x).unwrap() / x.powi(-7) + 1.0).abs() < 1e-9);
        }
        let d = solve_downward(&ex(11), &gbm()).unwrap();
        assert!((d.set.sup_value - 0.5).abs() < 1e-10);
    }

    #[test]
    fn derivative_payoffs_give_full_plateaus() {
        let half = Interval::open(0.0, f64::INFINITY);
        let s = solve_downward(&PayoffExpr::single("2*x", half).unwrap(), &gbm()).unwrap();
        assert!(matches!(s.degenerate, ControlDegenerate::ExtremalAtBoundary { .. }));
        assert!((s.value(3.0).unwrap() - 9.0).abs() < 1e-9);
        let s = solve_upward(&PayoffExpr::single("6*x^(-7)", half).unwrap(), &gbm()).unwrap();
        assert!((s.value(3.0).unwrap() - 3f64.powi(-6)).abs() < 1e-12);
    }

    #[test]
    fn running_payoff_constant_shift() {
        let g: Arc<dyn Reward> = Arc::new(ex(9));
        let c: Arc<dyn Reward> = Arc::new(FnReward::new(|_| 0.6));
        let s = with_running_payoff(g, c, &gbm(), Direction::Down, ControlOptions::default()).unwrap();
        assert!((s.value(10.0).unwrap() - (100.0 + 2.5)).abs() < 1e-7);
        let zero: Arc<dyn Reward> = Arc::new(FnReward::new(|_| 0.0));
        let s = with_running_payoff(Arc::new(ex(10)), zero, &gbm(), Direction::Down, ControlOptions::default()).unwrap();
        assert!((s.extremal - 4.0).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn no_threshold_beats_the_value(b in 0.05f64..60.0, t in 0.0f64..1.0) {
            let g = ex(10);
            let pair = solve_fundamental(&gbm()).unwrap();
            let s = solve_with_pair(&g, &pair, Direction::Down, ControlOptions::default()).unwrap();
            let x = t * b.min(s.extremal);
            prop_assume!(x > 0.0);
            let w = s.value(x).unwrap();
            let v = reflection_value(&pair, x, b, &g, Direction::Down).unwrap();
            prop_assert!(v <= w + 1e-9 * (1.0 + w.abs()));
        }

        #[test]
        fn two_point_identity_on_plateau(a in 16.0f64..20.0, w in 1.0f64..5.0, t in 0.01f64..0.99) {
            let g = ex(9);
            let pair = solve_fundamental(&gbm()).unwrap();
            let b = a + w;
            let x = a + t * w;
            let v = wait_two_point_value(&pair, x, a, b, &g, Direction::Down).unwrap();
            let one = g.value(b) / pair.psi_prime(b) * pair.psi(x);
            prop_assert!((v - one).abs() <= 1e-10 * one);
        }
    }
}
