//! Solver orchestration for a parsed problem, plus the human-readable,
//! JSON and CSV renderings of the result.
//!
//! CSV schema (UTF-8, header row, `.` decimal separator, values written in
//! shortest round-trip form with an optional exponent such as `1e-7`,
//! `inf`/`nan` for non-finite numbers, empty cells where a value is not
//! defined):
//!
//! | mode         | columns                                                   |
//! |--------------|-----------------------------------------------------------|
//! | stopping     | `x,g,V,g_over_psi,g_over_phi,region`                      |
//! | control_down | `x,g,W,g_over_psi_prime,region`                           |
//! | control_up   | `x,g,W,neg_g_over_phi_prime,region`                       |
//! | connection   | `x,g,V_hat,W_down_prime,W_up_prime,g_over_psi_prime,neg_g_over_phi_prime,region` |
//!
//! Region labels: `stop`, `continue`, `action`, `inaction`, `down`, `up`,
//! `split`, `unknown`.

use std::fmt::Write as _;
use std::sync::Arc;

use serde_json::{json, Map, Value};

use crate::connection::{verify_connection, ConnectionReport, LinkCheck};
use crate::control::{self, ControlDegenerate, ControlKind, ControlOptions, ControlSolution, Direction};
use crate::error::{Error, Result};
use crate::grid::{auto_space, with_points};
use crate::payoff::{Interval, Reward};
use crate::problem::{Mode, Problem};
use crate::ratio::{Component, MaxSet};
use crate::stopping::{
    self, Attainability, BoundaryOptions, DegenerateCase, RuleKind, StoppingSolution, ValueSegment,
};

pub enum Solution {
    Stopping(StoppingSolution),
    Control(ControlSolution),
    Connection(Box<ConnectionReport>),
}

impl Solution {
    /// The value column of the CSV: V, W or V̂.
    pub fn value(&self, x: f64) -> Option<f64> {
        match self {
            Solution::Stopping(s) => s.value(x),
            Solution::Control(c) => c.value(x),
            Solution::Connection(c) => c.v_hat(x),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { tol: 1e-9 }
    }
}

/// Dispatches a problem to the matching solver.
pub fn solve_problem(p: &Problem, opts: RunOptions) -> Result<Solution> {
    if !(opts.tol > 0.0 && opts.tol < 1e-2) {
        return Err(Error::Validation(format!("--tol must lie in (0, 0.01), got {}", opts.tol)));
    }
    let copts = ControlOptions {
        tol: opts.tol,
        override_assumption: p.file.mode.override_assumption,
    };
    let g: Arc<dyn Reward> = Arc::new(p.payoff.clone());
    match p.mode {
        Mode::Stopping => {
            let sol = match &p.running {
                Some(pi) => stopping::with_integral_term(g, Arc::new(pi.clone()), &p.spec)?,
                None if p.spec.lower.is_state_point() || p.spec.upper.is_state_point() => {
                    stopping::solve_with_boundary_kinds(&p.payoff, &p.spec, BoundaryOptions::default())?
                }
                None => {
                    let pair = crate::fundamental::solve_fundamental(&p.spec)?;
                    stopping::solve_with_pair(&p.payoff, &pair, stopping::SolveOptions { tol: opts.tol })?
                }
            };
            Ok(Solution::Stopping(sol))
        }
        Mode::ControlDown | Mode::ControlUp => {
            let dir = if p.mode == Mode::ControlDown { Direction::Down } else { Direction::Up };
            let sol = match &p.running {
                Some(pi) => control::with_running_payoff(g, Arc::new(pi.clone()), &p.spec, dir, copts)?,
                None => {
                    p.spec.validate()?;
                    let pair = crate::fundamental::solve_fundamental(&p.spec)?;
                    control::solve_with_pair(&p.payoff, &pair, dir, copts)?
                }
            };
            Ok(Solution::Control(sol))
        }
        Mode::Connection => Ok(Solution::Connection(Box::new(verify_connection(&p.payoff, &p.spec, copts)?))),
    }
}

/// Non-finite numbers become the strings "inf", "-inf" and "nan".
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn opt_num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

/// Number formatting shared by the text report: short, readable, exact for integers.
pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v == v.round() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e7) {
        format!("{v:.6e}")
    } else {
        let s = format!("{v:.8}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn component_json(c: &Component) -> Value {
    match *c {
        Component::Point(p) => json!({ "point": num(p) }),
        Component::Interval(a, b) => json!({ "interval": [num(a), num(b)] }),
    }
}

fn component_text(c: &Component) -> String {
    match *c {
        Component::Point(p) => fmt(p),
        Component::Interval(a, b) => format!("[{}, {}]", fmt(a), fmt(b)),
    }
}

fn set_text(m: &MaxSet) -> String {
    let mut parts: Vec<String> = Vec::new();
    if m.includes_lower_boundary {
        parts.push(format!("{} (boundary)", fmt(m.state_lo)));
    }
    parts.extend(m.components.iter().map(component_text));
    if m.includes_upper_boundary {
        parts.push(format!("{} (boundary)", fmt(m.state_hi)));
    }
    format!("{{{}}}", parts.join(", "))
}

fn set_json(m: &MaxSet) -> Value {
    json!({
        "ratio": m.kind.label(),
        "sup": num(m.sup_value),
        "components": m.components.iter().map(component_json).collect::<Vec<_>>(),
        "includes_lower_boundary": m.includes_lower_boundary,
        "includes_upper_boundary": m.includes_upper_boundary,
        "extremal_point": num(m.extremal_point),
        "tolerance": num(m.tolerance_used),
        "lower_limsup": opt_num(m.lower.limsup),
        "upper_limsup": opt_num(m.upper.limsup),
    })
}

fn interval_text(i: &Interval) -> String {
    format!(
        "{}{}, {}{}",
        if i.lo_closed { "[" } else { "(" },
        fmt(i.lo),
        fmt(i.hi),
        if i.hi_closed { "]" } else { ")" }
    )
}

fn interval_json(i: &Interval) -> Value {
    json!({ "lo": num(i.lo), "hi": num(i.hi), "lo_closed": i.lo_closed, "hi_closed": i.hi_closed })
}

fn attain_name(a: Attainability) -> &'static str {
    match a {
        Attainability::Yes => "yes",
        Attainability::No => "no",
        Attainability::LimitOnly => "limit_only",
    }
}

fn rule_text(k: &RuleKind) -> String {
    match k {
        RuleKind::HitSet(cs) => format!(
            "stop on first entry into {{{}}}",
            cs.iter().map(component_text).collect::<Vec<_>>().join(", ")
        ),
        RuleKind::HitPoint(p) => format!("stop on first hitting {}", fmt(*p)),
        RuleKind::TwoPoint(a, b) => format!("stop on first exit from ({}, {})", fmt(*a), fmt(*b)),
        RuleKind::None => "no admissible rule attains the value".into(),
        RuleKind::ImmediateStop => "stop immediately".into(),
        RuleKind::NeverStop => "never stop".into(),
    }
}

fn rule_json(k: &RuleKind) -> Value {
    match k {
        RuleKind::HitSet(cs) => json!({ "hit_set": cs.iter().map(component_json).collect::<Vec<_>>() }),
        RuleKind::HitPoint(p) => json!({ "hit_point": num(*p) }),
        RuleKind::TwoPoint(a, b) => json!({ "two_point": [num(*a), num(*b)] }),
        RuleKind::None => json!("none"),
        RuleKind::ImmediateStop => json!("immediate_stop"),
        RuleKind::NeverStop => json!("never_stop"),
    }
}

fn control_text(k: &ControlKind, dir: Direction) -> String {
    let verb = if dir == Direction::Down { "down" } else { "up" };
    match k {
        ControlKind::ReflectAt(b) => format!("reflect {verb}ward at {}", fmt(*b)),
        ControlKind::WaitThenReflect(cs) => format!(
            "wait for the first entry into {{{}}}, then reflect there",
            cs.iter().map(component_text).collect::<Vec<_>>().join(", ")
        ),
        ControlKind::WaitTwoPoint(a, b) => {
            format!("wait for the first exit from ({}, {}), then reflect at the exit point", fmt(*a), fmt(*b))
        }
        ControlKind::Impulse { trigger, jump } => {
            format!("on each hit of {} jump {verb} by {}", fmt(*trigger), fmt(*jump))
        }
        ControlKind::None => "no admissible control attains the value".into(),
    }
}

fn control_json(k: &ControlKind) -> Value {
    match k {
        ControlKind::ReflectAt(b) => json!({ "reflect_at": num(*b) }),
        ControlKind::WaitThenReflect(cs) => {
            json!({ "wait_then_reflect": cs.iter().map(component_json).collect::<Vec<_>>() })
        }
        ControlKind::WaitTwoPoint(a, b) => json!({ "wait_two_point": [num(*a), num(*b)] }),
        ControlKind::Impulse { trigger, jump } => json!({ "impulse": { "trigger": num(*trigger), "jump": num(*jump) } }),
        ControlKind::None => json!("none"),
    }
}

fn segment_json(s: &ValueSegment) -> Value {
    json!({
        "region": interval_json(&s.region),
        "coefficient": num(s.coefficient),
        "basis": s.basis.name(),
        "attainable": attain_name(s.attainable),
        "rule": rule_json(&s.rule.kind),
        "rule_valid_on": interval_json(&s.rule.valid_on),
        "notes": s.rule.notes,
    })
}

fn segment_text(out: &mut String, s: &ValueSegment, name: &str, with_rule: bool) {
    let _ = writeln!(
        out,
        "  {name} = {} * {} on {}   attainable: {}",
        fmt(s.coefficient),
        s.basis.name(),
        interval_text(&s.region),
        attain_name(s.attainable)
    );
    if with_rule {
        let _ = writeln!(out, "    rule: {} (valid from {})", rule_text(&s.rule.kind), interval_text(&s.rule.valid_on));
    }
    if !s.rule.notes.is_empty() {
        let _ = writeln!(out, "    {}", s.rule.notes);
    }
}

fn degenerate_json(d: &DegenerateCase) -> Value {
    let mut m = Map::new();
    m.insert("case".into(), json!(d.name()));
    match d {
        DegenerateCase::BothAtBoundaries { outcomes } => {
            m.insert("outcomes".into(), json!(outcomes));
        }
        DegenerateCase::ZStarInfinite { a, b_star, recurrent } => {
            m.insert("a".into(), num(*a));
            m.insert("b_star".into(), opt_num(*b_star));
            m.insert("recurrent".into(), json!(recurrent));
        }
        DegenerateCase::YStarZero { b, a_star, recurrent } => {
            m.insert("b".into(), num(*b));
            m.insert("a_star".into(), opt_num(*a_star));
            m.insert("recurrent".into(), json!(recurrent));
        }
        DegenerateCase::InfiniteValue { at_upper } => {
            m.insert("at_upper".into(), json!(at_upper));
        }
        _ => {}
    }
    Value::Object(m)
}

fn control_degenerate_json(d: &ControlDegenerate) -> Value {
    let mut m = Map::new();
    m.insert("case".into(), json!(d.name()));
    match d {
        ControlDegenerate::NoThreshold { outcomes } => {
            m.insert("outcomes".into(), json!(outcomes));
        }
        ControlDegenerate::ExtremalAtBoundary { a, b_star, recurrent } => {
            m.insert("a".into(), num(*a));
            m.insert("b_star".into(), opt_num(*b_star));
            m.insert("recurrent".into(), json!(recurrent));
        }
        _ => {}
    }
    Value::Object(m)
}

fn regions_text(rs: &[(f64, f64)]) -> String {
    if rs.is_empty() {
        return "none".into();
    }
    rs.iter()
        .map(|&(a, b)| format!("({}, {})", fmt(a), fmt(b)))
        .collect::<Vec<_>>()
        .join(" u ")
}

fn regions_json(rs: &[(f64, f64)]) -> Value {
    json!(rs.iter().map(|&(a, b)| json!([num(a), num(b)])).collect::<Vec<_>>())
}

fn stopping_json(s: &StoppingSolution) -> Value {
    json!({
        "M": set_json(&s.m),
        "N": set_json(&s.n),
        "z_star": num(s.z_star),
        "y_star": num(s.y_star),
        "ordering_ok": s.ordering_ok,
        "segments": s.lower.iter().chain(&s.upper).map(segment_json).collect::<Vec<_>>(),
        "unknown": s.unknown.map(|(a, b)| json!([num(a), num(b)])),
        "rules": s.rules.iter().map(|r| json!({
            "rule": rule_json(&r.kind),
            "valid_on": interval_json(&r.valid_on),
            "notes": r.notes,
        })).collect::<Vec<_>>(),
        "continuation": s.continuation.iter().map(|c| json!({
            "region": [num(c.region.0), num(c.region.1)],
            "source": format!("{:?}", c.source),
            "witness": [num(c.witness.0), num(c.witness.1), num(c.witness.2), num(c.witness.3)],
        })).collect::<Vec<_>>(),
        "stopping": s.stopping.iter().map(component_json).collect::<Vec<_>>(),
        "degenerate": degenerate_json(&s.degenerate),
        "smooth_fit": s.smooth_fit.iter().map(|f| json!({
            "at": num(f.at),
            "value_slope": num(f.value_slope),
            "payoff_slope_left": num(f.payoff_slope_left),
            "payoff_slope_right": num(f.payoff_slope_right),
            "holds": f.holds,
            "gap": num(f.gap()),
        })).collect::<Vec<_>>(),
        "plateaus": s.plateaus.iter().map(|&((a, b), k)| json!({ "interval": [num(a), num(b)], "level": num(k) })).collect::<Vec<_>>(),
        "increasing_g_over_psi": regions_json(&s.psi_regions.regions),
        "decreasing_g_over_phi": regions_json(&s.phi_regions.regions),
        "boundary_rules": s.boundary_rules.iter().map(|r| json!({
            "two_point": [num(r.a), num(r.b)],
            "psi_coefficient": num(r.psi_coef),
            "phi_coefficient": num(r.phi_coef),
            "notes": r.notes,
        })).collect::<Vec<_>>(),
        "extensions_applied": s.extensions_applied,
        "unsupported": s.unsupported,
        "running_payoff": s.offset.is_some(),
        "notes": s.notes,
    })
}

fn stopping_text(out: &mut String, s: &StoppingSolution) {
    let _ = writeln!(out, "M (argmax g/psi) = {}   sup = {}", set_text(&s.m), fmt(s.m.sup_value));
    let _ = writeln!(out, "N (argmax g/phi) = {}   sup = {}", set_text(&s.n), fmt(s.n.sup_value));
    let _ = writeln!(
        out,
        "z* = {}   y* = {}   ordering z* <= y*: {}",
        fmt(s.z_star),
        fmt(s.y_star),
        if s.ordering_ok { "ok" } else { "violated" }
    );
    let _ = writeln!(out, "case: {}", s.degenerate.name());
    match &s.degenerate {
        DegenerateCase::BothAtBoundaries { outcomes } => {
            for o in outcomes {
                let _ = writeln!(out, "  - {o}");
            }
        }
        DegenerateCase::ZStarInfinite { a, b_star, .. } => {
            let _ = writeln!(out, "  A = {}   b* = {}", fmt(*a), b_star.map_or("none".into(), fmt));
        }
        DegenerateCase::YStarZero { b, a_star, .. } => {
            let _ = writeln!(out, "  B = {}   a* = {}", fmt(*b), a_star.map_or("none".into(), fmt));
        }
        _ => {}
    }
    let extra = if s.offset.is_some() { " + R(x)" } else { "" };
    let _ = writeln!(out, "value{extra}:");
    for seg in s.lower.iter().chain(&s.upper) {
        segment_text(out, seg, "V", true);
    }
    if let Some((a, b)) = s.unknown {
        let _ = writeln!(out, "  V unresolved on ({}, {})", fmt(a), fmt(b));
    }
    for p in &s.plateaus {
        let _ = writeln!(out, "plateau: g = {} * psi on [{}, {}]", fmt(p.1), fmt(p.0 .0), fmt(p.0 .1));
    }
    let _ = writeln!(out, "g/psi strictly increasing on {}", regions_text(&s.psi_regions.regions));
    let _ = writeln!(out, "g/phi strictly decreasing on {}", regions_text(&s.phi_regions.regions));
    if !s.continuation.is_empty() {
        let _ = writeln!(out, "continuation certificates:");
        for c in &s.continuation {
            let _ = writeln!(
                out,
                "  ({}, {}) by {:?}; e.g. at x = {} waiting for {} gives {} > g = {}",
                fmt(c.region.0),
                fmt(c.region.1),
                c.source,
                fmt(c.witness.0),
                fmt(c.witness.1),
                fmt(c.witness.2),
                fmt(c.witness.3)
            );
        }
    }
    for r in &s.boundary_rules {
        let _ = writeln!(
            out,
            "boundary rule: exit from ({}, {}) gives {} * psi + {} * phi  {}",
            fmt(r.a),
            fmt(r.b),
            fmt(r.psi_coef),
            fmt(r.phi_coef),
            r.notes
        );
    }
    let fails: Vec<_> = s.smooth_fit.iter().filter(|f| !f.holds).collect();
    let _ = writeln!(
        out,
        "smooth fit: checked at {} points, fails at {}",
        s.smooth_fit.len(),
        if fails.is_empty() {
            "none".to_string()
        } else {
            fails
                .iter()
                .take(8)
                .map(|f| format!("{} (gap {})", fmt(f.at), fmt(f.gap())))
                .collect::<Vec<_>>()
                .join(", ")
                + if fails.len() > 8 { ", ..." } else { "" }
        }
    );
    for e in &s.extensions_applied {
        let _ = writeln!(out, "extension: {e}");
    }
    if let Some(u) = &s.unsupported {
        let _ = writeln!(out, "unsupported: {u}");
    }
    for n in &s.notes {
        let _ = writeln!(out, "note: {n}");
    }
}

fn control_json_value(c: &ControlSolution) -> Value {
    json!({
        "direction": c.direction.name(),
        "set": set_json(&c.set),
        "extremal": num(c.extremal),
        "segments": c.segments.iter().map(segment_json).collect::<Vec<_>>(),
        "controls": c.controls.iter().map(|d| json!({
            "control": control_json(&d.kind),
            "valid_on": interval_json(&d.valid_on),
            "notes": d.notes,
        })).collect::<Vec<_>>(),
        "assumption": {
            "ok": c.assumption.ok,
            "epsilon": num(c.assumption.epsilon),
            "last_decade_max": num(c.assumption.last_decade_max),
            "median": num(c.assumption.median),
        },
        "degenerate": control_degenerate_json(&c.degenerate),
        "action": c.action.iter().map(component_json).collect::<Vec<_>>(),
        "inaction": c.inaction.iter().map(|i| json!({
            "region": [num(i.region.0), num(i.region.1)],
            "witness": [num(i.witness.0), num(i.witness.1), num(i.witness.2), num(i.witness.3)],
        })).collect::<Vec<_>>(),
        "plateaus": c.plateaus.iter().map(|&((a, b), k)| json!({ "interval": [num(a), num(b)], "level": num(k) })).collect::<Vec<_>>(),
        "monotone": regions_json(&c.monotone.regions),
        "unknown": c.unknown.map(|(a, b)| json!([num(a), num(b)])),
        "running_payoff": c.offset.is_some(),
        "notes": c.notes,
    })
}

fn control_text_block(out: &mut String, c: &ControlSolution) {
    let (label, wname) = match c.direction {
        Direction::Down => ("g/psi'", "W_Z"),
        Direction::Up => ("-g/phi'", "W_Y"),
    };
    let _ = writeln!(out, "direction: {}", c.direction.name());
    let _ = writeln!(out, "M' (argmax {label}) = {}   sup = {}", set_text(&c.set), fmt(c.set.sup_value));
    let _ = writeln!(out, "extremal point: {}", fmt(c.extremal));
    let _ = writeln!(
        out,
        "boundedness check: {} (max {} vs median {} near {})",
        if c.assumption.ok { "ok" } else { "failed" },
        fmt(c.assumption.last_decade_max),
        fmt(c.assumption.median),
        fmt(c.assumption.epsilon)
    );
    let _ = writeln!(out, "case: {}", c.degenerate.name());
    if let ControlDegenerate::NoThreshold { outcomes } = &c.degenerate {
        for o in outcomes {
            let _ = writeln!(out, "  - {o}");
        }
    }
    let extra = if c.offset.is_some() { " + R(x)" } else { "" };
    let _ = writeln!(out, "value{extra}:");
    for seg in &c.segments {
        segment_text(out, seg, wname, false);
    }
    if let Some((a, b)) = c.unknown {
        let _ = writeln!(out, "  {wname} unresolved on ({}, {})", fmt(a), fmt(b));
    }
    for d in &c.controls {
        let _ = writeln!(out, "control: {} (from {})", control_text(&d.kind, c.direction), interval_text(&d.valid_on));
        if !d.notes.is_empty() {
            let _ = writeln!(out, "  {}", d.notes);
        }
    }
    for p in &c.plateaus {
        let _ = writeln!(out, "plateau: {label} = {} on [{}, {}]", fmt(p.1), fmt(p.0 .0), fmt(p.0 .1));
    }
    let _ = writeln!(out, "{label} strictly monotone toward the set on {}", regions_text(&c.monotone.regions));
    let _ = writeln!(
        out,
        "action set: {{{}}}",
        c.action.iter().map(component_text).collect::<Vec<_>>().join(", ")
    );
    for i in &c.inaction {
        let _ = writeln!(
            out,
            "inaction on ({}, {}); e.g. at x = {} the threshold {} scores {} > {}",
            fmt(i.region.0),
            fmt(i.region.1),
            fmt(i.witness.0),
            fmt(i.witness.1),
            fmt(i.witness.2),
            fmt(i.witness.3)
        );
    }
    for n in &c.notes {
        let _ = writeln!(out, "note: {n}");
    }
}

fn link_json(l: &Option<LinkCheck>) -> Value {
    match l {
        None => Value::Null,
        Some(l) => json!({
            "region": [num(l.region.0), num(l.region.1)],
            "points": l.points,
            "max_rel": num(l.max_rel),
            "holds": l.holds,
        }),
    }
}

fn link_text(l: &Option<LinkCheck>) -> String {
    match l {
        None => "empty region".into(),
        Some(l) => format!(
            "on ({}, {}): max relative gap {:.2e} over {} points, {}",
            fmt(l.region.0),
            fmt(l.region.1),
            l.max_rel,
            l.points,
            if l.holds { "holds" } else { "fails" }
        ),
    }
}

fn connection_json(c: &ConnectionReport) -> Value {
    json!({
        "hat_residual": num(c.hat.residual),
        "hat_residual_ok": c.hat.residual_ok,
        "hat_stopping": stopping_json(&c.hat_stopping),
        "down": control_json_value(&c.down),
        "up": control_json_value(&c.up),
        "z_prime": num(c.z_prime),
        "y_prime": num(c.y_prime),
        "down_link": link_json(&c.down_link),
        "up_link": link_json(&c.up_link),
        "sets_agree": c.sets_agree,
        "down_global_possible": c.down_global_possible,
        "up_global_possible": c.up_global_possible,
        "local": c.local,
        "split": opt_num(c.split),
        "notes": c.notes,
    })
}

fn connection_text(out: &mut String, c: &ConnectionReport) {
    let _ = writeln!(out, "associated diffusion residual: {:.2e}", c.hat.residual);
    let _ = writeln!(out, "-- stopping problem for the associated diffusion (basis psi', -phi')");
    stopping_text(out, &c.hat_stopping);
    let _ = writeln!(out, "-- downward control");
    control_text_block(out, &c.down);
    let _ = writeln!(out, "-- upward control");
    control_text_block(out, &c.up);
    let _ = writeln!(out, "-- connection");
    let _ = writeln!(out, "z'* = {}   y'* = {}", fmt(c.z_prime), fmt(c.y_prime));
    let _ = writeln!(out, "W_Z' = V_hat {}", link_text(&c.down_link));
    let _ = writeln!(out, "W_Y' = V_hat {}", link_text(&c.up_link));
    let _ = writeln!(out, "maximizer sets agree: {}", c.sets_agree);
    let _ = writeln!(
        out,
        "global W_Z' = V_hat possible: {}   global W_Y' = V_hat possible: {}",
        c.down_global_possible, c.up_global_possible
    );
    let _ = writeln!(
        out,
        "local link: {}{}",
        c.local,
        c.split.map_or(String::new(), |s| format!(" (split at {})", fmt(s)))
    );
    for n in &c.notes {
        let _ = writeln!(out, "note: {n}");
    }
}

fn header(p: &Problem) -> String {
    let s = &p.spec;
    let mut out = String::new();
    let _ = writeln!(out, "mode: {}", p.mode.name());
    let _ = writeln!(
        out,
        "state space: {}   lower: {}   upper: {}",
        interval_text(&s.state),
        s.lower.name(),
        s.upper.name()
    );
    let _ = writeln!(
        out,
        "working domain: [{}, {}] with {} points",
        fmt(s.domain.lo),
        fmt(s.domain.hi),
        s.domain.points
    );
    for u in p.payoff.usc_adjustments() {
        let _ = writeln!(out, "payoff adjusted to be upper semicontinuous at {}", fmt(u.at));
    }
    out
}

/// Human-readable report.
pub fn render_text(p: &Problem, sol: &Solution) -> String {
    let mut out = header(p);
    match sol {
        Solution::Stopping(s) => {
            if let Some((a, b)) = s.pair.exponents() {
                let _ = writeln!(out, "psi = x^{}   phi = x^{}", fmt(a), fmt(b));
            }
            stopping_text(&mut out, s)
        }
        Solution::Control(c) => control_text_block(&mut out, c),
        Solution::Connection(c) => connection_text(&mut out, c),
    }
    out
}

/// Machine-readable report.
pub fn render_json(p: &Problem, sol: &Solution) -> Value {
    let body = match sol {
        Solution::Stopping(s) => stopping_json(s),
        Solution::Control(c) => control_json_value(c),
        Solution::Connection(c) => connection_json(c),
    };
    json!({
        "mode": p.mode.name(),
        "state": interval_json(&p.spec.state),
        "lower": p.spec.lower.name(),
        "upper": p.spec.upper.name(),
        "domain": [num(p.spec.domain.lo), num(p.spec.domain.hi)],
        "usc_adjustments": p.payoff.usc_adjustments().iter().map(|u| num(u.at)).collect::<Vec<_>>(),
        "solution": body,
    })
}

/// One CSV number: round-trip `Debug` form, `inf`/`nan`, or empty.
pub fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:?}"),
        Some(v) if v.is_nan() => "nan".into(),
        Some(v) if v > 0.0 => "inf".into(),
        Some(_) => "-inf".into(),
        None => String::new(),
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    let r = num / den;
    r.is_finite().then_some(r)
}

fn in_components(cs: &[Component], x: f64) -> bool {
    cs.iter().any(|c| c.contains(x, 1e-9))
}

fn stopping_label(s: &StoppingSolution, g: &dyn Reward, x: f64) -> &'static str {
    if in_components(&s.stopping, x) {
        return "stop";
    }
    if s.continuation.iter().any(|c| x > c.region.0 && x < c.region.1) {
        return "continue";
    }
    match s.value(x) {
        Some(v) if v > g.value(x) + 1e-9 * (1.0 + v.abs()) => "continue",
        Some(_) if s.segment(x).is_some_and(|seg| seg.attainable == Attainability::Yes) => "stop",
        _ => "unknown",
    }
}

fn control_label(c: &ControlSolution, x: f64) -> &'static str {
    if in_components(&c.action, x) {
        "action"
    } else if c.inaction.iter().any(|i| x > i.region.0 && x < i.region.1) {
        "inaction"
    } else {
        "unknown"
    }
}

/// Evaluation points: the working domain plus payoff breakpoints and
/// reported set points.
pub fn csv_grid(p: &Problem, sol: &Solution, n: usize) -> Vec<f64> {
    let (lo, hi) = (p.spec.domain.lo, p.spec.domain.hi);
    let mut extra: Vec<f64> = p.payoff.breakpoints();
    let mut push_set = |m: &MaxSet| {
        for c in &m.components {
            extra.push(c.lo());
            extra.push(c.hi());
        }
    };
    match sol {
        Solution::Stopping(s) => {
            push_set(&s.m);
            push_set(&s.n);
        }
        Solution::Control(c) => push_set(&c.set),
        Solution::Connection(c) => {
            push_set(&c.down.set);
            push_set(&c.up.set);
        }
    }
    extra.retain(|&x| x.is_finite() && x >= lo && x <= hi);
    with_points(auto_space(lo, hi, n), &extra)
}

/// CSV rows over `xs` (schema in the module docs).
pub fn render_csv(p: &Problem, sol: &Solution, xs: &[f64]) -> String {
    let g = &p.payoff;
    let mut out = String::new();
    match sol {
        Solution::Stopping(s) => {
            out.push_str("x,g,V,g_over_psi,g_over_phi,region\n");
            for &x in xs {
                let gx = g.value(x);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    cell(Some(x)),
                    cell(Some(gx)),
                    cell(s.value(x)),
                    cell(ratio(gx, s.pair.psi(x))),
                    cell(ratio(gx, s.pair.phi(x))),
                    stopping_label(s, g, x)
                );
            }
        }
        Solution::Control(c) => {
            let (col, sign) = match c.direction {
                Direction::Down => ("g_over_psi_prime", 1.0),
                Direction::Up => ("neg_g_over_phi_prime", -1.0),
            };
            let _ = writeln!(out, "x,g,W,{col},region");
            for &x in xs {
                let gx = g.value(x);
                let den = match c.direction {
                    Direction::Down => c.pair.psi_prime(x),
                    Direction::Up => c.pair.phi_prime(x),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    cell(Some(x)),
                    cell(Some(gx)),
                    cell(c.value(x)),
                    cell(ratio(sign * gx, den)),
                    control_label(c, x)
                );
            }
        }
        Solution::Connection(c) => {
            out.push_str("x,g,V_hat,W_down_prime,W_up_prime,g_over_psi_prime,neg_g_over_phi_prime,region\n");
            let pair = &c.hat.pair;
            for &x in xs {
                let gx = g.value(x);
                let label = match c.split {
                    Some(s) if (x - s).abs() <= 1e-12 * (1.0 + s.abs()) => "split",
                    _ if x < c.z_prime => "down",
                    _ if x > c.y_prime => "up",
                    _ => "unknown",
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    cell(Some(x)),
                    cell(Some(gx)),
                    cell(c.v_hat(x)),
                    cell(c.down.slope_magnitude(x)),
                    cell(c.up.slope_magnitude(x)),
                    cell(ratio(gx, pair.psi_prime(x))),
                    cell(ratio(-gx, pair.phi_prime(x))),
                    label
                );
            }
        }
    }
    out
}

/// Re-reads a CSV produced by [`render_csv`] and returns the largest relative
/// gap between its value column and the solution.
pub fn revalidate_csv(csv: &str, sol: &Solution) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, line) in csv.lines().enumerate().skip(1) {
        let mut cols = line.split(',');
        let bad = || Error::Validation(format!("malformed CSV row {}", i + 1));
        let x: f64 = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let v = cols.nth(1).ok_or_else(bad)?;
        match (v.is_empty(), sol.value(x)) {
            (true, None) => {}
            (false, Some(expected)) => {
                let got: f64 = v.parse().map_err(|_| bad())?;
                if got != expected {
                    worst = worst.max((got - expected).abs() / expected.abs().max(f64::MIN_POSITIVE));
                }
            }
            _ => return Err(Error::Validation(format!("row {} disagrees on whether V is defined", i + 1))),
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::example;

    fn row_near(csv: &str, x: f64) -> &str {
        csv.lines()
            .skip(1)
            .min_by(|a, b| {
                let d = |l: &str| (l.split(',').next().unwrap().parse::<f64>().unwrap() - x).abs();
                d(a).total_cmp(&d(b))
            })
            .unwrap()
    }

    fn run(id: u32) -> (Problem, Solution) {
        let p = example(id).unwrap().problem().unwrap();
        let s = solve_problem(&p, RunOptions::default()).unwrap();
        (p, s)
    }

    #[test]
    fn json_numbers() {
        assert_eq!(num(f64::INFINITY), json!("inf"));
        assert_eq!(num(f64::NEG_INFINITY), json!("-inf"));
        assert_eq!(num(f64::NAN), json!("nan"));
        assert_eq!(num(0.5), json!(0.5));
    }

    #[test]
    fn text_formatting() {
        assert_eq!(fmt(14.0), "14");
        assert_eq!(fmt(1.0 / 12.0), "0.08333333");
        assert_eq!(fmt(742212.4), "742212.4");
        assert_eq!(fmt(2.5e-7), "2.500000e-7");
        assert_eq!(fmt(f64::INFINITY), "inf");
    }

    #[test]
    fn stopping_report_and_csv() {
        let (p, s) = run(1);
        let text = render_text(&p, &s);
        assert!(text.contains("M (argmax g/psi) = {6, 14}"), "{text}");
        assert!(text.contains("V = 0.08333333 * psi on (0, 14]"), "{text}");
        let j = render_json(&p, &s);
        assert_eq!(j["mode"], "stopping");
        let xs = csv_grid(&p, &s, 200);
        let csv = render_csv(&p, &s, &xs);
        assert!(csv.starts_with("x,g,V,g_over_psi,g_over_phi,region\n"));
        assert_eq!(revalidate_csv(&csv, &s).unwrap(), 0.0);
        let row6 = row_near(&csv, 6.0);
        assert!(row6.ends_with(",stop"), "{row6}");
        let row10 = row_near(&csv, 10.0);
        assert!(row10.ends_with(",continue"), "{row10}");
    }

    #[test]
    fn control_csv_labels() {
        let (p, s) = run(9);
        let xs = csv_grid(&p, &s, 100);
        let csv = render_csv(&p, &s, &xs);
        assert!(csv.starts_with("x,g,W,g_over_psi_prime,region\n"));
        assert_eq!(revalidate_csv(&csv, &s).unwrap(), 0.0);
        let row = row_near(&csv, 20.0);
        assert!(row.ends_with(",action"), "{row}");
        let text = render_text(&p, &s);
        assert!(text.contains("on each hit of 25 jump down by 9"), "{text}");
    }

    #[test]
    fn connection_csv() {
        let (p, s) = run(11);
        let xs = csv_grid(&p, &s, 100);
        let csv = render_csv(&p, &s, &xs);
        assert_eq!(revalidate_csv(&csv, &s).unwrap(), 0.0);
        assert!(csv.lines().any(|l| l.starts_with("1.0,") && l.ends_with(",split")));
        let text = render_text(&p, &s);
        assert!(text.contains("split at 1"), "{text}");
        let j = render_json(&p, &s);
        assert_eq!(j["solution"]["split"], json!(1.0));
    }

    #[test]
    fn non_finite_extremal_is_a_string() {
        let (p, s) = run(3);
        let j = render_json(&p, &s);
        assert_eq!(j["solution"]["z_star"], json!("inf"));
    }

    #[test]
    fn tolerance_is_validated() {
        let p = example(1).unwrap().problem().unwrap();
        assert!(matches!(
            solve_problem(&p, RunOptions { tol: 0.0 }),
            Err(Error::Validation(_))
        ));
    }
}
