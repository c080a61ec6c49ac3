//! Simulation cross-checks of a solved problem at one starting point, and
//! parameter sweeps.

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::control::{ControlKind, ControlSolution, Direction};
use crate::error::{Error, Result};
use crate::montecarlo::{
    estimate_impulse_value, estimate_reflected_value, estimate_stopping_value, Estimate, SimConfig,
};
use crate::problem::{build, Mode, NumOrExpr, Problem, ProblemFile};
use crate::report::{cell, fmt, num, solve_problem, RunOptions, Solution};
use crate::stopping::{RuleKind, StoppingSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct McCheck {
    pub label: String,
    pub analytic: f64,
    pub estimate: Estimate,
    /// Within `k` standard errors.
    pub agrees: bool,
}

impl McCheck {
    fn new(label: String, analytic: f64, estimate: Estimate, k: f64) -> McCheck {
        McCheck {
            label,
            analytic,
            agrees: estimate.within(analytic, k),
            estimate,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{}: analytic {}, simulated {} +- {} (z = {:.2}, {} paths) {}",
            self.label,
            fmt(self.analytic),
            fmt(self.estimate.mean),
            fmt(self.estimate.std_error),
            self.estimate.z_score(self.analytic),
            self.estimate.paths_used,
            if self.agrees { "agree" } else { "DISAGREE" }
        )
    }

    pub fn to_json(&self) -> Value {
        json!({
            "label": self.label,
            "analytic": num(self.analytic),
            "mean": num(self.estimate.mean),
            "std_error": num(self.estimate.std_error),
            "z": num(self.estimate.z_score(self.analytic)),
            "paths": self.estimate.paths_used,
            "truncated_fraction": num(self.estimate.truncated_fraction),
            "agrees": self.agrees,
        })
    }
}

fn rule_label(k: &RuleKind) -> String {
    match k {
        RuleKind::HitSet(_) => "first entry into the stopping set".into(),
        RuleKind::HitPoint(p) => format!("stop at {}", fmt(*p)),
        RuleKind::TwoPoint(a, b) => format!("exit from ({}, {})", fmt(*a), fmt(*b)),
        RuleKind::ImmediateStop => "stop immediately".into(),
        RuleKind::None | RuleKind::NeverStop => "no rule".into(),
    }
}

fn stopping_checks(p: &Problem, s: &StoppingSolution, x: f64, cfg: &SimConfig) -> Result<Vec<McCheck>> {
    let mut out = Vec::new();
    if let Some(seg) = s.segment(x) {
        let simulable = !matches!(seg.rule.kind, RuleKind::None | RuleKind::NeverStop);
        if simulable && seg.rule.valid_on.contains(x) {
            let e = estimate_stopping_value(&p.spec, &p.payoff, x, &seg.rule.kind, cfg)?;
            out.push(McCheck::new(rule_label(&seg.rule.kind), seg.value(&s.pair, x), e, 3.0));
        }
    }
    for r in &s.boundary_rules {
        if x >= r.a && x <= r.b {
            let kind = RuleKind::TwoPoint(r.a, r.b);
            let e = estimate_stopping_value(&p.spec, &p.payoff, x, &kind, cfg)?;
            let v = r.psi_coef * s.pair.psi(x) + r.phi_coef * s.pair.phi(x);
            out.push(McCheck::new(rule_label(&kind), v, e, 3.0));
        }
    }
    Ok(out)
}

fn control_checks(p: &Problem, c: &ControlSolution, x: f64, cfg: &SimConfig) -> Result<Vec<McCheck>> {
    let Some(v) = c.value(x) else {
        return Ok(Vec::new());
    };
    let dir = c.direction;
    let verb = if dir == Direction::Down { "down" } else { "up" };
    let mut out = Vec::new();
    let reflect = c.controls.iter().find_map(|d| match d.kind {
        ControlKind::ReflectAt(b) if d.valid_on.contains(x) => Some(b),
        _ => None,
    });
    if let Some(b) = reflect {
        let e = estimate_reflected_value(&p.spec, &p.payoff, x, b, cfg, dir)?;
        out.push(McCheck::new(format!("reflect {verb}ward at {}", fmt(b)), v, e, 3.0));
    }
    let impulse = c.controls.iter().find_map(|d| match d.kind {
        ControlKind::Impulse { trigger, jump } if d.valid_on.contains(x) => Some((trigger, jump)),
        _ => None,
    });
    if let Some((t, j)) = impulse {
        let e = estimate_impulse_value(&p.spec, &p.payoff, x, t, j, cfg, dir)?;
        out.push(McCheck::new(format!("impulse at {} of size {}", fmt(t), fmt(j)), v, e, 3.0));
    }
    Ok(out)
}

/// Simulates the reported optimal rules from `x` and compares with the
/// analytic value.
pub fn verify_mc(p: &Problem, sol: &Solution, x: f64, cfg: &SimConfig) -> Result<Vec<McCheck>> {
    cfg.validate()?;
    if !p.spec.state.contains(x) {
        return Err(Error::Validation(format!("x = {x} is outside the state space")));
    }
    if p.running.is_some() {
        return Err(Error::Validation("verify-mc does not simulate running payoffs".into()));
    }
    let checks = match sol {
        Solution::Stopping(s) => stopping_checks(p, s, x, cfg)?,
        Solution::Control(c) => control_checks(p, c, x, cfg)?,
        Solution::Connection(r) => {
            let mut v = Vec::new();
            if x <= r.z_prime {
                v.extend(control_checks(p, &r.down, x, cfg)?);
            }
            if x >= r.y_prime {
                v.extend(control_checks(p, &r.up, x, cfg)?);
            }
            v
        }
    };
    if checks.is_empty() {
        return Err(Error::Validation(format!(
            "no rule attaining the value at x = {x} is reported, so there is nothing to simulate"
        )));
    }
    Ok(checks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Mu,
    Sigma,
    Discount,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<SweepParam> {
        match s {
            "mu" => Ok(SweepParam::Mu),
            "sigma" => Ok(SweepParam::Sigma),
            "r" | "discount" => Ok(SweepParam::Discount),
            _ => Err(Error::Validation(format!("unknown sweep parameter '{s}' (known: mu, sigma, r)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Mu => "mu",
            SweepParam::Sigma => "sigma",
            SweepParam::Discount => "r",
        }
    }

    fn apply(self, file: &mut ProblemFile, v: f64) -> Result<()> {
        let d = &mut file.diffusion;
        match self {
            SweepParam::Mu | SweepParam::Sigma if d.family.is_none() => Err(Error::Validation(format!(
                "sweeping {} needs a family diffusion (gbm or abm)",
                self.name()
            ))),
            SweepParam::Mu => {
                d.mu = Some(v);
                Ok(())
            }
            SweepParam::Sigma => {
                d.sigma = Some(v);
                Ok(())
            }
            SweepParam::Discount => {
                if matches!(d.discount, Some(NumOrExpr::Expr(_))) {
                    return Err(Error::Validation("sweeping r needs a constant discount".into()));
                }
                d.discount = Some(NumOrExpr::Num(v));
                // An explicit floor refers to the old rate.
                d.discount_floor = None;
                Ok(())
            }
        }
    }
}

/// Solves the problem once per parameter value and tabulates the headline
/// quantities. Failed solves become rows with an `error` entry instead of
/// aborting the sweep.
pub fn sweep(file: &ProblemFile, param: SweepParam, values: &[f64], x: Option<f64>, opts: RunOptions) -> Result<String> {
    if values.is_empty() {
        return Err(Error::Validation("the sweep has no parameter values".into()));
    }
    let mode = file.mode.kind;
    let mut out = String::new();
    let head = match mode {
        Mode::Stopping => "sup_g_over_psi,sup_g_over_phi,z_star,y_star,case,value_at_x",
        Mode::ControlDown | Mode::ControlUp => "sup_ratio,extremal,case,value_at_x",
        Mode::Connection => "z_prime,y_prime,local,split,value_at_x",
    };
    let _ = writeln!(out, "{},{head},error", param.name());
    for &v in values {
        let mut f = file.clone();
        param.apply(&mut f, v)?;
        let row = build(f, None).and_then(|p| solve_problem(&p, opts));
        let vx = |sol: &Solution| x.and_then(|x| sol.value(x));
        let _ = match row {
            Ok(sol) => match &sol {
                Solution::Stopping(s) => writeln!(
                    out,
                    "{},{},{},{},{},{},{},",
                    cell(Some(v)),
                    cell(Some(s.m.sup_value)),
                    cell(Some(s.n.sup_value)),
                    cell(Some(s.z_star)),
                    cell(Some(s.y_star)),
                    s.degenerate.name(),
                    cell(vx(&sol))
                ),
                Solution::Control(c) => writeln!(
                    out,
                    "{},{},{},{},{},",
                    cell(Some(v)),
                    cell(Some(c.set.sup_value)),
                    cell(Some(c.extremal)),
                    c.degenerate.name(),
                    cell(vx(&sol))
                ),
                Solution::Connection(r) => writeln!(
                    out,
                    "{},{},{},{},{},{},",
                    cell(Some(v)),
                    cell(Some(r.z_prime)),
                    cell(Some(r.y_prime)),
                    r.local,
                    cell(r.split),
                    cell(vx(&sol))
                ),
            },
            Err(e) => {
                let blanks = head.matches(',').count();
                let msg = e.to_string().replace([',', '\n'], ";");
                writeln!(out, "{},{}{msg}", cell(Some(v)), ",".repeat(blanks + 1))
            }
        };
    }
    Ok(out)
}

/// `from:to:count` (inclusive, evenly spaced) or a comma-separated list.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Validation(format!("cannot read sweep values '{s}'; use a,b,c or from:to:count"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n < 2 {
            return Err(bad());
        }
        return Ok(crate::grid::lin_space(a, b, n));
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::example;

    #[test]
    fn stopping_rule_is_simulated() {
        let p = example(1).unwrap().problem().unwrap();
        let sol = solve_problem(&p, RunOptions::default()).unwrap();
        let cfg = SimConfig::new(1e-2, 2000, 11);
        let checks = verify_mc(&p, &sol, 10.0, &cfg).unwrap();
        assert!(!checks.is_empty());
        assert!((checks[0].analytic - 100.0 / 12.0).abs() < 1e-9);
        assert!(checks[0].agrees, "{}", checks[0].render());
    }

    #[test]
    fn unattained_value_has_nothing_to_simulate() {
        let p = example(3).unwrap().problem().unwrap();
        let sol = solve_problem(&p, RunOptions::default()).unwrap();
        let cfg = SimConfig::new(1e-2, 200, 1);
        assert!(matches!(verify_mc(&p, &sol, 50.0, &cfg), Err(Error::Validation(_))));
        assert!(matches!(verify_mc(&p, &sol, -1.0, &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn sweep_over_the_discount() {
        let f = example(1).unwrap().file;
        let csv = sweep(&f, SweepParam::Discount, &[0.24, 0.3], Some(3.0), RunOptions::default()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "r,sup_g_over_psi,sup_g_over_phi,z_star,y_star,case,value_at_x,error");
        assert_eq!(lines.len(), 3);
        let cols: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cols.len(), 8);
        assert!((cols[1].parse::<f64>().unwrap() - 1.0 / 12.0).abs() < 1e-10);
        assert!((cols[6].parse::<f64>().unwrap() - 0.75).abs() < 1e-10);
        // A larger discount lowers the value.
        let v2: f64 = lines[2].split(',').nth(6).unwrap().parse().unwrap();
        assert!(v2 < 0.75);
    }

    #[test]
    fn sweep_value_syntax() {
        assert_eq!(parse_values("0.1,0.2").unwrap(), vec![0.1, 0.2]);
        assert_eq!(parse_values("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_values("a").is_err());
        assert!(SweepParam::parse("kappa").is_err());
    }

    #[test]
    fn failed_rows_are_kept() {
        let f = example(1).unwrap().file;
        let csv = sweep(&f, SweepParam::Sigma, &[0.2, -1.0], None, RunOptions::default()).unwrap();
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("-1.0,"));
        assert_eq!(last.split(',').count(), 8);
        assert!(!last.ends_with(','));
    }
}
