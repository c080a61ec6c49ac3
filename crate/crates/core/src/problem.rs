//! Problem files: a TOML document describing the diffusion, the payoff and
//! what to solve.
//!
//! ```toml
//! [diffusion]
//! family = "gbm"            # or drift = "...", volatility = "..."
//! mu = 0.1
//! sigma = 0.2
//! discount = 0.24           # number or expression in x
//! lower = "natural"
//! upper = "natural"
//! state = "(0, inf)"
//! domain = [0.001, 1000.0]
//! points = 4096
//!
//! [payoff]
//! pieces = [
//!   { interval = "(0, 10]", expr = "x - 3" },
//!   { interval = "(10, inf)", expr = "7/3*x - 49/3" },
//! ]
//!
//! [mode]
//! kind = "stopping"         # control_down | control_up | connection
//! ```

use serde::{Deserialize, Serialize};

use crate::diffusion::{BoundaryKind, Coefficient, DiffusionSpec, Discount, WorkingDomain};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::payoff::{Interval, PayoffExpr, Piece};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Stopping,
    ControlDown,
    ControlUp,
    Connection,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Stopping => "stopping",
            Mode::ControlDown => "control_down",
            Mode::ControlUp => "control_up",
            Mode::Connection => "connection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumOrExpr {
    Num(f64),
    Expr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volatility: Option<String>,
    pub discount: Option<NumOrExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discount_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceEntry {
    pub interval: String,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PayoffSection {
    #[serde(default)]
    pub pieces: Vec<PieceEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    #[serde(default)]
    pub kind: Mode,
    /// Solve a control problem even when the boundedness check fails.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub override_assumption: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub antithetic: Option<bool>,
}

/// The file as written, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub diffusion: DiffusionSection,
    pub payoff: PayoffSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub running_payoff: Option<PayoffSection>,
    #[serde(default)]
    pub mode: ModeSection,
    #[serde(default, skip_serializing_if = "is_default_mc")]
    pub mc: McSection,
}

fn is_default_mc(m: &McSection) -> bool {
    *m == McSection::default()
}

/// A validated problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub file: ProblemFile,
    pub spec: DiffusionSpec,
    pub payoff: PayoffExpr,
    pub running: Option<PayoffExpr>,
    pub mode: Mode,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Moves a parse error from inside an embedded string to its place in the file.
fn relocate(text: &str, needle: &str, e: Error) -> Error {
    match e {
        Error::Parse { col, message, .. } => {
            let (line, c0) = text
                .find(&format!("\"{needle}\""))
                .map(|p| line_col(text, p + 1))
                .unwrap_or((0, 0));
            Error::Parse {
                line,
                col: c0 + col - 1,
                message,
            }
        }
        other => other,
    }
}

pub fn parse_file(text: &str) -> Result<ProblemFile> {
    toml::from_str::<ProblemFile>(text).map_err(|e| {
        let (line, col) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::Parse {
            line,
            col,
            message: e.message().to_string(),
        }
    })
}

/// Parses and validates a problem file.
pub fn parse_spec(text: &str) -> Result<Problem> {
    let file = parse_file(text)?;
    build(file, Some(text))
}

fn boundary(s: &Option<String>, text: Option<&str>) -> Result<BoundaryKind> {
    match s {
        None => Ok(BoundaryKind::Natural),
        Some(v) => BoundaryKind::parse(v).map_err(|e| relocate(text.unwrap_or(""), v, e)),
    }
}

fn pieces(sec: &PayoffSection, text: Option<&str>) -> Result<Vec<Piece>> {
    let t = text.unwrap_or("");
    sec.pieces
        .iter()
        .map(|p| {
            Ok(Piece {
                interval: Interval::parse(&p.interval).map_err(|e| relocate(t, &p.interval, e))?,
                expr: Expr::parse(&p.expr).map_err(|e| relocate(t, &p.expr, e))?,
            })
        })
        .collect()
}

pub fn build(file: ProblemFile, text: Option<&str>) -> Result<Problem> {
    let t = text.unwrap_or("");
    let d = &file.diffusion;
    let coef = |src: &String| Coefficient::parse(src).map_err(|e| relocate(t, src, e));
    let discount = match &d.discount {
        None => return Err(Error::Validation("[diffusion] needs a discount".into())),
        Some(NumOrExpr::Num(r)) => Discount::Constant(*r),
        Some(NumOrExpr::Expr(s)) => {
            let c = coef(s)?;
            match c.as_affine() {
                Some((r, 0.0)) => Discount::Constant(r),
                _ => Discount::State(c),
            }
        }
    };
    let mut spec = match d.family.as_deref() {
        Some("gbm") | Some("abm") => {
            let (Some(mu), Some(sigma)) = (d.mu, d.sigma) else {
                return Err(Error::Validation("family needs both mu and sigma".into()));
            };
            if d.drift.is_some() || d.volatility.is_some() {
                return Err(Error::Validation("give either a family or drift/volatility, not both".into()));
            }
            let mut s = if d.family.as_deref() == Some("gbm") {
                DiffusionSpec::gbm(mu, sigma, 1.0)
            } else {
                DiffusionSpec::abm(mu, sigma, 1.0)
            };
            s.discount = discount.clone();
            s.discount_floor = None;
            s
        }
        Some(other) => return Err(Error::Validation(format!("unknown family '{other}' (known: gbm, abm)"))),
        None => {
            let (Some(mu), Some(sigma)) = (&d.drift, &d.volatility) else {
                return Err(Error::Validation("[diffusion] needs drift and volatility, or a family".into()));
            };
            DiffusionSpec::new(coef(mu)?, coef(sigma)?, discount.clone())
        }
    };
    spec.discount_floor = match (d.discount_floor, &discount) {
        (Some(f), _) => Some(f),
        (None, Discount::Constant(r)) => Some(*r),
        (None, Discount::State(_)) => None,
    };
    let state = match &d.state {
        Some(s) => Interval::parse(s).map_err(|e| relocate(t, s, e))?,
        None => spec.state,
    };
    let lower = boundary(&d.lower, text)?;
    let upper = boundary(&d.upper, text)?;
    let mut state = state;
    state.lo_closed = lower.is_state_point() && state.lo.is_finite();
    state.hi_closed = upper.is_state_point() && state.hi.is_finite();
    spec = spec.with_state(state, lower, upper);
    let mut dom = WorkingDomain::default_for(&state);
    if let Some([lo, hi]) = d.domain {
        dom.lo = lo;
        dom.hi = hi;
    }
    if let Some(n) = d.points {
        dom.points = n;
    }
    spec.domain = dom;
    spec.validate()?;

    if file.payoff.pieces.is_empty() {
        return Err(Error::Validation("[payoff] has no pieces".into()));
    }
    for (kind, v, side) in [
        (lower, file.payoff.lower_value, "lower"),
        (upper, file.payoff.upper_value, "upper"),
    ] {
        if kind.is_state_point() && v.is_none() {
            return Err(Error::Validation(format!(
                "the {side} boundary is {} so [payoff] needs {side}_value",
                kind.name()
            )));
        }
        if !kind.is_state_point() && v.is_some() {
            return Err(Error::Validation(format!(
                "{side}_value given but the {side} boundary is not part of the state space"
            )));
        }
    }
    let payoff = PayoffExpr::new(
        pieces(&file.payoff, text)?,
        state,
        file.payoff.lower_value,
        file.payoff.upper_value,
    )?;
    let running = match &file.running_payoff {
        Some(sec) => {
            let mut open = state;
            open.lo_closed = false;
            open.hi_closed = false;
            let mut ps = pieces(sec, text)?;
            for p in &mut ps {
                if p.interval.lo == state.lo {
                    p.interval.lo_closed = false;
                }
                if p.interval.hi == state.hi {
                    p.interval.hi_closed = false;
                }
            }
            Some(PayoffExpr::running(ps, open)?)
        }
        None => None,
    };
    let mode = file.mode.kind;
    if mode != Mode::Stopping && running.is_some() && mode == Mode::Connection {
        return Err(Error::Validation("a running payoff is not supported in connection mode".into()));
    }
    Ok(Problem {
        file,
        spec,
        payoff,
        running,
        mode,
    })
}

/// Serializes a problem file back to TOML.
pub fn to_toml(file: &ProblemFile) -> String {
    toml::to_string(file).expect("problem files always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::Reward;

    const EX1: &str = r#"
[diffusion]
family = "gbm"
mu = 0.1
sigma = 0.2
discount = 0.24

[payoff]
pieces = [
  { interval = "(0, 10]", expr = "x - 3" },
  { interval = "(10, inf)", expr = "7/3*x - 49/3" },
]
"#;

    #[test]
    fn parses_example_file() {
        let p = parse_spec(EX1).unwrap();
        assert_eq!(p.mode, Mode::Stopping);
        assert_eq!(p.payoff.pieces().len(), 2);
        assert!((p.payoff.value(14.0) - 49.0 / 3.0).abs() < 1e-12);
        assert!(p.spec.family().is_some());
    }

    #[test]
    fn round_trip() {
        let p = parse_spec(EX1).unwrap();
        let text = to_toml(&p.file);
        let q = parse_spec(&text).unwrap();
        assert_eq!(p.file, q.file);
        assert_eq!(p.payoff, q.payoff);
    }

    #[test]
    fn errors_carry_positions() {
        let bad = EX1.replace("x - 3", "x - * 3");
        match parse_spec(&bad) {
            Err(Error::Parse { line, col, .. }) => {
                assert_eq!(line, 10);
                assert!(col > 20, "col {col}");
            }
            other => panic!("{other:?}"),
        }
        let bad = EX1.replace("mu = 0.1", "mu = ");
        assert!(matches!(parse_spec(&bad), Err(Error::Parse { line: 4, .. })));
        let empty = EX1.replace(
            "pieces = [\n  { interval = \"(0, 10]\", expr = \"x - 3\" },\n  { interval = \"(10, inf)\", expr = \"7/3*x - 49/3\" },\n]",
            "pieces = []",
        );
        assert!(matches!(parse_spec(&empty), Err(Error::Validation(_))));
    }

    #[test]
    fn floor_payoff() {
        let text = EX1.replace(
            "pieces = [\n  { interval = \"(0, 10]\", expr = \"x - 3\" },\n  { interval = \"(10, inf)\", expr = \"7/3*x - 49/3\" },\n]",
            "pieces = [{ interval = \"(0, inf)\", expr = \"floor(x)^2\" }]",
        );
        let p = parse_spec(&text).unwrap();
        assert_eq!(p.payoff.value(2.7), 4.0);
    }

    #[test]
    fn boundary_values_required() {
        let text = EX1
            .replace("discount = 0.24", "discount = 0.24\nstate = \"[1, inf)\"\nlower = \"reflecting\"");
        let text = text.replace("(0, 10]", "[1, 10]");
        assert!(matches!(parse_spec(&text), Err(Error::Validation(_))));
        let text = text.replace("\n]\n", "\n]\nlower_value = 1.0\n").replace("[1, 10]", "(1, 10]");
        let p = parse_spec(&text).unwrap();
        assert_eq!(p.spec.lower, BoundaryKind::Reflecting);
        assert_eq!(p.payoff.value(1.0), 1.0);
    }
}
