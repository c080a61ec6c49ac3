//! Piecewise closed-form payoffs.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

/// Anything that can serve as a reward function of the state.
pub trait Reward: Send + Sync {
    fn value(&self, x: f64) -> f64;

    /// First derivative; at a kink the right derivative.
    fn slope(&self, x: f64) -> f64 {
        let h = 1e-6 * (1.0 + x.abs());
        (self.value(x + h) - self.value(x - h)) / (2.0 * h)
    }

    /// Left derivative.
    fn slope_left(&self, x: f64) -> f64 {
        self.slope(x)
    }

    /// Points where the reward or its derivative may jump.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

type ValueFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A reward given by closures.
#[derive(Clone)]
pub struct FnReward {
    value: ValueFn,
    slope: Option<ValueFn>,
    slope_left: Option<ValueFn>,
    breakpoints: Vec<f64>,
}

impl FnReward {
    pub fn new(value: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        FnReward {
            value: Arc::new(value),
            slope: None,
            slope_left: None,
            breakpoints: Vec::new(),
        }
    }

    pub fn with_slope(mut self, slope: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.slope = Some(Arc::new(slope));
        self
    }

    pub fn with_left_slope(mut self, slope: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.slope_left = Some(Arc::new(slope));
        self
    }

    pub fn with_breakpoints(mut self, bps: Vec<f64>) -> Self {
        self.breakpoints = bps;
        self
    }
}

impl Reward for FnReward {
    fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    fn slope(&self, x: f64) -> f64 {
        match &self.slope {
            Some(s) => s(x),
            None => {
                let h = 1e-6 * (1.0 + x.abs());
                ((self.value)(x + h) - (self.value)(x - h)) / (2.0 * h)
            }
        }
    }

    fn slope_left(&self, x: f64) -> f64 {
        match &self.slope_left {
            Some(s) => s(x),
            None => self.slope(x),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

impl<R: Reward + ?Sized> Reward for Arc<R> {
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }
    fn slope(&self, x: f64) -> f64 {
        (**self).slope(x)
    }
    fn slope_left(&self, x: f64) -> f64 {
        (**self).slope_left(x)
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
}

impl<R: Reward + ?Sized> Reward for &R {
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }
    fn slope(&self, x: f64) -> f64 {
        (**self).slope(x)
    }
    fn slope_left(&self, x: f64) -> f64 {
        (**self).slope_left(x)
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
}

/// Real interval with independent closedness flags; ends may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn open(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        (x > self.lo || (self.lo_closed && x == self.lo)) && (x < self.hi || (self.hi_closed && x == self.hi))
    }

    /// Parses `"(0, 10]"`, `"[5, inf)"` and the like. End points may be
    /// constant expressions such as `pi/2`.
    pub fn parse(s: &str) -> Result<Interval> {
        let err = |col: usize, m: &str| Error::Parse {
            line: 1,
            col,
            message: m.to_string(),
        };
        let t = s.trim();
        let lead = s.len() - s.trim_start().len();
        let lo_closed = match t.chars().next() {
            Some('[') => true,
            Some('(') => false,
            _ => return Err(err(lead + 1, "interval must start with '(' or '['")),
        };
        let hi_closed = match t.chars().last() {
            Some(']') => true,
            Some(')') => false,
            _ => return Err(err(lead + t.chars().count(), "interval must end with ')' or ']'")),
        };
        let inner = &t[1..t.len() - 1];
        let Some((a, b)) = inner.split_once(',') else {
            return Err(err(lead + 2, "interval needs two end points separated by ','"));
        };
        let end = |txt: &str, offset: usize| -> Result<f64> {
            let v = txt.trim();
            match v {
                "inf" | "+inf" | "infinity" | "∞" => return Ok(f64::INFINITY),
                "-inf" | "-infinity" | "-∞" => return Ok(f64::NEG_INFINITY),
                _ => {}
            }
            let e = Expr::parse(v).map_err(|e| match e {
                Error::Parse { col, message, .. } => Error::Parse {
                    line: 1,
                    col: col + offset,
                    message,
                },
                other => other,
            })?;
            if e.depends_on_x() {
                return Err(err(offset + 1, "interval end points must not depend on x"));
            }
            Ok(e.eval(0.0))
        };
        let lo = end(a, lead + 1 + (a.len() - a.trim_start().len()))?;
        let hi = end(b, lead + 2 + a.len() + (b.len() - b.trim_start().len()))?;
        if !(lo < hi) {
            return Err(err(lead + 1, "interval must satisfy lo < hi"));
        }
        Ok(Interval {
            lo,
            hi,
            lo_closed: lo_closed && lo.is_finite(),
            hi_closed: hi_closed && hi.is_finite(),
        })
    }
}

fn fmt_end(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}, {}{}",
            if self.lo_closed { '[' } else { '(' },
            fmt_end(self.lo),
            fmt_end(self.hi),
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub interval: Interval,
    pub expr: Expr,
}

impl Piece {
    pub fn parse(interval: &str, expr: &str) -> Result<Piece> {
        Ok(Piece {
            interval: Interval::parse(interval)?,
            expr: Expr::parse(expr)?,
        })
    }
}

/// A breakpoint whose declared value was raised to restore upper semicontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UscAdjustment {
    pub at: f64,
    pub declared: f64,
    pub enforced: f64,
}

/// Piecewise payoff `g` on a state interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffExpr {
    pieces: Vec<Piece>,
    state: Interval,
    lower_value: Option<f64>,
    upper_value: Option<f64>,
    breaks: Vec<f64>,
    break_values: Vec<f64>,
    adjustments: Vec<UscAdjustment>,
}

impl PayoffExpr {
    /// Single expression on the whole state interval.
    pub fn single(expr: &str, state: Interval) -> Result<PayoffExpr> {
        PayoffExpr::new(
            vec![Piece {
                interval: state,
                expr: Expr::parse(expr)?,
            }],
            state,
            None,
            None,
        )
    }

    pub fn new(
        pieces: Vec<Piece>,
        state: Interval,
        lower_value: Option<f64>,
        upper_value: Option<f64>,
    ) -> Result<PayoffExpr> {
        let g = PayoffExpr::assemble(pieces, state, lower_value, upper_value)?;
        g.check_positive()?;
        Ok(g)
    }

    /// Piecewise running payoff: same rules, but it need not be positive anywhere.
    pub fn running(pieces: Vec<Piece>, state: Interval) -> Result<PayoffExpr> {
        PayoffExpr::assemble(pieces, state, None, None)
    }

    fn assemble(
        mut pieces: Vec<Piece>,
        state: Interval,
        lower_value: Option<f64>,
        upper_value: Option<f64>,
    ) -> Result<PayoffExpr> {
        if pieces.is_empty() {
            return Err(Error::Validation("payoff has no pieces".into()));
        }
        pieces.sort_by(|a, b| a.interval.lo.total_cmp(&b.interval.lo));
        if pieces[0].interval.lo != state.lo {
            return Err(Error::Validation(format!(
                "payoff pieces start at {} but the state interval starts at {}",
                pieces[0].interval.lo, state.lo
            )));
        }
        let last = pieces.last().unwrap().interval;
        if last.hi != state.hi {
            return Err(Error::Validation(format!(
                "payoff pieces end at {} but the state interval ends at {}",
                last.hi, state.hi
            )));
        }
        let mut breaks = Vec::new();
        let mut break_values = Vec::new();
        let mut adjustments = Vec::new();
        for w in pieces.windows(2) {
            let (l, r) = (&w[0], &w[1]);
            if l.interval.hi != r.interval.lo {
                return Err(Error::Validation(format!(
                    "payoff pieces {} and {} leave a gap or overlap",
                    l.interval, r.interval
                )));
            }
            if l.interval.hi_closed && r.interval.lo_closed {
                return Err(Error::Validation(format!(
                    "payoff pieces {} and {} both contain {}",
                    l.interval, r.interval, l.interval.hi
                )));
            }
            let b = l.interval.hi;
            let left = l.expr.eval(b);
            let right = r.expr.eval(b);
            let enforced = left.max(right);
            let declared = if l.interval.hi_closed {
                left
            } else if r.interval.lo_closed {
                right
            } else {
                f64::NAN
            };
            if declared.is_nan() || enforced - declared > 1e-12 * (1.0 + enforced.abs()) {
                adjustments.push(UscAdjustment {
                    at: b,
                    declared,
                    enforced,
                });
            }
            breaks.push(b);
            break_values.push(enforced);
        }
        if let Some(v) = lower_value {
            if !state.lo.is_finite() || !v.is_finite() {
                return Err(Error::Validation("lower boundary value needs a finite end point".into()));
            }
        }
        if let Some(v) = upper_value {
            if !state.hi.is_finite() || !v.is_finite() {
                return Err(Error::Validation("upper boundary value needs a finite end point".into()));
            }
        }
        let g = PayoffExpr {
            pieces,
            state,
            lower_value,
            upper_value,
            breaks,
            break_values,
            adjustments,
        };
        Ok(g)
    }

    fn check_positive(&self) -> Result<()> {
        let lo = if self.state.lo.is_finite() { self.state.lo } else { -1e6 };
        let hi = if self.state.hi.is_finite() { self.state.hi } else { 1e6 };
        let (lo, hi) = if lo >= 0.0 { (lo.max(1e-6), hi) } else { (lo, hi) };
        let mut samples = crate::grid::auto_space(lo, hi, 4001);
        samples.extend(self.breaks.iter().copied());
        samples.extend(self.lower_value.map(|_| self.state.lo));
        samples.extend(self.upper_value.map(|_| self.state.hi));
        if samples.iter().any(|&x| self.value(x) > 0.0) {
            Ok(())
        } else {
            Err(Error::Validation("payoff never attains a positive value on the sampled grid".into()))
        }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn state(&self) -> Interval {
        self.state
    }

    pub fn lower_value(&self) -> Option<f64> {
        self.lower_value
    }

    pub fn upper_value(&self) -> Option<f64> {
        self.upper_value
    }

    pub fn usc_adjustments(&self) -> &[UscAdjustment] {
        &self.adjustments
    }

    /// Index of the piece whose interior or closed end holds `x`, ignoring breakpoints.
    fn piece_index(&self, x: f64) -> usize {
        self.breaks.partition_point(|b| *b < x)
    }

    fn break_index(&self, x: f64) -> Option<usize> {
        let i = self.breaks.partition_point(|b| *b < x);
        (i < self.breaks.len() && self.breaks[i] == x).then_some(i)
    }

    /// Left and right one-sided values at `x` (equal away from breakpoints).
    pub fn one_sided(&self, x: f64) -> (f64, f64) {
        match self.break_index(x) {
            Some(i) => (self.pieces[i].expr.eval(x), self.pieces[i + 1].expr.eval(x)),
            None => {
                let v = self.value(x);
                (v, v)
            }
        }
    }
}

impl Reward for PayoffExpr {
    fn value(&self, x: f64) -> f64 {
        if x.is_nan() || x < self.state.lo || x > self.state.hi {
            return f64::NAN;
        }
        if x == self.state.lo {
            if let Some(v) = self.lower_value {
                return v;
            }
        }
        if x == self.state.hi {
            if let Some(v) = self.upper_value {
                return v;
            }
        }
        if let Some(i) = self.break_index(x) {
            return self.break_values[i];
        }
        self.pieces[self.piece_index(x)].expr.eval(x)
    }

    fn slope(&self, x: f64) -> f64 {
        let i = match self.break_index(x) {
            Some(i) => i + 1,
            None => self.piece_index(x),
        };
        self.pieces[i.min(self.pieces.len() - 1)].expr.derivative(x)
    }

    fn slope_left(&self, x: f64) -> f64 {
        self.pieces[self.piece_index(x)].expr.derivative(x)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breaks.clone()
    }
}
