//! Diffusion specifications: coefficients, discounting and boundary behaviour.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::payoff::Interval;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Central difference step used whenever no closed-form derivative exists.
pub fn fd_step(x: f64) -> f64 {
    1e-6_f64.max(1e-6 * x.abs())
}

/// A state-dependent coefficient with its first derivative.
#[derive(Clone)]
pub enum Coefficient {
    Expr(Expr),
    Fn { f: ScalarFn, df: Option<ScalarFn> },
}

impl Coefficient {
    pub fn parse(src: &str) -> Result<Coefficient> {
        Ok(Coefficient::Expr(Expr::parse(src)?))
    }

    pub fn constant(c: f64) -> Coefficient {
        Coefficient::Expr(Expr::Num(c))
    }

    /// `c0 + c1 * x`.
    pub fn affine(c0: f64, c1: f64) -> Coefficient {
        let lin = Expr::Mul(Box::new(Expr::Num(c1)), Box::new(Expr::X));
        Coefficient::Expr(if c0 == 0.0 {
            lin
        } else {
            Expr::Add(Box::new(Expr::Num(c0)), Box::new(lin))
        })
    }

    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Coefficient {
        Coefficient::Fn {
            f: Arc::new(f),
            df: None,
        }
    }

    pub fn from_fn_with_derivative(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Coefficient {
        Coefficient::Fn {
            f: Arc::new(f),
            df: Some(Arc::new(df)),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Coefficient::Expr(e) => e.eval(x),
            Coefficient::Fn { f, .. } => f(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Coefficient::Expr(e) => e.derivative(x),
            Coefficient::Fn { df: Some(df), .. } => df(x),
            Coefficient::Fn { f, df: None } => {
                let h = fd_step(x);
                (f(x + h) - f(x - h)) / (2.0 * h)
            }
        }
    }

    pub fn as_affine(&self) -> Option<(f64, f64)> {
        match self {
            Coefficient::Expr(e) => e.as_affine(),
            Coefficient::Fn { .. } => None,
        }
    }

    pub fn expr(&self) -> Option<&Expr> {
        match self {
            Coefficient::Expr(e) => Some(e),
            Coefficient::Fn { .. } => None,
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Expr(e) => write!(f, "Expr({e})"),
            Coefficient::Fn { df, .. } => write!(f, "Fn(derivative: {})", df.is_some()),
        }
    }
}

/// Discount rate: constant or a function of the state.
#[derive(Clone, Debug)]
pub enum Discount {
    Constant(f64),
    State(Coefficient),
}

impl Discount {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Discount::Constant(r) => *r,
            Discount::State(c) => c.value(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Discount::Constant(_) => 0.0,
            Discount::State(c) => c.derivative(x),
        }
    }

    pub fn constant(&self) -> Option<f64> {
        match self {
            Discount::Constant(r) => Some(*r),
            Discount::State(c) => match c.as_affine() {
                Some((r, s)) if s == 0.0 => Some(r),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryKind {
    Natural,
    Exit,
    Entrance,
    Killing,
    Reflecting,
    Absorbing,
}

impl BoundaryKind {
    /// Whether the end point itself belongs to the state space of the process.
    pub fn is_state_point(self) -> bool {
        matches!(self, BoundaryKind::Reflecting | BoundaryKind::Absorbing)
    }

    pub fn parse(s: &str) -> Result<BoundaryKind> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "natural" => BoundaryKind::Natural,
            "exit" => BoundaryKind::Exit,
            "entrance" => BoundaryKind::Entrance,
            "killing" => BoundaryKind::Killing,
            "reflecting" => BoundaryKind::Reflecting,
            "absorbing" => BoundaryKind::Absorbing,
            other => return Err(Error::Validation(format!("unknown boundary kind '{other}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::Natural => "natural",
            BoundaryKind::Exit => "exit",
            BoundaryKind::Entrance => "entrance",
            BoundaryKind::Killing => "killing",
            BoundaryKind::Reflecting => "reflecting",
            BoundaryKind::Absorbing => "absorbing",
        }
    }
}

/// Finite window of the state space used for grids and numerics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingDomain {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl WorkingDomain {
    pub fn default_for(state: &Interval) -> WorkingDomain {
        if state.lo >= 0.0 {
            let lo = if state.lo > 0.0 { state.lo.max(1e-3) } else { 1e-3 };
            let hi = if state.hi.is_finite() { state.hi.min(1e3) } else { 1e3 };
            WorkingDomain { lo, hi, points: 4096 }
        } else {
            let lo = if state.lo.is_finite() { state.lo.max(-50.0) } else { -50.0 };
            let hi = if state.hi.is_finite() { state.hi.min(50.0) } else { 50.0 };
            WorkingDomain { lo, hi, points: 4096 }
        }
    }

    pub fn anchor(&self) -> f64 {
        crate::grid::mid(self.lo, self.hi)
    }

    pub fn grid(&self) -> Vec<f64> {
        crate::grid::auto_space(self.lo, self.hi, self.points)
    }

    pub fn is_log(&self) -> bool {
        self.lo > 0.0
    }
}

/// Families with closed-form fundamental solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    /// dX = μX dt + σX dW.
    Gbm { mu: f64, sigma: f64 },
    /// dX = μ dt + σ dW.
    Abm { mu: f64, sigma: f64 },
}

/// A linear diffusion dX = μ(X)dt + σ(X)dW killed at rate r(X).
#[derive(Clone, Debug)]
pub struct DiffusionSpec {
    pub drift: Coefficient,
    pub volatility: Coefficient,
    pub discount: Discount,
    pub lower: BoundaryKind,
    pub upper: BoundaryKind,
    pub state: Interval,
    pub domain: WorkingDomain,
    /// Declared lower bound δ on the discount rate; `None` permits any sign.
    pub discount_floor: Option<f64>,
}

impl DiffusionSpec {
    pub fn new(drift: Coefficient, volatility: Coefficient, discount: Discount) -> DiffusionSpec {
        let state = Interval::open(0.0, f64::INFINITY);
        DiffusionSpec {
            drift,
            volatility,
            discount,
            lower: BoundaryKind::Natural,
            upper: BoundaryKind::Natural,
            state,
            domain: WorkingDomain::default_for(&state),
            discount_floor: None,
        }
    }

    pub fn gbm(mu: f64, sigma: f64, r: f64) -> DiffusionSpec {
        let mut s = DiffusionSpec::new(
            Coefficient::affine(0.0, mu),
            Coefficient::affine(0.0, sigma),
            Discount::Constant(r),
        );
        s.discount_floor = Some(r);
        s
    }

    pub fn abm(mu: f64, sigma: f64, r: f64) -> DiffusionSpec {
        let mut s = DiffusionSpec::new(
            Coefficient::constant(mu),
            Coefficient::constant(sigma),
            Discount::Constant(r),
        );
        s.state = Interval::open(f64::NEG_INFINITY, f64::INFINITY);
        s.domain = WorkingDomain::default_for(&s.state);
        s.discount_floor = Some(r);
        s
    }

    pub fn with_state(mut self, state: Interval, lower: BoundaryKind, upper: BoundaryKind) -> DiffusionSpec {
        self.state = state;
        self.lower = lower;
        self.upper = upper;
        self.domain = WorkingDomain::default_for(&state);
        self
    }

    pub fn with_domain(mut self, lo: f64, hi: f64, points: usize) -> DiffusionSpec {
        self.domain = WorkingDomain { lo, hi, points };
        self
    }

    #[inline]
    pub fn mu(&self, x: f64) -> f64 {
        self.drift.value(x)
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        self.volatility.value(x)
    }

    #[inline]
    pub fn r(&self, x: f64) -> f64 {
        self.discount.value(x)
    }

    pub fn mu_prime(&self, x: f64) -> f64 {
        self.drift.derivative(x)
    }

    pub fn sigma_prime(&self, x: f64) -> f64 {
        self.volatility.derivative(x)
    }

    /// Generator applied to a function given by its value and two derivatives.
    pub fn generator(&self, x: f64, u: f64, du: f64, d2u: f64) -> f64 {
        let s = self.sigma(x);
        0.5 * s * s * d2u + self.mu(x) * du - self.r(x) * u
    }

    /// Closed-form family matching this specification, if any.
    pub fn family(&self) -> Option<Family> {
        self.discount.constant()?;
        let (m0, m1) = self.drift.as_affine()?;
        let (s0, s1) = self.volatility.as_affine()?;
        if m0 == 0.0 && s0 == 0.0 && s1 > 0.0 && self.state.lo >= 0.0 {
            return Some(Family::Gbm { mu: m1, sigma: s1 });
        }
        if m1 == 0.0 && s1 == 0.0 && s0 > 0.0 {
            return Some(Family::Abm { mu: m0, sigma: s0 });
        }
        None
    }

    /// Sample points strictly inside the working domain used by the checks.
    pub fn check_points(&self, n: usize) -> Vec<f64> {
        let g = crate::grid::auto_space(self.domain.lo, self.domain.hi, n + 2);
        g[1..=n].to_vec()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(d.lo < d.hi) || d.points < 16 {
            return Err(Error::InvalidSpec(format!(
                "working domain [{}, {}] with {} points is unusable",
                d.lo, d.hi, d.points
            )));
        }
        if d.lo < self.state.lo || d.hi > self.state.hi {
            return Err(Error::InvalidSpec("working domain leaves the state interval".into()));
        }
        for (kind, end, side) in [(self.lower, self.state.lo, "lower"), (self.upper, self.state.hi, "upper")] {
            if kind.is_state_point() && !end.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "{side} boundary is {} but the end point is infinite",
                    kind.name()
                )));
            }
        }
        if let Some(delta) = self.discount_floor {
            if !(delta > 0.0) {
                return Err(Error::InvalidSpec(format!("discount floor must be positive, got {delta}")));
            }
        }
        let samples = crate::grid::auto_space(d.lo, d.hi, 512);
        for &x in &samples {
            let s = self.sigma(x);
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidSpec(format!("volatility σ({x}) = {s} is not positive")));
            }
            let m = self.mu(x);
            if !m.is_finite() {
                return Err(Error::InvalidSpec(format!("drift μ({x}) = {m} is not finite")));
            }
            let r = self.r(x);
            if !r.is_finite() {
                return Err(Error::InvalidSpec(format!("discount r({x}) is not finite")));
            }
            if let Some(delta) = self.discount_floor {
                if r < delta {
                    return Err(Error::InvalidSpec(format!(
                        "discount r({x}) = {r} is below the declared floor {delta}"
                    )));
                }
            }
        }
        // Local integrability of (1 + |μ|)/σ² on consecutive sample cells.
        for w in samples.windows(64).step_by(63) {
            let f = |y: f64| (1.0 + self.mu(y).abs()) / self.sigma(y).powi(2);
            let v = crate::quadrature::integrate(f, w[0], w[63], 1e-8)
                .map_err(|e| Error::InvalidSpec(format!("integrability check failed on [{}, {}]: {e}", w[0], w[63])))?;
            if !v.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "(1+|μ|)/σ² is not integrable on [{}, {}]",
                    w[0], w[63]
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gbm_family_detected() {
        let s = DiffusionSpec::gbm(0.1, 0.2, 0.24);
        assert_eq!(s.family(), Some(Family::Gbm { mu: 0.1, sigma: 0.2 }));
        assert!(s.validate().is_ok());
        let s = DiffusionSpec::abm(0.0, 2f64.sqrt(), 1.0);
        assert!(matches!(s.family(), Some(Family::Abm { .. })));
        let mut s = DiffusionSpec::gbm(0.1, 0.2, 0.24);
        s.volatility = Coefficient::parse("0.2*x + 0.01*x^2").unwrap();
        assert_eq!(s.family(), None);
    }

    #[test]
    fn invalid_volatility_rejected() {
        let mut s = DiffusionSpec::gbm(0.1, 0.2, 0.24);
        s.volatility = Coefficient::parse("x - 1").unwrap();
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s = DiffusionSpec::gbm(0.1, 0.2, 0.24);
        s.discount = Discount::Constant(0.01);
        assert!(s.validate().is_err());
    }

    #[test]
    fn reflecting_needs_finite_end() {
        let s = DiffusionSpec::gbm(0.1, 0.2, 0.24).with_state(
            Interval::open(0.0, f64::INFINITY),
            BoundaryKind::Natural,
            BoundaryKind::Reflecting,
        );
        assert!(s.validate().is_err());
    }

    #[test]
    fn fd_fallback_derivative() {
        let c = Coefficient::from_fn(|x| x * x * x);
        assert!((c.derivative(2.0) - 12.0).abs() < 1e-8);
        let c = Coefficient::parse("0.2*x").unwrap();
        assert_eq!(c.derivative(5.0), 0.2);
    }
}
