//! Increasing and decreasing fundamental solutions ψ, φ of (A − r)u = 0.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::{BoundaryKind, DiffusionSpec, Discount, Family};
use crate::error::{Error, Result};
use crate::ode::{dopri5, rk4, Dopri5Options, Node};
use crate::payoff::Reward;
use crate::quadrature::gk15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    Psi,
    Phi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    #[default]
    Auto,
    ForceNumeric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    /// x^p
    Power(f64),
    /// e^{a x}
    Exp(f64),
}

/// Linear combination of elementary basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Combo(pub Vec<(f64, Basis)>);

impl Combo {
    pub fn single(b: Basis) -> Combo {
        Combo(vec![(1.0, b)])
    }

    /// n-th derivative at x.
    pub fn deriv(&self, x: f64, n: u32) -> f64 {
        self.0
            .iter()
            .map(|&(c, b)| {
                if c == 0.0 {
                    return 0.0;
                }
                match b {
                    Basis::Power(p) => {
                        let mut k = 1.0;
                        for j in 0..n {
                            k *= p - j as f64;
                        }
                        if k == 0.0 {
                            return 0.0;
                        }
                        let e = p - n as f64;
                        let v = if e.fract() == 0.0 && e.abs() <= 64.0 {
                            x.powi(e as i32)
                        } else {
                            x.powf(e)
                        };
                        c * k * v
                    }
                    Basis::Exp(a) => c * a.powi(n as i32) * (a * x).exp(),
                }
            })
            .sum()
    }

    fn add_scaled(&self, other: &Combo, s: f64) -> Combo {
        let mut v = self.0.clone();
        v.extend(other.0.iter().map(|&(c, b)| (c * s, b)));
        Combo(v)
    }
}

fn log_coord(spec: &DiffusionSpec) -> bool {
    spec.state.lo >= 0.0 && spec.domain.lo > 0.0
}

fn to_t(log: bool, x: f64) -> f64 {
    if log {
        x.ln()
    } else {
        x
    }
}

fn to_x(log: bool, t: f64) -> f64 {
    if log {
        t.exp()
    } else {
        t
    }
}

/// Right-hand side in (u, v) with v = x u_x in log coordinates, v = u_x otherwise.
fn rhs(spec: &DiffusionSpec, log: bool, t: f64, y: &[f64; 2]) -> [f64; 2] {
    let x = to_x(log, t);
    let s = spec.sigma(x);
    let k = 2.0 / (s * s);
    if log {
        [y[1], y[1] + k * x * (x * spec.r(x) * y[0] - spec.mu(x) * y[1])]
    } else {
        [y[1], k * (spec.r(x) * y[0] - spec.mu(x) * y[1])]
    }
}

/// One numerically integrated solution, stored in its direction of growth.
#[derive(Clone)]
struct Branch {
    nodes: Vec<Node<2>>,
    upward: bool,
    log: bool,
    log_norm: f64,
    sign: f64,
}

impl Branch {
    fn raw(&self, spec: &DiffusionSpec, x: f64) -> (f64, f64, f64) {
        let t = to_t(self.log, x);
        let k = if self.upward {
            let n = self.nodes.partition_point(|n| n.t <= t);
            if n == 0 {
                return (f64::NAN, f64::NAN, 0.0);
            }
            n - 1
        } else {
            let n = self.nodes.partition_point(|n| n.t >= t);
            if n == 0 {
                return (f64::NAN, f64::NAN, 0.0);
            }
            n - 1
        };
        let node = &self.nodes[k];
        let y = rk4(|t, y| rhs(spec, self.log, t, y), node.t, node.y, t, 0.005);
        (y[0], y[1], node.log_scale)
    }

    /// (u, u_x) normalized.
    fn eval(&self, spec: &DiffusionSpec, x: f64) -> (f64, f64) {
        let (u, v, ls) = self.raw(spec, x);
        let f = self.sign * (ls - self.log_norm).exp();
        let ux = if self.log { v / x } else { v };
        (f * u, f * ux)
    }
}

/// Scale density S′, normalized to 1 at the anchor.
#[derive(Clone)]
enum Scale {
    Closed(Combo),
    Numeric { table: Vec<(f64, f64)> },
}

impl Scale {
    fn build(spec: &DiffusionSpec, family: Option<Family>, anchor: f64, lo: f64, hi: f64) -> Scale {
        match family {
            Some(Family::Gbm { mu, sigma }) => {
                let p = -2.0 * mu / (sigma * sigma);
                Scale::Closed(Combo(vec![(anchor.powf(-p), Basis::Power(p))]))
            }
            Some(Family::Abm { mu, sigma }) => {
                let a = -2.0 * mu / (sigma * sigma);
                Scale::Closed(Combo(vec![((-a * anchor).exp(), Basis::Exp(a))]))
            }
            None => {
                let grid = crate::grid::auto_space(lo, hi, 4097);
                let f = |y: f64| -2.0 * spec.mu(y) / spec.sigma(y).powi(2);
                let mut table = Vec::with_capacity(grid.len());
                let mut acc = 0.0;
                table.push((grid[0], 0.0));
                for w in grid.windows(2) {
                    acc += gk15(&f, w[0], w[1]).0;
                    table.push((w[1], acc));
                }
                let mut s = Scale::Numeric { table };
                let off = s.ln(spec, anchor);
                if let Scale::Numeric { table } = &mut s {
                    for e in table.iter_mut() {
                        e.1 -= off;
                    }
                }
                s
            }
        }
    }

    fn ln(&self, spec: &DiffusionSpec, x: f64) -> f64 {
        match self {
            Scale::Closed(c) => c.deriv(x, 0).ln(),
            Scale::Numeric { table } => {
                let k = table.partition_point(|e| e.0 <= x).saturating_sub(1);
                let (xk, lk) = table[k];
                let f = |y: f64| -2.0 * spec.mu(y) / spec.sigma(y).powi(2);
                lk + gk15(&f, xk, x).0
            }
        }
    }

    fn value(&self, spec: &DiffusionSpec, x: f64) -> f64 {
        match self {
            Scale::Closed(c) => c.deriv(x, 0),
            Scale::Numeric { .. } => self.ln(spec, x).exp(),
        }
    }
}

#[derive(Clone)]
enum Kind {
    Closed { psi: Combo, phi: Combo },
    Numeric { psi: Branch, phi: Branch },
    /// ψ̂ = ψ′ and φ̂ = −φ′ of a base pair.
    Derived { base: FundamentalPair },
}

struct Inner {
    kind: Kind,
    source: Source,
    spec: DiffusionSpec,
    scale: Scale,
    anchor: f64,
    wronskian: f64,
    exponents: Option<(f64, f64)>,
}

/// The pair (ψ, φ) together with scale and speed densities.
#[derive(Clone)]
pub struct FundamentalPair {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for FundamentalPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FundamentalPair")
            .field("source", &self.inner.source)
            .field("anchor", &self.inner.anchor)
            .field("wronskian", &self.inner.wronskian)
            .field("exponents", &self.inner.exponents)
            .finish()
    }
}

/// Root of a quadratic, snapped to a nearby small-denominator rational when
/// the quadratic vanishes there to rounding accuracy.
fn snap_root(g: f64, q: impl Fn(f64) -> (f64, f64)) -> f64 {
    for den in 1..=12 {
        let cand = (g * den as f64).round() / den as f64;
        if (cand - g).abs() < 1e-9 * (1.0 + g.abs()) {
            let (val, scale) = q(cand);
            if val.abs() <= 1e-13 * scale {
                return cand;
            }
        }
    }
    g
}

/// Characteristic exponents (γ₊, γ₋) of ½σ²γ(γ−1) + μγ − r = 0.
pub fn gbm_exponents(mu: f64, sigma: f64, r: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let b = mu - 0.5 * s2;
    let d = (b * b + 2.0 * s2 * r).sqrt();
    let q = |g: f64| {
        let terms = [0.5 * s2 * g * g, -0.5 * s2 * g, mu * g, -r];
        (terms.iter().sum::<f64>(), terms.iter().map(|t| t.abs()).sum::<f64>())
    };
    // The root of larger magnitude is computed directly; the other from the product of roots.
    let (gp, gm) = if b <= 0.0 {
        let gp = (-b + d) / s2;
        (gp, -2.0 * r / (s2 * gp))
    } else {
        let gm = (-b - d) / s2;
        (-2.0 * r / (s2 * gm), gm)
    };
    (snap_root(gp, q), snap_root(gm, q))
}

pub fn solve_fundamental(spec: &DiffusionSpec) -> Result<FundamentalPair> {
    solve_fundamental_with(spec, SolveMode::Auto)
}

pub fn solve_fundamental_with(spec: &DiffusionSpec, mode: SolveMode) -> Result<FundamentalPair> {
    spec.validate()?;
    let anchor = spec.domain.anchor();
    let family = spec.family();
    let (lo_ext, hi_ext) = extended_range(spec);
    let scale = Scale::build(spec, family, anchor, lo_ext, hi_ext);
    let (kind, source, exponents) = match (family, mode) {
        (Some(fam), SolveMode::Auto) => {
            let r = spec.discount.constant().expect("family implies constant discount");
            let (b_psi, b_phi, exps) = match fam {
                Family::Gbm { mu, sigma } => {
                    let (gp, gm) = gbm_exponents(mu, sigma, r);
                    (Basis::Power(gp), Basis::Power(gm), (gp, gm))
                }
                Family::Abm { mu, sigma } => {
                    let s2 = sigma * sigma;
                    let d = (mu * mu + 2.0 * s2 * r).sqrt();
                    let (ap, am) = ((-mu + d) / s2, (-mu - d) / s2);
                    (Basis::Exp(ap), Basis::Exp(am), (ap, am))
                }
            };
            let psi0 = Combo::single(b_psi);
            let phi0 = Combo::single(b_phi);
            let (mut psi, mut phi) = (psi0.clone(), phi0.clone());
            let a = spec.state.lo;
            if a.is_finite() && !(log_coord(spec) && a == 0.0) {
                let c = match spec.lower {
                    BoundaryKind::Reflecting => -psi0.deriv(a, 1) / phi0.deriv(a, 1),
                    BoundaryKind::Killing | BoundaryKind::Absorbing | BoundaryKind::Exit => {
                        -psi0.deriv(a, 0) / phi0.deriv(a, 0)
                    }
                    _ => 0.0,
                };
                if c != 0.0 {
                    psi = psi0.add_scaled(&phi0, c);
                }
            }
            let b = spec.state.hi;
            if b.is_finite() {
                let c = match spec.upper {
                    BoundaryKind::Reflecting => -phi0.deriv(b, 1) / psi0.deriv(b, 1),
                    BoundaryKind::Killing | BoundaryKind::Absorbing | BoundaryKind::Exit => {
                        -phi0.deriv(b, 0) / psi0.deriv(b, 0)
                    }
                    _ => 0.0,
                };
                if c != 0.0 {
                    phi = phi0.add_scaled(&psi0, c);
                }
            }
            let (np, nf) = (psi.deriv(anchor, 0), phi.deriv(anchor, 0));
            let psi = Combo(psi.0.into_iter().map(|(c, b)| (c / np, b)).collect());
            let phi = Combo(phi.0.into_iter().map(|(c, b)| (c / nf, b)).collect());
            (Kind::Closed { psi, phi }, Source::ClosedForm, Some(exps))
        }
        _ => {
            let (psi, phi) = numeric_branches(spec, anchor, lo_ext, hi_ext)?;
            (Kind::Numeric { psi, phi }, Source::Numeric, None)
        }
    };
    let mut inner = Inner {
        kind,
        source,
        spec: spec.clone(),
        scale,
        anchor,
        wronskian: f64::NAN,
        exponents,
    };
    let pair = {
        let tmp = FundamentalPair { inner: Arc::new(clone_inner(&inner)) };
        inner.wronskian = tmp.wronskian_at(anchor);
        FundamentalPair { inner: Arc::new(inner) }
    };
    pair.check_monotone()?;
    Ok(pair)
}

fn clone_inner(i: &Inner) -> Inner {
    Inner {
        kind: i.kind.clone(),
        source: i.source,
        spec: i.spec.clone(),
        scale: i.scale.clone(),
        anchor: i.anchor,
        wronskian: i.wronskian,
        exponents: i.exponents,
    }
}

/// Range covered by the numeric branches: the working domain widened
/// far toward both boundaries, clipped to the state interval.
fn extended_range(spec: &DiffusionSpec) -> (f64, f64) {
    let d = spec.domain;
    if log_coord(spec) {
        let lo = (d.lo * 1e-5).max(spec.state.lo);
        let hi = (d.hi * 1e5).min(spec.state.hi);
        (lo, hi)
    } else {
        let w = d.hi - d.lo;
        ((d.lo - w).max(spec.state.lo), (d.hi + w).min(spec.state.hi))
    }
}

fn initial_condition(kind: BoundaryKind, lower: bool) -> [f64; 2] {
    match kind {
        BoundaryKind::Killing | BoundaryKind::Absorbing | BoundaryKind::Exit => {
            if lower {
                [0.0, 1.0]
            } else {
                [0.0, -1.0]
            }
        }
        _ => [1.0, 0.0],
    }
}

fn numeric_branches(spec: &DiffusionSpec, anchor: f64, lo: f64, hi: f64) -> Result<(Branch, Branch)> {
    let log = log_coord(spec);
    let opts = Dopri5Options::default();
    let f = |t: f64, y: &[f64; 2]| rhs(spec, log, t, y);
    let (t_lo, t_hi) = (to_t(log, lo), to_t(log, hi));
    let up = dopri5(f, t_lo, initial_condition(spec.lower, true), t_hi, opts)?;
    let down = dopri5(f, t_hi, initial_condition(spec.upper, false), t_lo, opts)?;
    let mut psi = Branch {
        nodes: up,
        upward: true,
        log,
        log_norm: 0.0,
        sign: 1.0,
    };
    let mut phi = Branch {
        nodes: down,
        upward: false,
        log,
        log_norm: 0.0,
        sign: 1.0,
    };
    for b in [&mut psi, &mut phi] {
        let (u, _, ls) = b.raw(spec, anchor);
        if !(u.is_finite() && u != 0.0) {
            return Err(Error::NonConvergence(format!("fundamental solution vanishes at the anchor {anchor}")));
        }
        b.sign = u.signum();
        b.log_norm = ls + u.abs().ln();
    }
    Ok((psi, phi))
}

impl FundamentalPair {
    pub fn source(&self) -> Source {
        self.inner.source
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.inner.spec
    }

    pub fn anchor(&self) -> f64 {
        self.inner.anchor
    }

    /// Characteristic exponents for closed-form families.
    pub fn exponents(&self) -> Option<(f64, f64)> {
        self.inner.exponents
    }

    /// Wronskian constant B = (ψ′φ − ψφ′)/S′.
    pub fn wronskian(&self) -> f64 {
        self.inner.wronskian
    }

    /// Value and first two derivatives.
    pub fn derivs(&self, which: Which, x: f64) -> [f64; 3] {
        let spec = &self.inner.spec;
        match &self.inner.kind {
            Kind::Closed { psi, phi } => {
                let c = if which == Which::Psi { psi } else { phi };
                [c.deriv(x, 0), c.deriv(x, 1), c.deriv(x, 2)]
            }
            Kind::Numeric { psi, phi } => {
                let b = if which == Which::Psi { psi } else { phi };
                let (u, du) = b.eval(spec, x);
                let s = spec.sigma(x);
                [u, du, 2.0 / (s * s) * (spec.r(x) * u - spec.mu(x) * du)]
            }
            Kind::Derived { base } => {
                let sign = if which == Which::Psi { 1.0 } else { -1.0 };
                let d = base.derivs(which, x);
                [sign * d[1], sign * d[2], sign * base.third(which, x)]
            }
        }
    }

    /// Third derivative, exact from the ODE for numeric pairs.
    pub fn third(&self, which: Which, x: f64) -> f64 {
        match &self.inner.kind {
            Kind::Closed { psi, phi } => (if which == Which::Psi { psi } else { phi }).deriv(x, 3),
            Kind::Numeric { .. } => {
                let spec = &self.inner.spec;
                let [u, du, d2u] = self.derivs(which, x);
                let s = spec.sigma(x);
                let (r, mu) = (spec.r(x), spec.mu(x));
                let k = 2.0 / (s * s);
                k * (spec.discount.derivative(x) * u + r * du - spec.mu_prime(x) * du - mu * d2u)
                    - 2.0 * k * spec.sigma_prime(x) / s * (r * u - mu * du)
            }
            Kind::Derived { .. } => {
                let h = 1e-4 * (1.0 + x.abs());
                let h = if x - h <= 0.0 && self.inner.spec.state.lo >= 0.0 { 0.25 * x } else { h };
                (self.derivs(which, x + h)[2] - self.derivs(which, x - h)[2]) / (2.0 * h)
            }
        }
    }

    #[inline]
    pub fn psi(&self, x: f64) -> f64 {
        self.value(Which::Psi, x)
    }

    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        self.value(Which::Phi, x)
    }

    pub fn psi_prime(&self, x: f64) -> f64 {
        self.first(Which::Psi, x)
    }

    pub fn phi_prime(&self, x: f64) -> f64 {
        self.first(Which::Phi, x)
    }

    pub fn psi_second(&self, x: f64) -> f64 {
        self.derivs(Which::Psi, x)[2]
    }

    pub fn phi_second(&self, x: f64) -> f64 {
        self.derivs(Which::Phi, x)[2]
    }

    pub fn value(&self, which: Which, x: f64) -> f64 {
        match &self.inner.kind {
            Kind::Closed { psi, phi } => (if which == Which::Psi { psi } else { phi }).deriv(x, 0),
            _ => self.derivs(which, x)[0],
        }
    }

    pub fn first(&self, which: Which, x: f64) -> f64 {
        match &self.inner.kind {
            Kind::Closed { psi, phi } => (if which == Which::Psi { psi } else { phi }).deriv(x, 1),
            _ => self.derivs(which, x)[1],
        }
    }

    pub fn scale_density(&self, x: f64) -> f64 {
        self.inner.scale.value(&self.inner.spec, x)
    }

    /// m′ = 2 / (σ² S′).
    pub fn speed_density(&self, x: f64) -> f64 {
        let s = self.inner.spec.sigma(x);
        2.0 / (s * s * self.scale_density(x))
    }

    pub fn wronskian_at(&self, x: f64) -> f64 {
        let [p, dp, _] = self.derivs(Which::Psi, x);
        let [f, df, _] = self.derivs(Which::Phi, x);
        (dp * f - p * df) / self.scale_density(x)
    }

    /// Relative residual of (A − r)u at x.
    pub fn ode_residual(&self, which: Which, x: f64) -> f64 {
        let spec = &self.inner.spec;
        let [u, du, d2u_exact] = self.derivs(which, x);
        let d2u = match self.inner.source {
            Source::ClosedForm => d2u_exact,
            Source::Numeric => {
                let h = if log_coord(spec) { 1e-4 * x } else { 1e-4 * (1.0 + x.abs()) };
                (self.first(which, x + h) - self.first(which, x - h)) / (2.0 * h)
            }
        };
        let r = spec.r(x);
        (spec.generator(x, u, du, d2u)).abs() / ((r * u).abs() + 1e-300)
    }

    /// (g(z)/ψ(z))ψ(x) for x ≤ z, (g(z)/φ(z))φ(x) otherwise.
    pub fn hitting_value(&self, x: f64, z: f64, g: &(impl Reward + ?Sized)) -> f64 {
        if x == z {
            return g.value(z);
        }
        let w = if x < z { Which::Psi } else { Which::Phi };
        g.value(z) / self.value(w, z) * self.value(w, x)
    }

    /// Value of stopping at the first exit from (a, b).
    pub fn two_point_value(&self, x: f64, a: f64, b: f64, g: &(impl Reward + ?Sized)) -> Result<f64> {
        if !(a < b) {
            return Err(Error::DegenerateBracket { a, b });
        }
        if x <= a || x >= b {
            return Ok(g.value(x));
        }
        let (pa, pb, fa, fb) = (self.psi(a), self.psi(b), self.phi(a), self.phi(b));
        let d = pb * fa - fb * pa;
        if !(d.is_finite() && d != 0.0) {
            return Err(Error::DegenerateBracket { a, b });
        }
        let (ga, gb) = (g.value(a), g.value(b));
        Ok((fa * gb - fb * ga) / d * self.psi(x) + (pb * ga - pa * gb) / d * self.phi(x))
    }

    /// Pair (ψ′, −φ′) viewed as fundamental solutions of `hat_spec`.
    pub fn derived(&self, hat_spec: &DiffusionSpec) -> FundamentalPair {
        let anchor = self.inner.anchor;
        let (lo, hi) = extended_range(hat_spec);
        let scale = Scale::build(hat_spec, hat_spec.family(), anchor, lo, hi);
        let mut inner = Inner {
            kind: Kind::Derived { base: self.clone() },
            source: self.inner.source,
            spec: hat_spec.clone(),
            scale,
            anchor,
            wronskian: f64::NAN,
            exponents: self.inner.exponents.map(|(a, b)| (a - 1.0, b - 1.0)),
        };
        let tmp = FundamentalPair { inner: Arc::new(clone_inner(&inner)) };
        inner.wronskian = tmp.wronskian_at(anchor);
        FundamentalPair { inner: Arc::new(inner) }
    }

    fn check_monotone(&self) -> Result<()> {
        let d = self.inner.spec.domain;
        let grid = crate::grid::auto_space(d.lo, d.hi, 257);
        let mut prev: Option<(f64, f64)> = None;
        for &x in &grid {
            let (p, f) = (self.psi(x), self.phi(x));
            if !(p > 0.0 && f > 0.0 && p.is_finite() && f.is_finite()) {
                return Err(Error::NonConvergence(format!(
                    "fundamental solutions not positive at x = {x}: ψ = {p:e}, φ = {f:e}"
                )));
            }
            if let Some((pp, pf)) = prev {
                if p < pp * (1.0 - 1e-10) || f > pf * (1.0 + 1e-10) {
                    return Err(Error::NonConvergence(format!("monotonicity fails near x = {x}")));
                }
            }
            prev = Some((p, f));
        }
        Ok(())
    }
}

/// Discount of the associated diffusion, kept constant whenever possible.
pub fn shifted_discount(spec: &DiffusionSpec) -> Discount {
    match (spec.discount.constant(), spec.drift.as_affine()) {
        (Some(r), Some((_, m1))) => Discount::Constant(r - m1),
        _ => {
            let s = spec.clone();
            Discount::State(crate::diffusion::Coefficient::from_fn(move |x| s.r(x) - s.mu_prime(x)))
        }
    }
}
