//! The associated diffusion with drift μ + σσ′ and discount r − μ′, and the
//! derivative link W′ = V̂ between one-sided control and its stopping problem.

use crate::control::{self, ControlOptions, ControlSolution, Direction};
use crate::diffusion::{BoundaryKind, Coefficient, DiffusionSpec};
use crate::error::{Error, Result};
use crate::fundamental::{shifted_discount, solve_fundamental, FundamentalPair, Which};
use crate::montecarlo::{estimate_discount_functional, estimate_discounted_state, Estimate, SimConfig};
use crate::payoff::Reward;
use crate::quadrature::{integrate, Tail};
use crate::stopping::{self, SolveOptions, StoppingSolution};

#[derive(Clone)]
pub struct HatProblem {
    pub spec: DiffusionSpec,
    pub hat_spec: DiffusionSpec,
    pub pair: FundamentalPair,
    /// (ψ′, −φ′) as fundamental solutions of the associated diffusion.
    pub hat_pair: FundamentalPair,
    /// Largest relative residual of the basis in the associated equation.
    pub residual: f64,
    pub residual_ok: bool,
}

pub fn build_hat(spec: &DiffusionSpec) -> Result<HatProblem> {
    spec.validate()?;
    for x in spec.check_points(32) {
        let (m, s) = (spec.mu_prime(x), spec.sigma_prime(x));
        if !(m.is_finite() && s.is_finite()) {
            return Err(Error::DerivativeUnavailable(format!("drift or volatility derivative is not finite at {x}")));
        }
    }
    let drift = match (spec.drift.as_affine(), spec.volatility.as_affine()) {
        (Some((m0, m1)), Some((s0, s1))) => Coefficient::affine(m0 + s0 * s1, m1 + s1 * s1),
        _ => {
            let (a, b) = (spec.clone(), spec.clone());
            Coefficient::from_fn_with_derivative(
                move |x| a.mu(x) + a.sigma(x) * a.sigma_prime(x),
                move |x| {
                    let h = crate::diffusion::fd_step(x);
                    let f = |y: f64| b.mu(y) + b.sigma(y) * b.sigma_prime(y);
                    (f(x + h) - f(x - h)) / (2.0 * h)
                },
            )
        }
    };
    let discount = shifted_discount(spec);
    let floor = spec
        .check_points(256)
        .into_iter()
        .map(|x| discount.value(x))
        .fold(f64::INFINITY, f64::min);
    let mut hat_spec = DiffusionSpec::new(drift, spec.volatility.clone(), discount);
    hat_spec.lower = spec.lower;
    hat_spec.upper = spec.upper;
    hat_spec.state = spec.state;
    hat_spec.domain = spec.domain;
    hat_spec.discount_floor = (floor > 0.0).then_some(floor);
    let pair = solve_fundamental(spec)?;
    let hat_pair = pair.derived(&hat_spec);
    let residual = hat_spec
        .check_points(64)
        .into_iter()
        .flat_map(|x| [hat_pair.ode_residual(Which::Psi, x), hat_pair.ode_residual(Which::Phi, x)])
        .fold(0.0f64, |a, r| if r.is_nan() { f64::INFINITY } else { a.max(r) });
    Ok(HatProblem {
        spec: spec.clone(),
        hat_spec,
        pair,
        hat_pair,
        residual,
        residual_ok: residual < 1e-6,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceCheck {
    pub x: f64,
    pub b: f64,
    pub analytic: f64,
    pub mc: Option<Estimate>,
}

impl LaplaceCheck {
    pub fn agrees(&self, k: f64) -> Option<bool> {
        self.mc.map(|e| e.within(self.analytic, k))
    }
}

/// E_x[exp(−∫₀^{τ_b}(r − μ′)(X̂) ds)] against ψ′(x)/ψ′(b) or φ′(x)/φ′(b).
pub fn laplace_identity_check(hat: &HatProblem, x: f64, b: f64, cfg: Option<&SimConfig>) -> Result<LaplaceCheck> {
    for p in [x, b] {
        if !hat.spec.state.contains(p) || p == hat.spec.state.lo || p == hat.spec.state.hi {
            return Err(Error::Validation(format!("{p} is not an interior state")));
        }
    }
    let analytic = if x == b {
        1.0
    } else if x < b {
        hat.pair.psi_prime(x) / hat.pair.psi_prime(b)
    } else {
        hat.pair.phi_prime(x) / hat.pair.phi_prime(b)
    };
    let mc = cfg
        .map(|c| estimate_discount_functional(&hat.hat_spec, x, b, c))
        .transpose()?;
    Ok(LaplaceCheck { x, b, analytic, mc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flag {
    pub holds: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityPoint {
    pub x: f64,
    pub which: Which,
    /// σ²u″/S′
    pub lhs: f64,
    /// 2r∫u(θ(x) − θ(y))m′ or its mirror for φ.
    pub rhs: f64,
}

impl IdentityPoint {
    pub fn rel(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(self.rhs.abs()).max(1e-300)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub psi_convex: Flag,
    pub phi_convex: Flag,
    pub concave_near_lower: bool,
    pub concave_near_upper: bool,
    pub conditions: Vec<Condition>,
    /// Empty when the discount is state dependent.
    pub identity: Vec<IdentityPoint>,
    pub identity_ok: bool,
}

/// Improper integral over doubling blocks. Once the blocks shrink
/// geometrically, or the integrand leaves the tabulated range, the rest is
/// extrapolated as a geometric series.
fn geometric_tail(f: impl Fn(f64) -> f64, a: f64, tail: Tail) -> Result<f64> {
    let mut sum = 0.0;
    let mut edge = a;
    let mut prev: Option<f64> = None;
    for _ in 0..200 {
        let (p, q) = match tail {
            Tail::ToZero => (edge * 0.5, edge),
            Tail::ToInfinity => (edge, edge + edge.abs().max(1.0)),
            Tail::ToNegInfinity => (edge - edge.abs().max(1.0), edge),
        };
        let next = if tail == Tail::ToInfinity { q } else { p };
        if !f(next).is_finite() {
            break;
        }
        let block = integrate(&f, p, q, 1e-11)?;
        sum += block;
        if block.abs() <= 1e-13 * sum.abs() {
            return Ok(sum);
        }
        if let Some(b0) = prev {
            let ratio = block / b0;
            if ratio.abs() < 0.9 && block.abs() <= 1e-7 * sum.abs() {
                return Ok(sum + block * ratio / (1.0 - ratio));
            }
        }
        prev = Some(block);
        edge = next;
    }
    match prev {
        Some(_) if sum.is_finite() => Ok(sum),
        _ => Err(Error::QuadratureFailure(format!("tail integral from {a} ({tail:?}) failed"))),
    }
}

fn unattainable(k: BoundaryKind) -> bool {
    matches!(k, BoundaryKind::Natural | BoundaryKind::Entrance)
}

/// Sufficient conditions for convexity of ψ and φ, second-derivative
/// sampling, and the integral identities for ψ″ and φ″.
pub fn convexity_report(spec: &DiffusionSpec, pair: &FundamentalPair, transversality: &SimConfig) -> Result<ConvexityReport> {
    let pts = spec.check_points(128);
    let theta = |x: f64| spec.r(x) * x - spec.mu(x);
    let r_min = pts.iter().map(|&x| spec.r(x) - spec.mu_prime(x)).fold(f64::INFINITY, f64::min);
    let mu_min = pts.iter().map(|&x| spec.mu(x)).fold(f64::INFINITY, f64::min);
    let x0 = spec.domain.anchor();
    let r_rate = spec.discount.constant().unwrap_or_else(|| pts.iter().map(|&x| spec.r(x)).fold(f64::INFINITY, f64::min));
    let tv = if r_rate > 0.0 {
        let est = estimate_discounted_state(spec, x0, 50.0 / r_rate, transversality)?;
        Some(est)
    } else {
        None
    };
    let trans = tv.is_some_and(|e| e.mean < 1e-3 * x0.abs().max(1.0));
    let theta_lo = theta(spec.domain.lo);
    let mut conditions = vec![
        Condition {
            name: "transversality",
            holds: trans,
            detail: match tv {
                Some(e) => format!("E[exp(-rT)|X_T|] = {:.3e} ± {:.1e} at T = 50/r", e.mean, e.std_error),
                None => "discount rate is not positive".into(),
            },
        },
        Condition {
            name: "r > mu' everywhere",
            holds: r_min > 0.0,
            detail: format!("smallest sampled r - mu' = {r_min:.6}"),
        },
        Condition {
            name: "mu >= 0 everywhere",
            holds: mu_min >= 0.0,
            detail: format!("smallest sampled mu = {mu_min:.6}"),
        },
        Condition {
            name: "lower boundary unattainable",
            holds: unattainable(spec.lower),
            detail: spec.lower.name().into(),
        },
        Condition {
            name: "upper boundary unattainable",
            holds: unattainable(spec.upper),
            detail: spec.upper.name().into(),
        },
        Condition {
            name: "r x - mu(x) >= 0 near the lower boundary",
            holds: theta_lo >= 0.0,
            detail: format!("{theta_lo:.6e} at {}", spec.domain.lo),
        },
    ];
    let sufficient_psi = trans && r_min > 0.0 && (unattainable(spec.lower) || theta_lo >= 0.0);
    let sufficient_phi = mu_min >= 0.0 || (trans && unattainable(spec.upper) && r_min > 0.0);
    let psi2: Vec<f64> = pts.iter().map(|&x| pair.psi_second(x)).collect();
    let phi2: Vec<f64> = pts.iter().map(|&x| pair.phi_second(x)).collect();
    let flag = |sufficient: bool, sampled: &[f64], part: &str| {
        let convex = sampled.iter().all(|&v| v >= 0.0);
        let reason = match (sufficient, convex) {
            (true, true) => format!("sufficient conditions ({part}) hold; sampled second derivative is non-negative"),
            (false, true) => "sampled second derivative is non-negative; sufficient conditions not met".to_string(),
            (true, false) => format!("sufficient conditions ({part}) hold but sampling finds a negative second derivative"),
            (false, false) => "sampled second derivative changes sign".to_string(),
        };
        Flag { holds: convex, reason }
    };
    let psi_convex = flag(sufficient_psi, &psi2, "A");
    let phi_convex = flag(sufficient_phi, &phi2, "B");
    let edge = 4.min(pts.len());
    let concave_near_lower = psi2[..edge].iter().all(|&v| v < 0.0);
    let concave_near_upper = phi2[pts.len() - edge..].iter().all(|&v| v < 0.0);
    if concave_near_lower || concave_near_upper {
        let near = |xs: &[f64]| xs.iter().all(|&x| spec.r(x) - spec.mu_prime(x) < 0.0);
        conditions.push(Condition {
            name: "r - mu' < 0 where concave",
            holds: (!concave_near_lower || near(&pts[..edge])) && (!concave_near_upper || near(&pts[pts.len() - edge..])),
            detail: "required for the hitting-time identity in the concave case".into(),
        });
    }

    let mut identity = Vec::new();
    if let Some(r) = spec.discount.constant() {
        let m = |y: f64| pair.speed_density(y);
        let lo = spec.state.lo;
        let hi = spec.state.hi;
        for &x in spec.check_points(9).iter() {
            let s2 = spec.sigma(x).powi(2);
            let lhs = s2 * pair.psi_second(x) / pair.scale_density(x);
            let f = |y: f64| pair.psi(y) * (theta(x) - theta(y)) * m(y);
            let body = integrate(f, spec.domain.lo, x, 1e-11)?;
            let head = if lo == 0.0 && spec.domain.is_log() {
                geometric_tail(f, spec.domain.lo, Tail::ToZero)?
            } else if lo.is_finite() {
                integrate(f, lo, spec.domain.lo, 1e-11)?
            } else {
                geometric_tail(f, spec.domain.lo, Tail::ToNegInfinity)?
            };
            identity.push(IdentityPoint {
                x,
                which: Which::Psi,
                lhs,
                rhs: 2.0 * r * (head + body),
            });
            let lhs = s2 * pair.phi_second(x) / pair.scale_density(x);
            let f = |y: f64| pair.phi(y) * (theta(y) - theta(x)) * m(y);
            let body = integrate(f, x, spec.domain.hi, 1e-11)?;
            let tail = if hi.is_finite() {
                integrate(f, spec.domain.hi, hi, 1e-11)?
            } else {
                geometric_tail(f, spec.domain.hi, Tail::ToInfinity)?
            };
            identity.push(IdentityPoint {
                x,
                which: Which::Phi,
                lhs,
                rhs: 2.0 * r * (body + tail),
            });
        }
    }
    let identity_ok = identity.iter().all(|p| p.rel() < 1e-4);
    Ok(ConvexityReport {
        psi_convex,
        phi_convex,
        concave_near_lower,
        concave_near_upper,
        conditions,
        identity,
        identity_ok,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkCheck {
    pub region: (f64, f64),
    pub points: usize,
    /// max |W′ − V̂| / (1 + |V̂|)
    pub max_rel: f64,
    pub holds: bool,
}

#[derive(Clone)]
pub struct ConnectionReport {
    pub hat: HatProblem,
    pub hat_stopping: StoppingSolution,
    pub down: ControlSolution,
    pub up: ControlSolution,
    pub z_prime: f64,
    pub y_prime: f64,
    pub down_link: Option<LinkCheck>,
    pub up_link: Option<LinkCheck>,
    /// The stopping and control maximizer sets coincide.
    pub sets_agree: bool,
    /// Necessary condition for W_Z′ = V̂ everywhere: y′* = ∞.
    pub down_global_possible: bool,
    /// Necessary condition for W_Y′ = V̂ everywhere: z′* = 0.
    pub up_global_possible: bool,
    pub local: bool,
    pub split: Option<f64>,
    pub notes: Vec<String>,
}

impl ConnectionReport {
    pub fn v_hat(&self, x: f64) -> Option<f64> {
        self.hat_stopping.value(x)
    }
}

fn link(
    sol: &ControlSolution,
    hat: &StoppingSolution,
    lo: f64,
    hi: f64,
    spec: &DiffusionSpec,
) -> Option<LinkCheck> {
    let (a, b) = (lo.max(spec.domain.lo), hi.min(spec.domain.hi));
    if !(a < b) {
        return None;
    }
    let xs = crate::grid::auto_space(a, b, 201);
    let mut worst = 0.0f64;
    let mut n = 0;
    for &x in &xs[..xs.len() - 1] {
        let (Some(w), Some(v)) = (sol.slope_magnitude(x), hat.value(x)) else {
            continue;
        };
        worst = worst.max((w - v).abs() / (1.0 + v.abs()));
        n += 1;
    }
    (n > 0).then_some(LinkCheck {
        region: (lo, hi),
        points: n,
        max_rel: worst,
        holds: worst < 1e-9,
    })
}

pub fn verify_connection(g: &dyn Reward, spec: &DiffusionSpec, opts: ControlOptions) -> Result<ConnectionReport> {
    let hat = build_hat(spec)?;
    let mut notes = Vec::new();
    if !hat.residual_ok {
        notes.push(format!(
            "(psi', -phi') residual {:.2e} in the associated equation; the hitting-time identity is not guaranteed",
            hat.residual
        ));
    }
    let hat_stopping = stopping::solve_with_pair(g, &hat.hat_pair, SolveOptions { tol: opts.tol })?;
    let down = control::solve_with_pair(g, &hat.pair, Direction::Down, opts)?;
    let up = control::solve_with_pair(g, &hat.pair, Direction::Up, opts)?;
    let (z, y) = (down.extremal, up.extremal);
    let sets_agree = hat_stopping.m.components == down.set.components && hat_stopping.n.components == up.set.components;
    let lo = spec.state.lo;
    let hi = spec.state.hi;
    let down_link = link(&down, &hat_stopping, lo, z, spec);
    let up_link = link(&up, &hat_stopping, y, hi, spec);
    let down_global_possible = y == hi;
    let up_global_possible = z == lo;
    let local = !down_global_possible && !up_global_possible;
    let split = (local && (z - y).abs() <= 1e-9 * (1.0 + z.abs())).then_some(z);
    if local {
        notes.push(match split {
            Some(s) => format!("the link is local: downward control below {s}, upward control above"),
            None => format!("the link is local: downward control below {z}, upward control above {y}"),
        });
    }
    Ok(ConnectionReport {
        hat,
        hat_stopping,
        down,
        up,
        z_prime: z,
        y_prime: y,
        down_link,
        up_link,
        sets_agree,
        down_global_possible,
        up_global_possible,
        local,
        split,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::example;
    use crate::fundamental::{solve_fundamental_with, SolveMode};
    use crate::diffusion::Discount;
    use crate::payoff::Interval;

    fn gbm() -> DiffusionSpec {
        DiffusionSpec::gbm(0.1, 0.2, 0.24)
    }

    #[test]
    fn gbm_hat_is_gbm() {
        let h = build_hat(&gbm()).unwrap();
        assert_eq!(h.hat_spec.drift.as_affine(), Some((0.0, 0.14)));
        assert!((h.hat_spec.discount.constant().unwrap() - 0.14).abs() < 1e-15);
        assert!(h.residual_ok, "{}", h.residual);
        for x in [0.3, 1.0, 7.0] {
            assert!((h.hat_pair.psi(x) - 2.0 * x).abs() < 1e-12 * x);
            assert!((h.hat_pair.phi(x) - 6.0 * x.powi(-7)).abs() < 1e-12 * x.powi(-7));
        }
    }

    #[test]
    fn constant_coefficients_are_self_associated() {
        let s = DiffusionSpec::abm(0.3, 0.5, 0.2);
        let h = build_hat(&s).unwrap();
        assert_eq!(h.hat_spec.drift.as_affine(), Some((0.3, 0.0)));
        assert_eq!(h.hat_spec.discount.constant(), Some(0.2));
    }

    #[test]
    fn numeric_basis_residual() {
        let s = DiffusionSpec::new(
            Coefficient::parse("0.1*x").unwrap(),
            Coefficient::parse("0.2*x + 0.05*x^2/(1 + x)").unwrap(),
            Discount::Constant(0.24),
        )
        .with_domain(0.05, 20.0, 2048);
        let h = build_hat(&s).unwrap();
        assert!(h.residual < 1e-5, "{}", h.residual);
    }

    #[test]
    fn laplace_analytic_values() {
        let h = build_hat(&gbm()).unwrap();
        assert_eq!(laplace_identity_check(&h, 1.0, 2.0, None).unwrap().analytic, 0.5);
        assert_eq!(laplace_identity_check(&h, 2.0, 2.0, None).unwrap().analytic, 1.0);
        assert!((laplace_identity_check(&h, 4.0, 2.0, None).unwrap().analytic - 0.0078125).abs() < 1e-15);
    }

    #[test]
    fn laplace_against_simulation() {
        let h = build_hat(&gbm()).unwrap();
        let cfg = SimConfig::new(1e-2, 3000, 3);
        let c = laplace_identity_check(&h, 1.0, 2.0, Some(&cfg)).unwrap();
        assert!(c.agrees(3.0).unwrap(), "{c:?}");
    }

    #[test]
    fn gbm_convexity() {
        let spec = gbm();
        let pair = solve_fundamental(&spec).unwrap();
        let cfg = SimConfig::new(1e-2, 1000, 5);
        let r = convexity_report(&spec, &pair, &cfg).unwrap();
        assert!(r.psi_convex.holds && r.phi_convex.holds, "{r:?}");
        assert!(r.conditions.iter().all(|c| c.holds), "{:?}", r.conditions);
        assert!(r.identity_ok, "{:?}", r.identity);
        assert!(!r.concave_near_lower && !r.concave_near_upper);
    }

    #[test]
    fn concave_near_lower_identity() {
        // μ′(0) = 0.5 exceeds r = 0.1, while μ′ vanishes at infinity.
        let spec = DiffusionSpec::new(
            Coefficient::parse("0.5*x/(1 + 4*x)").unwrap(),
            Coefficient::parse("0.3*x").unwrap(),
            Discount::Constant(0.1),
        )
        .with_domain(1e-3, 1e3, 4096);
        let pair = solve_fundamental_with(&spec, SolveMode::Auto).unwrap();
        let cfg = SimConfig::new(5e-2, 200, 5);
        let r = convexity_report(&spec, &pair, &cfg).unwrap();
        assert!(r.concave_near_lower, "{r:?}");
        assert!(r.identity_ok, "{:?}", r.identity.iter().map(|p| p.rel()).collect::<Vec<_>>());
    }

    #[test]
    fn local_link() {
        let g = example(11).unwrap().problem().unwrap().payoff;
        let r = verify_connection(&g, &gbm(), ControlOptions::default()).unwrap();
        assert!((r.down.set.sup_value - 0.5).abs() < 1e-10);
        assert!((r.up.set.sup_value - 1.0 / 6.0).abs() < 1e-10);
        for x in [0.1, 0.5, 1.0] {
            assert!((r.v_hat(x).unwrap() / x - 1.0).abs() < 1e-9);
        }
        for x in [1.5, 3.0] {
            assert!((r.v_hat(x).unwrap() / x.powi(-7) - 1.0).abs() < 1e-9);
        }
        assert!(r.down_link.as_ref().unwrap().holds && r.up_link.as_ref().unwrap().holds);
        assert!(r.sets_agree && r.local);
        assert!((r.split.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_upper_obstruction() {
        // −g/φ′ = x^7/6 increases without bound: y′* = ∞.
        let g = crate::payoff::PayoffExpr::single("x", Interval::open(0.0, f64::INFINITY)).unwrap();
        let r = verify_connection(&g, &gbm(), ControlOptions::default()).unwrap();
        assert_eq!(r.y_prime, f64::INFINITY);
        assert!(r.down_global_possible && !r.local);
    }
}
