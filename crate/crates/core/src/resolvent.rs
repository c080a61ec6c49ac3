//! Resolvent (R_r π)(x) = E_x ∫₀^∞ e^{−rt} π(X_t) dt via the Green kernel.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fundamental::FundamentalPair;
use crate::payoff::Reward;
use crate::quadrature::{integrate, integrate_tail, Tail};

const REL_TOL: f64 = 1e-12;

/// Tabulated resolvent of a running payoff.
#[derive(Clone)]
pub struct Resolvent {
    pair: FundamentalPair,
    pi: Arc<dyn Reward>,
    grid: Vec<f64>,
    /// ∫_lo^{x_k} ψ π m′
    lower: Vec<f64>,
    /// ∫_{x_k}^hi φ π m′
    upper: Vec<f64>,
}

impl Resolvent {
    pub fn new(pair: &FundamentalPair, pi: Arc<dyn Reward>) -> Result<Resolvent> {
        let spec = pair.spec();
        let d = spec.domain;
        let mut grid = crate::grid::auto_space(d.lo, d.hi, 513);
        grid = crate::grid::with_points(grid, &pi.breakpoints());
        let fl = |y: f64| pair.psi(y) * pi.value(y) * pair.speed_density(y);
        let fu = |y: f64| pair.phi(y) * pi.value(y) * pair.speed_density(y);
        let head = edge_integral(&fl, spec.state.lo, grid[0], false)?;
        let tail = edge_integral(&fu, grid[grid.len() - 1], spec.state.hi, true)?;
        let n = grid.len();
        let mut lower = vec![head; n];
        let mut upper = vec![tail; n];
        let mut cells_l = Vec::with_capacity(n - 1);
        let mut cells_u = Vec::with_capacity(n - 1);
        for w in grid.windows(2) {
            cells_l.push(integrate(&fl, w[0], w[1], REL_TOL)?);
            cells_u.push(integrate(&fu, w[0], w[1], REL_TOL)?);
        }
        for k in 1..n {
            lower[k] = lower[k - 1] + cells_l[k - 1];
        }
        for k in (0..n - 1).rev() {
            upper[k] = upper[k + 1] + cells_u[k];
        }
        if !(lower[n - 1].is_finite() && upper[0].is_finite()) {
            return Err(Error::DivergentIntegral("resolvent integrals are not finite".into()));
        }
        Ok(Resolvent {
            pair: pair.clone(),
            pi,
            grid,
            lower,
            upper,
        })
    }

    fn integrals(&self, x: f64) -> (f64, f64) {
        let p = &self.pair;
        let pi = &self.pi;
        let fl = |y: f64| p.psi(y) * pi.value(y) * p.speed_density(y);
        let fu = |y: f64| p.phi(y) * pi.value(y) * p.speed_density(y);
        let n = self.grid.len();
        let spec = p.spec();
        if x < self.grid[0] {
            let i1 = edge_integral(&fl, spec.state.lo, x, false).unwrap_or(f64::NAN);
            let i2 = self.upper[0] + integrate(&fu, x, self.grid[0], REL_TOL).unwrap_or(f64::NAN);
            return (i1, i2);
        }
        if x > self.grid[n - 1] {
            let i1 = self.lower[n - 1] + integrate(&fl, self.grid[n - 1], x, REL_TOL).unwrap_or(f64::NAN);
            let i2 = edge_integral(&fu, x, spec.state.hi, true).unwrap_or(f64::NAN);
            return (i1, i2);
        }
        let k = self.grid.partition_point(|g| *g <= x).saturating_sub(1).min(n - 2);
        let (a, b) = (self.grid[k], self.grid[k + 1]);
        // Integrate from whichever cell end is nearer.
        if x - a <= b - x {
            let i1 = self.lower[k] + integrate(&fl, a, x, REL_TOL).unwrap_or(f64::NAN);
            let i2 = self.upper[k] - integrate(&fu, a, x, REL_TOL).unwrap_or(f64::NAN);
            (i1, i2)
        } else {
            let i1 = self.lower[k + 1] - integrate(&fl, x, b, REL_TOL).unwrap_or(f64::NAN);
            let i2 = self.upper[k + 1] + integrate(&fu, x, b, REL_TOL).unwrap_or(f64::NAN);
            (i1, i2)
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let (i1, i2) = self.integrals(x);
        (self.pair.phi(x) * i1 + self.pair.psi(x) * i2) / self.pair.wronskian()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let (i1, i2) = self.integrals(x);
        (self.pair.phi_prime(x) * i1 + self.pair.psi_prime(x) * i2) / self.pair.wronskian()
    }

    pub fn pair(&self) -> &FundamentalPair {
        &self.pair
    }
}

impl Reward for Resolvent {
    fn value(&self, x: f64) -> f64 {
        Resolvent::value(self, x)
    }

    fn slope(&self, x: f64) -> f64 {
        self.derivative(x)
    }
}

/// ∫ over [a, b] where one end may be a boundary of the state space.
fn edge_integral(f: &impl Fn(f64) -> f64, a: f64, b: f64, toward_upper: bool) -> Result<f64> {
    if toward_upper {
        if b.is_finite() {
            integrate(f, a, b, REL_TOL)
        } else {
            integrate_tail(f, a, Tail::ToInfinity, 1e-11)
        }
    } else if a == f64::NEG_INFINITY {
        integrate_tail(f, b, Tail::ToNegInfinity, 1e-11)
    } else if a == 0.0 && b > 0.0 {
        integrate_tail(f, b, Tail::ToZero, 1e-11)
    } else {
        integrate(f, a, b, REL_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::DiffusionSpec;
    use crate::fundamental::solve_fundamental;
    use crate::payoff::FnReward;

    fn gbm_pair() -> FundamentalPair {
        solve_fundamental(&DiffusionSpec::gbm(0.1, 0.2, 0.24)).unwrap()
    }

    #[test]
    fn constant_payoff() {
        let r = Resolvent::new(&gbm_pair(), Arc::new(FnReward::new(|_| 2.0))).unwrap();
        for x in [0.01, 0.5, 3.0, 200.0, 5000.0] {
            assert!((r.value(x) - 2.0 / 0.24).abs() < 1e-9, "x = {x}: {}", r.value(x));
            assert!(r.derivative(x).abs() < 1e-9 * (1.0 + 1.0 / x));
        }
    }

    #[test]
    fn linear_payoff_on_gbm() {
        let r = Resolvent::new(&gbm_pair(), Arc::new(FnReward::new(|x| x))).unwrap();
        for x in [0.002, 1.0, 7.5, 900.0] {
            assert!((r.value(x) / (x / 0.14) - 1.0).abs() < 1e-9);
            assert!((r.derivative(x) - 1.0 / 0.14).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_by_finite_differences() {
        let pair = gbm_pair();
        let pi = |x: f64| (x.ln()).sin().abs() + x.sqrt();
        let r = Resolvent::new(&pair, Arc::new(FnReward::new(pi))).unwrap();
        let spec = pair.spec();
        for x in [0.05, 0.7, 2.0, 30.0] {
            let h = 1e-4 * x;
            let d2 = (r.derivative(x + h) - r.derivative(x - h)) / (2.0 * h);
            let res = spec.generator(x, r.value(x), r.derivative(x), d2) + pi(x);
            assert!(res.abs() < 1e-5 * pi(x), "x = {x}: {res:e}");
        }
    }

    #[test]
    fn divergent_tail_reported() {
        // Growth faster than ψ makes the upper integral diverge.
        let err = Resolvent::new(&gbm_pair(), Arc::new(FnReward::new(|x| x.powi(8))));
        assert!(matches!(err, Err(Error::DivergentIntegral(_))));
    }
}
