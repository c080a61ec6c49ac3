//! Explicit Runge–Kutta integrators for small linear systems.

use crate::error::{Error, Result};

/// Accepted step of an adaptive integration, stored with a log scale so that
/// the true state is `exp(log_scale) * y`.
#[derive(Debug, Clone, Copy)]
pub struct Node<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub log_scale: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Renormalize when the largest component exceeds this magnitude.
    pub renorm_above: f64,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options {
            rtol: 1e-12,
            max_step: 0.02,
            max_steps: 2_000_000,
            renorm_above: 1e100,
        }
    }
}

const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const A7: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn combo<const N: usize>(y: &[f64; N], h: f64, ks: &[[f64; N]], a: &[f64]) -> [f64; N] {
    let mut out = *y;
    for (k, &c) in ks.iter().zip(a) {
        if c != 0.0 {
            for i in 0..N {
                out[i] += h * c * k[i];
            }
        }
    }
    out
}

/// Dormand–Prince 5(4) from `t0` to `t1` (either direction), recording every
/// accepted step.
pub fn dopri5<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    t1: f64,
    opts: Dopri5Options,
) -> Result<Vec<Node<N>>> {
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0;
    let mut log_scale = 0.0;
    let mut nodes = vec![Node { t, y, log_scale }];
    let mut h = opts.max_step.min((t1 - t0).abs()).max(1e-12) * 0.1;
    let mut k1 = f(t, &y);
    let mut steps = 0;
    while (t1 - t) * dir > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::NonConvergence(format!("step limit reached at t = {t}")));
        }
        h = h.min(opts.max_step).min((t1 - t).abs());
        let hs = h * dir;
        let k2 = f(t + C[0] * hs, &combo(&y, hs, &[k1], &A2));
        let k3 = f(t + C[1] * hs, &combo(&y, hs, &[k1, k2], &A3));
        let k4 = f(t + C[2] * hs, &combo(&y, hs, &[k1, k2, k3], &A4));
        let k5 = f(t + C[3] * hs, &combo(&y, hs, &[k1, k2, k3, k4], &A5));
        let k6 = f(t + C[4] * hs, &combo(&y, hs, &[k1, k2, k3, k4, k5], &A6));
        let y_new = combo(&y, hs, &[k1, k2, k3, k4, k5, k6], &A7);
        let k7 = f(t + hs, &y_new);
        let ks = [k1, k2, k3, k4, k5, k6, k7];
        let mut scale = 0.0f64;
        for i in 0..N {
            scale = scale.max(y[i].abs()).max(y_new[i].abs());
        }
        let mut err = 0.0f64;
        for i in 0..N {
            let e: f64 = (0..7).map(|j| E[j] * ks[j][i]).sum::<f64>() * hs;
            err = err.max(e.abs());
        }
        let err = if scale > 0.0 { err / (opts.rtol * scale) } else { 0.0 };
        if !err.is_finite() {
            return Err(Error::NonConvergence(format!("non-finite state near t = {t}")));
        }
        if err <= 1.0 {
            t = if (t1 - (t + hs)) * dir <= 1e-15 * t1.abs().max(1.0) { t1 } else { t + hs };
            y = y_new;
            k1 = k7;
            let big = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if big > opts.renorm_above || (big > 0.0 && big < 1.0 / opts.renorm_above) {
                for v in y.iter_mut() {
                    *v /= big;
                }
                for v in k1.iter_mut() {
                    *v /= big;
                }
                log_scale += big.ln();
            }
            nodes.push(Node { t, y, log_scale });
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::NonConvergence(format!("step size underflow at t = {t}")));
        }
    }
    Ok(nodes)
}

/// Classical RK4 from `t0` to `t1` with at least `ceil(|t1 - t0| / max_h)` steps.
pub fn rk4<const N: usize>(f: impl Fn(f64, &[f64; N]) -> [f64; N], t0: f64, y0: [f64; N], t1: f64, max_h: f64) -> [f64; N] {
    let span = t1 - t0;
    if span == 0.0 {
        return y0;
    }
    let n = (span.abs() / max_h).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut y = y0;
    let mut t = t0;
    for _ in 0..n {
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &combo(&y, 0.5 * h, &[k1], &[1.0]));
        let k3 = f(t + 0.5 * h, &combo(&y, 0.5 * h, &[k2], &[1.0]));
        let k4 = f(t + h, &combo(&y, h, &[k3], &[1.0]));
        for i in 0..N {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
    }
    y
}
