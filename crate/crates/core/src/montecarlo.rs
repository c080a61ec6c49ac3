//! Monte Carlo oracle: Euler–Maruyama paths with hitting, reflection,
//! impulse and discount functionals.
//!
//! Every path draws from its own ChaCha8 stream seeded by the base seed and
//! the path index, and results are reduced in index order, so estimates are
//! bit-identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::control::Direction;
use crate::diffusion::{BoundaryKind, DiffusionSpec, Discount};
use crate::error::{Error, Result};
use crate::exec::{mean_se, par_map, Execution};
use crate::payoff::Reward;
use crate::quadrature::integrate;
use crate::ratio::Component;
use crate::stopping::RuleKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub step: f64,
    /// Simulation horizon; `None` uses 20 / (smallest discount rate).
    pub horizon: Option<f64>,
    pub paths: usize,
    pub base_seed: u64,
    pub antithetic: bool,
    pub execution: Execution,
    /// A path reaching the horizon with discount factor above this is truncated.
    pub tail_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step: 1e-3,
            horizon: None,
            paths: 100_000,
            base_seed: 20_240_601,
            antithetic: false,
            execution: Execution::Parallel,
            tail_tol: 1e-6,
        }
    }
}

impl SimConfig {
    pub fn new(step: f64, paths: usize, base_seed: u64) -> SimConfig {
        SimConfig {
            step,
            paths,
            base_seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Validation(format!("time step must be positive, got {}", self.step)));
        }
        if self.paths < 100 {
            return Err(Error::Validation(format!("at least 100 paths are required, got {}", self.paths)));
        }
        if let Some(h) = self.horizon {
            if !(h >= self.step) {
                return Err(Error::Validation(format!("horizon {h} is shorter than the step {}", self.step)));
            }
        }
        Ok(())
    }

    pub fn horizon_for(&self, spec: &DiffusionSpec) -> f64 {
        if let Some(h) = self.horizon {
            return h;
        }
        let r_min = match spec.discount {
            Discount::Constant(r) => r,
            Discount::State(_) => spec
                .check_points(256)
                .into_iter()
                .map(|x| spec.r(x))
                .fold(f64::INFINITY, f64::min),
        };
        (20.0 / r_min.max(0.02)).max(self.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths_used: usize,
    /// Paths that reached the horizon before their event with non-negligible discount.
    pub truncated_fraction: f64,
    /// Paths dropped because the discount exponent overflowed.
    pub discarded: usize,
}

impl Estimate {
    pub fn exact(v: f64) -> Estimate {
        Estimate {
            mean: v,
            std_error: 0.0,
            paths_used: 0,
            truncated_fraction: 0.0,
            discarded: 0,
        }
    }

    /// Distance to `target` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        self.z_score(target) <= k
    }
}

/// Seed of one path from the base seed and the path index.
pub fn path_seed(base: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index))
}

struct Noise {
    rng: ChaCha8Rng,
    sign: f64,
}

impl Noise {
    fn new(seed: u64, sign: f64) -> Noise {
        Noise {
            rng: ChaCha8Rng::seed_from_u64(seed),
            sign,
        }
    }

    #[inline]
    fn normal(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.sign * z
    }

    #[inline]
    fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

enum Coefs {
    Affine { m0: f64, m1: f64, s0: f64, s1: f64 },
    General,
}

/// Euler–Maruyama stepper with boundary handling and the discount exponent.
struct Stepper<'a> {
    spec: &'a DiffusionSpec,
    coefs: Coefs,
    rate: Option<f64>,
    dt: f64,
    sqdt: f64,
    steps: usize,
}

enum Moved {
    To(f64),
    /// Left the state through a killing, absorbing or exit end point.
    Killed(f64),
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a DiffusionSpec, cfg: &SimConfig) -> Stepper<'a> {
        let coefs = match (spec.drift.as_affine(), spec.volatility.as_affine()) {
            (Some((m0, m1)), Some((s0, s1))) => Coefs::Affine { m0, m1, s0, s1 },
            _ => Coefs::General,
        };
        let horizon = cfg.horizon_for(spec);
        Stepper {
            spec,
            coefs,
            rate: spec.discount.constant(),
            dt: cfg.step,
            sqdt: cfg.step.sqrt(),
            steps: (horizon / cfg.step).ceil() as usize,
        }
    }

    #[inline]
    fn coef(&self, x: f64) -> (f64, f64) {
        match self.coefs {
            Coefs::Affine { m0, m1, s0, s1 } => (m0 + m1 * x, s0 + s1 * x),
            Coefs::General => (self.spec.mu(x), self.spec.sigma(x)),
        }
    }

    fn clock(&self) -> Clock {
        Clock {
            expo: 0.0,
            disc: 1.0,
            decay: self.rate.map(|r| (-r * self.dt).exp()),
        }
    }

    /// One step; returns the new state and the local volatility used.
    #[inline]
    fn step(&self, x: f64, noise: &mut Noise) -> (Moved, f64) {
        let (m, s) = self.coef(x);
        let y = x + m * self.dt + s * self.sqdt * noise.normal();
        let st = &self.spec.state;
        if y > st.lo && y < st.hi {
            return (Moved::To(y), s);
        }
        (self.boundary(x, y), s)
    }

    #[cold]
    fn boundary(&self, x: f64, y: f64) -> Moved {
        let st = &self.spec.state;
        if y <= st.lo && !(y == st.lo && st.lo_closed) {
            return match self.spec.lower {
                BoundaryKind::Reflecting => Moved::To(if st.lo_closed { st.lo } else { 0.5 * (x + st.lo) }),
                BoundaryKind::Killing | BoundaryKind::Absorbing | BoundaryKind::Exit if st.lo.is_finite() => {
                    Moved::Killed(st.lo)
                }
                _ => Moved::To(0.5 * (x + st.lo)),
            };
        }
        if y >= st.hi && !(y == st.hi && st.hi_closed) {
            return match self.spec.upper {
                BoundaryKind::Reflecting => Moved::To(if st.hi_closed { st.hi } else { 0.5 * (x + st.hi) }),
                BoundaryKind::Killing | BoundaryKind::Absorbing | BoundaryKind::Exit if st.hi.is_finite() => {
                    Moved::Killed(st.hi)
                }
                _ => Moved::To(0.5 * (x + st.hi)),
            };
        }
        Moved::To(y)
    }
}

/// Running discount factor; a constant rate is applied multiplicatively.
struct Clock {
    expo: f64,
    disc: f64,
    decay: Option<f64>,
}

impl Clock {
    #[inline]
    fn advance(&mut self, st: &Stepper, x: f64) {
        match self.decay {
            Some(d) => self.disc *= d,
            None => {
                self.expo += st.spec.r(x) * st.dt;
                self.disc = (-self.expo).exp();
            }
        }
    }

    /// Signed exponent beyond 700.
    fn overflow(&self) -> bool {
        self.expo < -700.0 || self.disc > 1e304
    }
}

/// Brownian-bridge probability that a path between x0 and x1 touched b.
#[inline]
fn bridge_cross(x0: f64, x1: f64, b: f64, s: f64, dt: f64) -> f64 {
    let (d0, d1) = (b - x0, b - x1);
    if d0 * d1 <= 0.0 {
        return 1.0;
    }
    (-2.0 * d0 * d1 / (s * s * dt)).exp()
}

#[derive(Clone)]
struct Outcome {
    values: Vec<f64>,
    truncated: bool,
    discarded: bool,
    /// Discount factor left at the horizon, for the tail bound.
    tail: f64,
}

fn run_paths<F>(cfg: &SimConfig, f: F) -> Vec<Outcome>
where
    F: Fn(&mut Noise) -> Outcome + Sync + Send,
{
    let n = if cfg.antithetic { cfg.paths / 2 } else { cfg.paths };
    par_map(cfg.execution, n, |i| {
        let seed = path_seed(cfg.base_seed, i as u64);
        if cfg.antithetic {
            let a = f(&mut Noise::new(seed, 1.0));
            let b = f(&mut Noise::new(seed, -1.0));
            Outcome {
                values: a.values.iter().zip(&b.values).map(|(u, v)| 0.5 * (u + v)).collect(),
                truncated: a.truncated || b.truncated,
                discarded: a.discarded || b.discarded,
                tail: 0.5 * (a.tail + b.tail),
            }
        } else {
            f(&mut Noise::new(seed, 1.0))
        }
    })
}

fn summarize(out: &[Outcome], k: usize) -> Estimate {
    let kept: Vec<f64> = out.iter().filter(|o| !o.discarded).map(|o| o.values[k]).collect();
    let (mean, se) = mean_se(&kept);
    let trunc = out.iter().filter(|o| o.truncated).count();
    Estimate {
        mean,
        std_error: se,
        paths_used: kept.len(),
        truncated_fraction: trunc as f64 / out.len().max(1) as f64,
        discarded: out.len() - kept.len(),
    }
}

/// Paired difference of two columns, for joint standard errors.
fn summarize_diff(out: &[Outcome], i: usize, j: usize) -> Estimate {
    let kept: Vec<f64> = out
        .iter()
        .filter(|o| !o.discarded)
        .map(|o| o.values[i] - o.values[j])
        .collect();
    let (mean, se) = mean_se(&kept);
    Estimate {
        mean,
        std_error: se,
        paths_used: kept.len(),
        truncated_fraction: 0.0,
        discarded: out.len() - kept.len(),
    }
}

fn check_truncation(e: Estimate) -> Result<Estimate> {
    if e.truncated_fraction > 0.5 {
        return Err(Error::HorizonExhausted(format!(
            "{:.1}% of paths reached the horizon before the event",
            100.0 * e.truncated_fraction
        )));
    }
    Ok(e)
}

enum Target {
    /// Single thresholds, detected with the bridge correction.
    Points(Vec<f64>),
    Set(Vec<Component>),
    Never,
}

fn target_of(rule: &RuleKind) -> Result<Target> {
    Ok(match rule {
        RuleKind::HitPoint(z) => Target::Points(vec![*z]),
        RuleKind::TwoPoint(a, b) => Target::Points(vec![*a, *b]),
        RuleKind::HitSet(c) => Target::Set(c.clone()),
        RuleKind::NeverStop => Target::Never,
        RuleKind::ImmediateStop => Target::Points(Vec::new()),
        RuleKind::None => {
            return Err(Error::Validation("the rule cannot be simulated: no admissible rule attains the value".into()))
        }
    })
}

/// Whether x already triggers the rule.
fn triggered_at(rule: &RuleKind, x: f64) -> bool {
    match rule {
        RuleKind::HitPoint(z) => x == *z,
        RuleKind::TwoPoint(a, b) => x <= *a || x >= *b,
        RuleKind::HitSet(c) => c.iter().any(|c| x >= c.lo() && x <= c.hi()),
        RuleKind::ImmediateStop => true,
        _ => false,
    }
}

/// Stopping state reached on the step x0 → x1, if any.
#[inline]
fn hit(target: &Target, x0: f64, x1: f64, s: f64, dt: f64, noise: &mut Noise) -> Option<f64> {
    match target {
        Target::Points(ps) => {
            for &b in ps {
                let p = bridge_cross(x0, x1, b, s, dt);
                if p >= 1.0 || noise.uniform() < p {
                    return Some(b);
                }
            }
            None
        }
        Target::Set(cs) => {
            let (lo, hi) = (x0.min(x1), x0.max(x1));
            cs.iter()
                .filter(|c| c.lo() <= hi && c.hi() >= lo)
                .map(|c| if x0 < c.lo() { c.lo() } else if x0 > c.hi() { c.hi() } else { x0 })
                .min_by(|a, b| (a - x0).abs().total_cmp(&(b - x0).abs()))
        }
        Target::Never => None,
    }
}

/// Estimates E[e^{−∫r} g(X_τ)] for each rule on common paths.
pub fn estimate_stopping_values(
    spec: &DiffusionSpec,
    g: &dyn Reward,
    x: f64,
    rules: &[RuleKind],
    cfg: &SimConfig,
) -> Result<Vec<Estimate>> {
    Ok(simulate_rules(spec, g, x, rules, cfg)?.0)
}

/// Per-rule estimates and paired differences `first - rule k`, so a positive
/// mean says the first rule did better.
pub fn compare_stopping_rules(
    spec: &DiffusionSpec,
    g: &dyn Reward,
    x: f64,
    rules: &[RuleKind],
    cfg: &SimConfig,
) -> Result<(Vec<Estimate>, Vec<Estimate>)> {
    simulate_rules(spec, g, x, rules, cfg)
}

fn simulate_rules(
    spec: &DiffusionSpec,
    g: &dyn Reward,
    x: f64,
    rules: &[RuleKind],
    cfg: &SimConfig,
) -> Result<(Vec<Estimate>, Vec<Estimate>)> {
    cfg.validate()?;
    if !spec.state.contains(x) {
        return Err(Error::Validation(format!("starting point {x} is outside the state space")));
    }
    let targets = rules.iter().map(target_of).collect::<Result<Vec<_>>>()?;
    let st = Stepper::new(spec, cfg);
    let immediate: Vec<bool> = rules.iter().map(|r| triggered_at(r, x)).collect();
    if immediate.iter().all(|&b| b) {
        let e = Estimate::exact(g.value(x));
        return Ok((vec![e; rules.len()], vec![Estimate::exact(0.0); rules.len()]));
    }
    let gx = g.value(x);
    let out = run_paths(cfg, |noise| {
        let k = rules.len();
        let mut values = vec![0.0; k];
        let mut done = immediate.clone();
        for (i, &d) in immediate.iter().enumerate() {
            if d {
                values[i] = gx;
            }
        }
        let mut left = done.iter().filter(|d| !**d).count();
        let (mut xc, mut clk) = (x, st.clock());
        for _ in 0..st.steps {
            clk.advance(&st, xc);
            let (moved, s) = st.step(xc, noise);
            if clk.overflow() {
                return Outcome {
                    values,
                    truncated: false,
                    discarded: true,
                    tail: 0.0,
                };
            }
            let disc = clk.disc;
            match moved {
                Moved::Killed(e) => {
                    let pay = if spec.lower == BoundaryKind::Absorbing || spec.upper == BoundaryKind::Absorbing {
                        g.value(e)
                    } else {
                        0.0
                    };
                    for i in 0..k {
                        if !done[i] {
                            values[i] = disc * pay;
                        }
                    }
                    return Outcome {
                        values,
                        truncated: false,
                        discarded: false,
                        tail: 0.0,
                    };
                }
                Moved::To(y) => {
                    for i in 0..k {
                        if done[i] {
                            continue;
                        }
                        if let Some(z) = hit(&targets[i], xc, y, s, st.dt, noise) {
                            values[i] = disc * g.value(z);
                            done[i] = true;
                            left -= 1;
                        }
                    }
                    xc = y;
                }
            }
            if left == 0 {
                return Outcome {
                    values,
                    truncated: false,
                    discarded: false,
                    tail: 0.0,
                };
            }
        }
        let tail = clk.disc;
        Outcome {
            values,
            truncated: tail > cfg.tail_tol,
            discarded: false,
            tail,
        }
    });
    let est = (0..rules.len())
        .map(|k| check_truncation(summarize(&out, k)))
        .collect::<Result<Vec<_>>>()?;
    let diffs = (0..rules.len()).map(|k| summarize_diff(&out, 0, k)).collect();
    Ok((est, diffs))
}

pub fn estimate_stopping_value(
    spec: &DiffusionSpec,
    g: &dyn Reward,
    x: f64,
    rule: &RuleKind,
    cfg: &SimConfig,
) -> Result<Estimate> {
    Ok(estimate_stopping_values(spec, g, x, std::slice::from_ref(rule), cfg)?[0])
}

fn jump_integral(g: &dyn Reward, a: f64, b: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    integrate(|u| g.value(u), a.min(b), a.max(b), 1e-12)
}

/// Horizon tail check for controls that act forever.
fn check_tail(out: &[Outcome], e: Estimate) -> Result<Estimate> {
    let tails: Vec<f64> = out.iter().map(|o| o.tail).collect();
    let tail = crate::exec::pairwise_sum(&tails) / tails.len().max(1) as f64;
    let scale = {
        let a: Vec<f64> = out.iter().map(|o| o.values[0].abs()).collect();
        crate::exec::pairwise_sum(&a) / a.len().max(1) as f64
    };
    if tail * scale > 1e-3 * e.mean.abs().max(1e-300) {
        return Err(Error::HorizonExhausted(format!(
            "discounted tail bound {:e} exceeds 1e-3 of the estimate {:e}",
            tail * scale,
            e.mean
        )));
    }
    Ok(e)
}

/// Value of reflecting at b under the g∘dZ convention (projection scheme).
pub fn estimate_reflected_value(
    spec: &DiffusionSpec,
    g: &dyn Reward,
    x: f64,
    b: f64,
    cfg: &SimConfig,
    dir: Direction,
) -> Result<Estimate> {
    cfg.validate()?;
    let down = dir == Direction::Down;
    let jump = if (down && x > b) || (!down && x < b) {
        jump_integral(g, x, b)?
    } else {
        0.0
    };
    let x0 = if down { x.min(b) } else { x.max(b) };
    let gb = g.value(b);
    if gb == 0.0 {
        return Ok(Estimate::exact(jump));
    }
    let st = Stepper::new(spec, cfg);
    let out = run_paths(cfg, |noise| {
        let (mut xc, mut clk, mut acc) = (x0, st.clock(), 0.0);
        for _ in 0..st.steps {
            clk.advance(&st, xc);
            let (moved, _) = st.step(xc, noise);
            let y = match moved {
                Moved::To(y) => y,
                Moved::Killed(_) => {
                    return Outcome {
                        values: vec![jump + acc],
                        truncated: false,
                        discarded: false,
                        tail: 0.0,
                    }
                }
            };
            // Branch-free projection: the barrier is touched on about half the steps.
            let push = (if down { y - b } else { b - y }).max(0.0);
            acc += clk.disc * gb * push;
            xc = if down { y.min(b) } else { y.max(b) };
        }
        Outcome {
            values: vec![jump + acc],
            truncated: false,
            discarded: false,
            tail: clk.disc,
        }
    });
    check_tail(&out, summarize(&out, 0))
}

/// Impulse control: each time `trigger` is hit, jump by `jump` in the
/// control direction and collect the jump integral.
pub fn estimate_impulse_value(
    spec: &DiffusionSpec,
    g: &dyn Reward,
    x: f64,
    trigger: f64,
    jump: f64,
    cfg: &SimConfig,
    dir: Direction,
) -> Result<Estimate> {
    cfg.validate()?;
    let down = dir == Direction::Down;
    let land = if down { trigger - jump } else { trigger + jump };
    if !spec.state.contains(land) {
        return Err(Error::Validation(format!("impulse lands at {land}, outside the state space")));
    }
    let per = jump_integral(g, land, trigger)?;
    let (first, x0) = if (down && x >= trigger) || (!down && x <= trigger) {
        (jump_integral(g, land, x)?, land)
    } else {
        (0.0, x)
    };
    if jump == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    let st = Stepper::new(spec, cfg);
    let out = run_paths(cfg, |noise| {
        let (mut xc, mut clk, mut acc) = (x0, st.clock(), first);
        for _ in 0..st.steps {
            clk.advance(&st, xc);
            let (moved, s) = st.step(xc, noise);
            let y = match moved {
                Moved::To(y) => y,
                Moved::Killed(_) => break,
            };
            let p = bridge_cross(xc, y, trigger, s, st.dt);
            if p >= 1.0 || noise.uniform() < p {
                acc += clk.disc * per;
                xc = land;
            } else {
                xc = y;
            }
        }
        Outcome {
            values: vec![acc],
            truncated: false,
            discarded: false,
            tail: clk.disc,
        }
    });
    check_tail(&out, summarize(&out, 0))
}

/// E[exp(−∫₀^{τ_b} r(X_s) ds)] with a signed exponent; paths whose exponent
/// exceeds 700 are discarded and counted.
pub fn estimate_discount_functional(spec: &DiffusionSpec, x: f64, b: f64, cfg: &SimConfig) -> Result<Estimate> {
    cfg.validate()?;
    if x == b {
        return Ok(Estimate::exact(1.0));
    }
    let st = Stepper::new(spec, cfg);
    let out = run_paths(cfg, |noise| {
        let (mut xc, mut clk) = (x, st.clock());
        for _ in 0..st.steps {
            clk.advance(&st, xc);
            let (moved, s) = st.step(xc, noise);
            if clk.overflow() {
                return Outcome {
                    values: vec![0.0],
                    truncated: false,
                    discarded: true,
                    tail: 0.0,
                };
            }
            let y = match moved {
                Moved::To(y) => y,
                Moved::Killed(_) => {
                    return Outcome {
                        values: vec![0.0],
                        truncated: false,
                        discarded: false,
                        tail: 0.0,
                    }
                }
            };
            let p = bridge_cross(xc, y, b, s, st.dt);
            if p >= 1.0 || noise.uniform() < p {
                return Outcome {
                    values: vec![clk.disc],
                    truncated: false,
                    discarded: false,
                    tail: 0.0,
                };
            }
            xc = y;
        }
        let tail = clk.disc;
        Outcome {
            values: vec![0.0],
            truncated: tail > cfg.tail_tol,
            discarded: false,
            tail,
        }
    });
    let e = summarize(&out, 0);
    if e.truncated_fraction > 0.5 {
        return Err(Error::McNonConvergence(format!(
            "the target was not reached within the horizon on {:.1}% of paths",
            100.0 * e.truncated_fraction
        )));
    }
    Ok(e)
}

/// E∫₀^∞ e^{−∫r} π(X_s) ds, optionally under reflection at b.
pub fn estimate_running_payoff(
    spec: &DiffusionSpec,
    pi: &dyn Reward,
    x: f64,
    cfg: &SimConfig,
    control: Option<(Direction, f64)>,
) -> Result<Estimate> {
    cfg.validate()?;
    let st = Stepper::new(spec, cfg);
    let x0 = match control {
        Some((Direction::Down, b)) => x.min(b),
        Some((Direction::Up, b)) => x.max(b),
        None => x,
    };
    let out = run_paths(cfg, |noise| {
        let (mut xc, mut clk, mut acc) = (x0, st.clock(), 0.0);
        for _ in 0..st.steps {
            let d0 = clk.disc;
            clk.advance(&st, xc);
            let (moved, _) = st.step(xc, noise);
            let y = match moved {
                Moved::To(y) => y,
                Moved::Killed(_) => break,
            };
            let y = match control {
                Some((Direction::Down, b)) => y.min(b),
                Some((Direction::Up, b)) => y.max(b),
                None => y,
            };
            // Trapezoid in time with the discount at both ends.
            acc += 0.5 * st.dt * (d0 * pi.value(xc) + clk.disc * pi.value(y));
            xc = y;
        }
        Outcome {
            values: vec![acc],
            truncated: false,
            discarded: false,
            tail: clk.disc,
        }
    });
    check_tail(&out, summarize(&out, 0))
}

/// E[e^{−∫₀^T r} |X_T|] for the transversality check.
pub fn estimate_discounted_state(spec: &DiffusionSpec, x: f64, horizon: f64, cfg: &SimConfig) -> Result<Estimate> {
    let cfg = SimConfig {
        horizon: Some(horizon),
        ..*cfg
    };
    cfg.validate()?;
    let st = Stepper::new(spec, &cfg);
    let out = run_paths(&cfg, |noise| {
        let (mut xc, mut clk) = (x, st.clock());
        for _ in 0..st.steps {
            clk.advance(&st, xc);
            let (moved, _) = st.step(xc, noise);
            match moved {
                Moved::To(y) => xc = y,
                Moved::Killed(_) => {
                    return Outcome {
                        values: vec![0.0],
                        truncated: false,
                        discarded: false,
                        tail: 0.0,
                    }
                }
            }
        }
        Outcome {
            values: vec![clk.disc * xc.abs()],
            truncated: false,
            discarded: false,
            tail: 0.0,
        }
    });
    Ok(summarize(&out, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::example;
    use crate::payoff::FnReward;
    use proptest::prelude::*;

    fn gbm() -> DiffusionSpec {
        DiffusionSpec::gbm(0.1, 0.2, 0.24)
    }

    fn quick(paths: usize) -> SimConfig {
        SimConfig {
            step: 1e-2,
            ..SimConfig::new(1e-2, paths, 7)
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(1e-3, 99, 1).validate().is_err());
        assert!(SimConfig::new(0.0, 1000, 1).validate().is_err());
        let mut c = SimConfig::new(0.1, 1000, 1);
        c.horizon = Some(0.01);
        assert!(c.validate().is_err());
        assert!((SimConfig::default().horizon_for(&gbm()) - 20.0 / 0.24).abs() < 1e-12);
    }

    #[test]
    fn trivial_cases() {
        let g = FnReward::new(|x| x - 3.0);
        let e = estimate_stopping_value(&gbm(), &g, 6.0, &RuleKind::HitPoint(6.0), &quick(200)).unwrap();
        assert_eq!((e.mean, e.std_error), (3.0, 0.0));
        let e = estimate_discount_functional(&gbm(), 2.0, 2.0, &quick(200)).unwrap();
        assert_eq!(e.mean, 1.0);
        let zero = FnReward::new(|_| 0.0);
        assert_eq!(estimate_reflected_value(&gbm(), &zero, 5.0, 5.0, &quick(200), Direction::Down).unwrap().mean, 0.0);
        let g = FnReward::new(|x| x);
        assert_eq!(estimate_impulse_value(&gbm(), &g, 5.0, 6.0, 0.0, &quick(200), Direction::Down).unwrap().mean, 0.0);
    }

    #[test]
    fn hitting_matches_analytic() {
        let g = example(1).unwrap().problem().unwrap().payoff;
        let e = estimate_stopping_value(&gbm(), &g, 3.0, &RuleKind::HitPoint(6.0), &quick(4000)).unwrap();
        assert!(e.within(0.75, 3.0), "{e:?}");
        let e = estimate_stopping_value(&gbm(), &g, 10.0, &RuleKind::TwoPoint(6.0, 14.0), &quick(4000)).unwrap();
        assert!(e.within(100.0 / 12.0, 3.0), "{e:?}");
    }

    #[test]
    fn running_payoff_constant() {
        let c = FnReward::new(|_| 1.2);
        let e = estimate_running_payoff(&gbm(), &c, 1.0, &quick(400), None).unwrap();
        assert!((e.mean - 5.0).abs() < 1e-3, "{e:?}");
        let id = FnReward::new(|x| x);
        let e = estimate_running_payoff(&gbm(), &id, 1.0, &quick(4000), None).unwrap();
        assert!(e.within(1.0 / 0.14, 3.0), "{e:?}");
    }

    #[test]
    fn zero_exponent_functional() {
        // r ≡ μ′: the exponent vanishes and the target is hit surely.
        let spec = DiffusionSpec::gbm(0.1, 0.2, 0.1);
        let e = estimate_discount_functional(&spec, 1.0, 1.5, &quick(300)).unwrap();
        assert!(e.discarded == 0 && e.truncated_fraction < 0.5);
    }

    #[test]
    fn discount_functional_hat() {
        let hat = DiffusionSpec::gbm(0.14, 0.2, 0.14);
        let e = estimate_discount_functional(&hat, 1.0, 2.0, &quick(4000)).unwrap();
        assert!(e.within(0.5, 3.0), "{e:?}");
    }

    #[test]
    fn reflection_and_impulse_agree() {
        let g = example(9).unwrap().problem().unwrap().payoff;
        let cfg = quick(2000);
        let r = estimate_reflected_value(&gbm(), &g, 16.0, 25.0, &cfg, Direction::Down).unwrap();
        let i = estimate_impulse_value(&gbm(), &g, 16.0, 25.0, 9.0, &cfg, Direction::Down).unwrap();
        assert!(r.within(256.0, 3.0), "{r:?}");
        let joint = (r.std_error.powi(2) + i.std_error.powi(2)).sqrt();
        assert!((r.mean - i.mean).abs() <= 3.0 * joint, "{r:?} {i:?}");
        let g = example(11).unwrap().problem().unwrap().payoff;
        let u = estimate_reflected_value(&gbm(), &g, 2.0, 1.0, &cfg, Direction::Up).unwrap();
        assert!(u.within(2f64.powi(-6) / 6.0, 3.0), "{u:?}");
    }

    #[test]
    fn paired_difference_sign() {
        // Same payoff 1 at both targets: the nearer one is worth more.
        let g = FnReward::new(|_| 1.0);
        let rules = [RuleKind::HitPoint(4.0), RuleKind::HitPoint(6.0)];
        let (est, diffs) = compare_stopping_rules(&gbm(), &g, 3.0, &rules, &quick(500)).unwrap();
        assert!(est[0].mean > est[1].mean);
        assert_eq!(diffs[0].mean, 0.0);
        assert!(diffs[1].mean > 0.0, "{:?}", diffs[1]);
    }

    #[test]
    fn deterministic_across_execution() {
        let g = FnReward::new(|x| x - 3.0);
        let mut cfg = quick(300);
        let rule = RuleKind::HitPoint(6.0);
        let a = estimate_stopping_value(&gbm(), &g, 3.0, &rule, &cfg).unwrap();
        cfg.execution = Execution::Sequential;
        let b = estimate_stopping_value(&gbm(), &g, 3.0, &rule, &cfg).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn se_scales_with_paths() {
        let g = FnReward::new(|x| x - 3.0);
        let rule = RuleKind::HitPoint(6.0);
        let cfg = quick(1000);
        let a = estimate_stopping_value(&gbm(), &g, 3.0, &rule, &cfg).unwrap();
        let b = estimate_stopping_value(&gbm(), &g, 3.0, &rule, &SimConfig { paths: 4000, ..cfg }).unwrap();
        let ratio = a.std_error / b.std_error;
        assert!((ratio / 2.0 - 1.0).abs() < 0.2, "{ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn seeds_are_distinct(base in any::<u64>(), i in 0u64..1_000_000) {
            prop_assert_ne!(path_seed(base, i), path_seed(base, i + 1));
        }

        #[test]
        fn reflected_paths_stay_below(seed in any::<u64>(), b in 1.5f64..4.0) {
            let spec = gbm();
            let cfg = SimConfig { horizon: Some(1.0), ..SimConfig::new(1e-2, 100, seed) };
            let st = Stepper::new(&spec, &cfg);
            let mut noise = Noise::new(seed, 1.0);
            let mut x = 1.0f64;
            for _ in 0..st.steps {
                let (m, s) = st.coef(x);
                let incr = (m * st.dt).abs() + 6.0 * s * st.sqdt;
                if let (Moved::To(y), _) = st.step(x, &mut noise) {
                    // Overshoot beyond the barrier is at most one Euler increment.
                    prop_assert!(y - b <= incr);
                    x = y.min(b);
                }
            }
        }
    }
}
