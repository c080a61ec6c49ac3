//! Fundamental ratios, their global maximizer sets and monotone regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{par_map, Execution};
use crate::fundamental::FundamentalPair;
use crate::optimize::{bisect, bisect_predicate, golden_max};
use crate::payoff::Reward;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioKind {
    GOverPsi,
    GOverPhi,
    GOverPsiPrime,
    NegGOverPhiPrime,
}

impl RatioKind {
    /// ψ-type ratios are maximized toward the lower boundary side of the problem.
    pub fn is_psi_type(self) -> bool {
        matches!(self, RatioKind::GOverPsi | RatioKind::GOverPsiPrime)
    }

    pub fn label(self) -> &'static str {
        match self {
            RatioKind::GOverPsi => "g/psi",
            RatioKind::GOverPhi => "g/phi",
            RatioKind::GOverPsiPrime => "g/psi'",
            RatioKind::NegGOverPhiPrime => "-g/phi'",
        }
    }
}

/// A ratio g/d evaluated against one of the fundamental-solution denominators.
pub struct Ratio<'a> {
    pub kind: RatioKind,
    pub g: &'a dyn Reward,
    pub pair: &'a FundamentalPair,
}

impl<'a> Ratio<'a> {
    pub fn new(kind: RatioKind, g: &'a dyn Reward, pair: &'a FundamentalPair) -> Self {
        Ratio { kind, g, pair }
    }

    /// Denominator and its derivative.
    pub fn denominator(&self, x: f64) -> (f64, f64) {
        use crate::fundamental::Which;
        match self.kind {
            RatioKind::GOverPsi => (self.pair.psi(x), self.pair.psi_prime(x)),
            RatioKind::GOverPhi => (self.pair.phi(x), self.pair.phi_prime(x)),
            RatioKind::GOverPsiPrime => {
                let d = self.pair.derivs(Which::Psi, x);
                (d[1], d[2])
            }
            RatioKind::NegGOverPhiPrime => {
                let d = self.pair.derivs(Which::Phi, x);
                (-d[1], -d[2])
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let v = self.g.value(x) / self.denominator(x).0;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// Right derivative of the ratio.
    pub fn derivative(&self, x: f64) -> f64 {
        let (d, dd) = self.denominator(x);
        (self.g.slope(x) * d - self.g.value(x) * dd) / (d * d)
    }

    /// Left derivative of the ratio.
    pub fn derivative_left(&self, x: f64) -> f64 {
        let (d, dd) = self.denominator(x);
        (self.g.slope_left(x) * d - self.g.value(x) * dd) / (d * d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Component {
    Point(f64),
    Interval(f64, f64),
}

impl Component {
    pub fn lo(&self) -> f64 {
        match *self {
            Component::Point(p) => p,
            Component::Interval(a, _) => a,
        }
    }

    pub fn hi(&self) -> f64 {
        match *self {
            Component::Point(p) => p,
            Component::Interval(_, b) => b,
        }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo() - tol * (1.0 + self.lo().abs()) && x <= self.hi() + tol * (1.0 + self.hi().abs())
    }
}

/// Behaviour of a ratio near one boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryApproach {
    /// Extrapolated limsup, `None` when the end point belongs to the state space.
    pub limsup: Option<f64>,
    /// Running-maximum points along the geometric probe sequence, moving toward the boundary.
    pub sequence: Vec<f64>,
    /// Ratio values at `sequence`.
    pub values: Vec<f64>,
    /// Block maximizers keep falling strictly inside their blocks: finite
    /// near-maximizers recur arbitrarily close to the boundary.
    pub recurrent: bool,
    /// Ratio still strictly moving toward the limsup along the probe sequence.
    pub monotone: bool,
}

/// Global maximizer set of a ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxSet {
    pub kind: RatioKind,
    pub components: Vec<Component>,
    pub includes_lower_boundary: bool,
    pub includes_upper_boundary: bool,
    pub sup_value: f64,
    pub extremal_point: f64,
    pub tolerance_used: f64,
    pub lower: BoundaryApproach,
    pub upper: BoundaryApproach,
    pub state_lo: f64,
    pub state_hi: f64,
}

impl MaxSet {
    pub fn points(&self) -> Vec<f64> {
        self.components
            .iter()
            .filter_map(|c| match c {
                Component::Point(p) => Some(*p),
                _ => None,
            })
            .collect()
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.components
            .iter()
            .filter_map(|c| match c {
                Component::Interval(a, b) => Some((*a, *b)),
                _ => None,
            })
            .collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.components.iter().any(|c| c.contains(x, 1e-9))
    }

    /// Largest finite element (the b* of the degenerate cases).
    pub fn largest_finite(&self) -> Option<f64> {
        self.components.last().map(|c| c.hi())
    }

    pub fn smallest_finite(&self) -> Option<f64> {
        self.components.first().map(|c| c.lo())
    }

    pub fn band(&self) -> f64 {
        self.tolerance_used * (1.0 + self.sup_value.abs())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxSetOptions {
    pub tol: f64,
    /// Number of geometric probe blocks beyond each edge of the working domain.
    pub probe_blocks: usize,
    pub execution: Execution,
}

impl Default for MaxSetOptions {
    fn default() -> Self {
        MaxSetOptions {
            tol: 1e-9,
            probe_blocks: 12,
            execution: Execution::Parallel,
        }
    }
}

fn log_scale_of(pair: &FundamentalPair) -> bool {
    pair.spec().domain.is_log()
}

/// Slope in the grid's natural coordinate (log for positive domains).
fn scaled_slope(r: &Ratio<'_>, x: f64, log: bool) -> f64 {
    let d = r.derivative(x);
    if log {
        x * d
    } else {
        (1.0 + x.abs()) * d
    }
}

fn near(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

/// Global maximum set of `kind` for payoff `g`.
pub fn global_max_set(kind: RatioKind, g: &dyn Reward, pair: &FundamentalPair, tol: f64) -> Result<MaxSet> {
    global_max_set_with(kind, g, pair, MaxSetOptions { tol, ..Default::default() })
}

pub fn global_max_set_with(
    kind: RatioKind,
    g: &dyn Reward,
    pair: &FundamentalPair,
    opts: MaxSetOptions,
) -> Result<MaxSet> {
    if !(opts.tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let spec = pair.spec();
    let d = spec.domain;
    let log = log_scale_of(pair);
    let ratio = Ratio::new(kind, g, pair);
    let grid = crate::grid::with_points(d.grid(), &g.breakpoints());
    let n = grid.len();
    let vals: Vec<f64> = par_map(opts.execution, n, |i| ratio.value(grid[i]));
    let slopes: Vec<f64> = par_map(opts.execution, n, |i| scaled_slope(&ratio, grid[i], log));

    let lower = boundary_approach(&ratio, pair, false, opts.probe_blocks);
    let upper = boundary_approach(&ratio, pair, true, opts.probe_blocks);

    // Refined interior candidates.
    let mut cands: Vec<(f64, f64)> = Vec::new();
    let grid_max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut idx: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { vals[i - 1] };
            let right = if i + 1 == n { f64::NEG_INFINITY } else { vals[i + 1] };
            vals[i].is_finite() && vals[i] >= left && vals[i] >= right && (vals[i] > left || vals[i] > right)
        })
        .collect();
    // Plateaus contribute many near-equal grid maxima; they are handled as runs below.
    let flat = |i: usize| slopes[i].abs() <= opts.tol * (1.0 + grid_max.abs());
    idx.retain(|&i| !(flat(i) && (i == 0 || flat(i - 1)) && (i + 1 == n || flat(i + 1))));
    let refined: Vec<Vec<(f64, f64)>> = par_map(opts.execution, idx.len(), |j| {
        let i = idx[j];
        let a = grid[i.saturating_sub(1)];
        let b = grid[(i + 1).min(n - 1)];
        refine_peak(&ratio, g, a, b, grid[i], vals[i])
    });
    for r in refined {
        cands.extend(r);
    }
    // Grid maxima (ties included) also stand for themselves.
    for (i, &x) in grid.iter().enumerate() {
        let left = if i == 0 { f64::NEG_INFINITY } else { vals[i - 1] };
        let right = if i + 1 == n { f64::NEG_INFINITY } else { vals[i + 1] };
        if vals[i].is_finite() && vals[i] >= left && vals[i] >= right {
            cands.push((x, vals[i]));
        }
    }

    let interior_sup = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut sup = interior_sup;
    for b in [&lower, &upper] {
        if let Some(l) = b.limsup {
            sup = sup.max(l);
        }
    }
    if sup == f64::NEG_INFINITY {
        return Err(Error::Validation(format!("ratio {} is nowhere finite", kind.label())));
    }
    let band = if sup.is_finite() { opts.tol * (1.0 + sup.abs()) } else { 0.0 };
    let slope_tol = band;
    let in_band = |v: f64| sup.is_finite() && v >= sup - band;

    let lower_flag = lower.limsup.is_some_and(|l| l == f64::INFINITY || in_band(l));
    let upper_flag = upper.limsup.is_some_and(|l| l == f64::INFINITY || in_band(l));

    // Plateau runs on the grid.
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    if sup.is_finite() {
        let plateau = |x: f64| in_band(ratio.value(x)) && scaled_slope(&ratio, x, log).abs() <= slope_tol;
        let bps = g.breakpoints();
        let on: Vec<bool> = (0..n).map(|i| in_band(vals[i]) && slopes[i].abs() <= slope_tol).collect();
        let mut i = 0;
        while i < n {
            if !on[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i + 1 < n && on[i + 1] {
                i += 1;
            }
            let end = i;
            i += 1;
            if end == start {
                continue;
            }
            let width_tol = 1e-12;
            let a = if start == 0 {
                grid[0]
            } else {
                bisect_predicate(
                    |x| plateau(x),
                    grid[start],
                    grid[start - 1],
                    width_tol * (1.0 + grid[start].abs()),
                )
            };
            let b = if end == n - 1 {
                grid[n - 1]
            } else {
                bisect_predicate(|x| plateau(x), grid[end], grid[end + 1], width_tol * (1.0 + grid[end].abs()))
            };
            // A stretch that keeps rising toward a boundary attaining the sup is
            // part of the approach, not a plateau.
            let rising_to_upper = end == n - 1 && upper_flag && vals[end] - vals[start] > 4.0 * f64::EPSILON * sup.abs();
            let rising_to_lower = start == 0 && lower_flag && vals[start] - vals[end] > 4.0 * f64::EPSILON * sup.abs();
            if rising_to_upper || rising_to_lower {
                continue;
            }
            // Plateaus glued to the payoff at a breakpoint end there; the band
            // alone blurs a tangential end by about sqrt(tol).
            let snap = |x: f64| {
                bps.iter()
                    .copied()
                    .filter(|&bp| (bp - x).abs() <= 1e-5 * (1.0 + bp.abs()) && in_band(ratio.value(bp)))
                    .min_by(|p, q| (p - x).abs().total_cmp(&(q - x).abs()))
                    .unwrap_or(x)
            };
            intervals.push((snap(a), snap(b)));
        }
    }

    // Isolated points.
    let mut points: Vec<f64> = Vec::new();
    if sup.is_finite() {
        let mut pts: Vec<(f64, f64)> = cands.iter().filter(|c| in_band(c.1)).cloned().collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (x, _) in pts {
            if intervals.iter().any(|&(a, b)| x >= a - 1e-9 * (1.0 + a.abs()) && x <= b + 1e-9 * (1.0 + b.abs())) {
                continue;
            }
            let at_lo = x <= grid[0];
            let at_hi = x >= grid[n - 1];
            if at_lo && !edge_is_point(&ratio, pair, false, x) {
                continue;
            }
            if at_hi && !edge_is_point(&ratio, pair, true, x) {
                continue;
            }
            // Keep the best representative among near-duplicates.
            if let Some(last) = points.last() {
                if near(*last, x, 1e-6) {
                    if ratio.value(x) > ratio.value(*last) {
                        *points.last_mut().unwrap() = x;
                    }
                    continue;
                }
            }
            points.push(x);
        }
    }

    let mut components: Vec<Component> = points.into_iter().map(Component::Point).collect();
    components.extend(intervals.into_iter().map(|(a, b)| Component::Interval(a, b)));
    components.sort_by(|a, b| a.lo().total_cmp(&b.lo()));

    let extremal_point = if kind.is_psi_type() {
        if upper_flag {
            spec.state.hi
        } else if let Some(c) = components.last() {
            c.hi()
        } else {
            spec.state.lo
        }
    } else if lower_flag {
        spec.state.lo
    } else if let Some(c) = components.first() {
        c.lo()
    } else {
        spec.state.hi
    };

    Ok(MaxSet {
        kind,
        components,
        includes_lower_boundary: lower_flag,
        includes_upper_boundary: upper_flag,
        sup_value: sup,
        extremal_point,
        tolerance_used: opts.tol,
        lower,
        upper,
        state_lo: spec.state.lo,
        state_hi: spec.state.hi,
    })
}

/// A maximum found at the edge of the working domain counts as a point of the
/// set only when the ratio drops beyond the edge or the edge is a state point.
fn edge_is_point(ratio: &Ratio<'_>, pair: &FundamentalPair, upper: bool, x: f64) -> bool {
    let spec = pair.spec();
    let (end, kind) = if upper { (spec.state.hi, spec.upper) } else { (spec.state.lo, spec.lower) };
    if x == end {
        return kind.is_state_point();
    }
    let beyond = if spec.domain.is_log() {
        if upper {
            x * 1.01
        } else {
            x / 1.01
        }
    } else if upper {
        x + 0.01 * (1.0 + x.abs())
    } else {
        x - 0.01 * (1.0 + x.abs())
    };
    let beyond = if upper { beyond.min(end) } else { beyond.max(end) };
    if beyond == end && !kind.is_state_point() {
        return true;
    }
    ratio.value(beyond) < ratio.value(x)
}

/// Golden refinement of a grid maximum, derivative-sign polish, jump location
/// and breakpoint candidates inside `[a, b]`.
fn refine_peak(ratio: &Ratio<'_>, g: &dyn Reward, a: f64, b: f64, x0: f64, v0: f64) -> Vec<(f64, f64)> {
    let mut out = vec![(x0, v0)];
    let f = |x: f64| ratio.value(x);
    let (mut xb, mut vb) = golden_max(f, a, b, 1e-10 * (1.0 + x0.abs()));
    if vb < v0 {
        xb = x0;
        vb = v0;
    }
    // Polish a smooth or kinked maximum by bisection on the derivative sign.
    let h = 1e-7 * (1.0 + xb.abs());
    let (l, r) = ((xb - h).max(a), (xb + h).min(b));
    if l < r && ratio.derivative(l) > 0.0 && ratio.derivative(r) < 0.0 {
        if let Some(xr) = bisect(|x| ratio.derivative(x), l, r, 4.0 * f64::EPSILON * (1.0 + xb.abs())) {
            let vr = f(xr);
            if vr >= vb - 1e-15 * vb.abs() {
                xb = xr;
                vb = vr;
            }
        }
    }
    // Upward jump just left of the maximizer: locate it.
    if xb - h > a {
        let vl = f(xb - h);
        if vb - vl > 1e-6 * (1.0 + vb.abs()) {
            let mid = 0.5 * (vl + vb);
            let lo = bisect_predicate(|x| f(x) < mid, xb - h, xb, 0.0);
            let mut x = lo;
            for _ in 0..4 {
                x = next_up(x);
                let v = f(x);
                if v >= vb - 1e-12 * (1.0 + vb.abs()) {
                    xb = x;
                    vb = v;
                    break;
                }
            }
        }
    }
    out.push((xb, vb));
    for bp in g.breakpoints() {
        if bp >= a && bp <= b {
            out.push((bp, f(bp)));
        }
    }
    out
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Probe blocks beyond the working domain toward one boundary and estimate
/// the limsup of the ratio there.
fn boundary_approach(ratio: &Ratio<'_>, pair: &FundamentalPair, upper: bool, blocks: usize) -> BoundaryApproach {
    let spec = pair.spec();
    let d = spec.domain;
    let log = d.is_log();
    let (edge, end) = if upper { (d.hi, spec.state.hi) } else { (d.lo, spec.state.lo) };
    let kind = if upper { spec.upper } else { spec.lower };
    let none = |limsup| BoundaryApproach {
        limsup,
        sequence: Vec::new(),
        values: Vec::new(),
        recurrent: false,
        monotone: false,
    };
    if edge == end {
        return if kind.is_state_point() {
            none(None)
        } else {
            none(Some(ratio.value(edge)))
        };
    }
    let step = |x: f64| -> f64 {
        if log {
            if upper {
                x * 2.0
            } else {
                x * 0.5
            }
        } else {
            let w = (d.hi - d.lo).max(1.0);
            if upper {
                x + w * (1.0 + (x - d.hi).abs() / w)
            } else {
                x - w * (1.0 + (d.lo - x).abs() / w)
            }
        }
    };
    let mut maxima = Vec::new();
    let mut argmax = Vec::new();
    let mut interior = Vec::new();
    let mut x = edge;
    for _ in 0..blocks {
        let mut y = step(x);
        if (upper && y >= end) || (!upper && y <= end) {
            // Finite boundary reached: stop just short of it.
            y = if log {
                if upper {
                    x + 0.999 * (end - x)
                } else {
                    end + 0.001 * (x - end)
                }
            } else if upper {
                x + 0.999 * (end - x)
            } else {
                end + 0.001 * (x - end)
            };
        }
        let (p, q) = if upper { (x, y) } else { (y, x) };
        let samples = if log {
            crate::grid::log_space(p, q, 65)
        } else {
            crate::grid::lin_space(p, q, 65)
        };
        let vals: Vec<f64> = samples.iter().map(|&s| ratio.value(s)).collect();
        let (k, &vk) = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty block");
        let lo = samples[k.saturating_sub(1)];
        let hi = samples[(k + 1).min(64)];
        let (xr, vr) = golden_max(|s| ratio.value(s), lo, hi, 1e-12 * (1.0 + samples[k].abs()));
        let (xm, vm) = if vr > vk { (xr, vr) } else { (samples[k], vk) };
        // The ratio must fall back after its block maximum for the maximizers
        // to recur; a ratio creeping up toward the boundary never does.
        let mut run = f64::NEG_INFINITY;
        let mut drop: f64 = 0.0;
        let ordered: Vec<f64> = if upper { vals.clone() } else { vals.iter().rev().cloned().collect() };
        for v in ordered {
            run = run.max(v);
            drop = drop.max(run - v);
        }
        let inside = drop > 1e-9 * (1.0 + vm.abs());
        maxima.push(vm);
        argmax.push(xm);
        interior.push(inside);
        x = y;
        if (upper && y >= end) || (!upper && y <= end) || !y.is_finite() {
            break;
        }
    }
    let (limsup, monotone) = extrapolate(&maxima);
    let tail = interior.len().saturating_sub(4);
    let recurrent = interior.len() >= 4
        && interior[tail..].iter().all(|&b| b)
        && maxima[tail..].iter().all(|&v| limsup.is_finite() && near(v, limsup, 1e-9));
    // Running maxima along the approach.
    let mut sequence = Vec::with_capacity(maxima.len());
    let mut values = Vec::with_capacity(maxima.len());
    let mut best = f64::NEG_INFINITY;
    let mut best_x = edge;
    for (v, x) in maxima.iter().zip(&argmax) {
        if *v >= best {
            best = *v;
            best_x = *x;
        }
        sequence.push(best_x);
        values.push(best);
    }
    BoundaryApproach {
        limsup: Some(limsup),
        sequence,
        values,
        recurrent,
        monotone,
    }
}

/// Limit of block maxima: Aitken acceleration for geometrically converging
/// monotone sequences, maximum of the recent half for oscillating ones,
/// +∞ for sequences blowing up.
fn extrapolate(m: &[f64]) -> (f64, bool) {
    let k = m.len();
    if k == 0 {
        return (f64::NEG_INFINITY, false);
    }
    let last = m[k - 1];
    if last == f64::INFINITY || (last > 1e12 && k >= 2 && last > m[k - 2]) {
        return (f64::INFINITY, true);
    }
    if k < 4 {
        return (m.iter().cloned().fold(f64::NEG_INFINITY, f64::max), false);
    }
    let recent = &m[k.saturating_sub(7)..];
    let diffs: Vec<f64> = recent.windows(2).map(|w| w[1] - w[0]).collect();
    let scale = recent.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let up = diffs.iter().all(|&dv| dv > 1e-14 * scale);
    let down = diffs.iter().all(|&dv| dv < -1e-14 * scale);
    if up || down {
        let (d1, d2) = (diffs[diffs.len() - 2], diffs[diffs.len() - 1]);
        let rho = d2 / d1;
        if up && rho > 0.97 {
            // Increments are not shrinking: the ratio grows without bound.
            return (f64::INFINITY, true);
        }
        let lim = if rho > 0.0 && rho < 0.97 { last + d2 * rho / (1.0 - rho) } else { last };
        return (lim, true);
    }
    let half = &m[k / 2..];
    (half.iter().cloned().fold(f64::NEG_INFINITY, f64::max), false)
}

/// z* from M and y* from N, with the ordering z* ≤ y*.
pub fn extremal_points(m: &MaxSet, n: &MaxSet) -> (f64, f64, bool) {
    let z = m.extremal_point;
    let y = n.extremal_point;
    let ok = z <= y + 1e-9 * (1.0 + y.abs().min(1e300));
    (z, y, ok)
}

/// Verifies g = K·(denominator) on every interval component.
pub fn plateau_check(m: &MaxSet, g: &dyn Reward, pair: &FundamentalPair, kind: RatioKind) -> Result<Vec<((f64, f64), f64)>> {
    let ratio = Ratio::new(kind, g, pair);
    let mut out = Vec::new();
    for (a, b) in m.intervals() {
        let k = ratio.value(crate::grid::mid(a, b));
        let pts = crate::grid::auto_space(a, b, 65);
        let mut worst: f64 = 0.0;
        for x in pts {
            let den = ratio.denominator(x).0;
            let dev = (g.value(x) - k * den).abs() / (k * den).abs().max(1e-300);
            worst = worst.max(dev);
        }
        if worst > 1e-8 {
            return Err(Error::PlateauViolation { a, b, deviation: worst });
        }
        out.push(((a, b), k));
    }
    Ok(out)
}

/// Maximal open intervals of strict monotonicity of a ratio: increasing for
/// ψ-type ratios, decreasing for φ-type ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneRegions {
    pub kind: RatioKind,
    pub regions: Vec<(f64, f64)>,
}

impl MonotoneRegions {
    pub fn contains(&self, x: f64) -> bool {
        self.regions.iter().any(|&(a, b)| x > a && x < b)
    }

    /// A point z with ratio(z) strictly better than ratio(x), for x inside a region.
    pub fn witness(&self, x: f64) -> Option<f64> {
        let &(a, b) = self.regions.iter().find(|&&(a, b)| x > a && x < b)?;
        Some(if self.kind.is_psi_type() {
            if b.is_infinite() {
                2.0 * x.abs().max(1.0) + x
            } else if x > 0.0 {
                (x * b).sqrt()
            } else {
                0.5 * (x + b)
            }
        } else if a == f64::NEG_INFINITY {
            x - 2.0 * x.abs().max(1.0)
        } else if a >= 0.0 && x > 0.0 {
            if a == 0.0 {
                0.5 * x
            } else {
                (x * a).sqrt()
            }
        } else {
            0.5 * (x + a)
        })
    }
}

pub fn monotone_regions(kind: RatioKind, g: &dyn Reward, pair: &FundamentalPair) -> MonotoneRegions {
    let spec = pair.spec();
    let d = spec.domain;
    let log = d.is_log();
    let ratio = Ratio::new(kind, g, pair);
    let grid = crate::grid::with_points(d.grid(), &g.breakpoints());
    let n = grid.len();
    let sign = if kind.is_psi_type() { 1.0 } else { -1.0 };
    let scale = grid
        .iter()
        .map(|&x| ratio.value(x).abs())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
        .max(1e-300);
    // Threshold relative to the local size of the ratio, so that regions
    // far from where the ratio is largest are still resolved.
    let strict = |x: f64| {
        let thr = 1e-11 * ratio.value(x).abs() + 1e-300 * scale;
        let s = scaled_slope(&ratio, x, log) * sign;
        let sl = if log { x } else { 1.0 + x.abs() } * ratio.derivative_left(x) * sign;
        s > thr && sl > thr
    };
    let on: Vec<bool> = grid.iter().map(|&x| strict(x)).collect();
    let mut regions = Vec::new();
    let mut i = 0;
    while i < n {
        if !on[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < n && on[i + 1] {
            i += 1;
        }
        let end = i;
        i += 1;
        let tol = |x: f64| 1e-9 * (1.0 + x.abs());
        let a = if start == 0 {
            extend_edge(&ratio, pair, false, grid[0], sign)
        } else {
            bisect_predicate(strict, grid[start], grid[start - 1], tol(grid[start]))
        };
        let b = if end == n - 1 {
            extend_edge(&ratio, pair, true, grid[n - 1], sign)
        } else {
            bisect_predicate(strict, grid[end], grid[end + 1], tol(grid[end]))
        };
        if b > a {
            regions.push((a, b));
        }
    }
    MonotoneRegions { kind, regions }
}

/// Push a region touching the working-domain edge out to the boundary when
/// the ratio stays strictly monotone along the probe sequence.
fn extend_edge(ratio: &Ratio<'_>, pair: &FundamentalPair, upper: bool, edge: f64, sign: f64) -> f64 {
    let spec = pair.spec();
    let end = if upper { spec.state.hi } else { spec.state.lo };
    if edge == end {
        return edge;
    }
    let log = spec.domain.is_log();
    let mut prev = ratio.value(edge);
    let mut x = edge;
    for _ in 0..12 {
        let y = if log {
            if upper {
                x * 2.0
            } else {
                x * 0.5
            }
        } else if upper {
            x + 1.0 + x.abs()
        } else {
            x - 1.0 - x.abs()
        };
        if (upper && y >= end) || (!upper && y <= end) {
            break;
        }
        let v = ratio.value(y);
        let dir = if upper { 1.0 } else { -1.0 };
        if !((v - prev) * sign * dir > 0.0) {
            return edge;
        }
        prev = v;
        x = y;
    }
    end
}
