//! Evaluation grids.

/// `n` log-spaced points from `a` to `b` inclusive (`0 < a < b`).
pub fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a && n >= 2, "log_space({a}, {b}, {n})");
    let (la, lb) = (a.ln(), b.ln());
    let step = (lb - la) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| (la + step * i as f64).exp()).collect();
    out[0] = a;
    out[n - 1] = b;
    out
}

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn lin_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(b > a && n >= 2);
    let step = (b - a) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| a + step * i as f64).collect();
    out[n - 1] = b;
    out
}

/// Log-spaced when the range is positive, linear otherwise.
pub fn auto_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    if a > 0.0 {
        log_space(a, b, n)
    } else {
        lin_space(a, b, n)
    }
}

/// Merge extra points strictly inside `(a, b)` into a sorted grid, dropping near duplicates.
pub fn with_points(mut grid: Vec<f64>, extra: &[f64]) -> Vec<f64> {
    let (a, b) = (grid[0], grid[grid.len() - 1]);
    grid.extend(extra.iter().copied().filter(|p| *p > a && *p < b));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|p, q| (*p - *q).abs() <= 1e-14 * (1.0 + q.abs()));
    grid
}

/// Midpoint in log scale for positive intervals, arithmetic otherwise.
pub fn mid(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (a * b).sqrt()
    } else {
        0.5 * (a + b)
    }
}
