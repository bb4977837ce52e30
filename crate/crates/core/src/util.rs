//! Grid helpers.

/// `n` points from `lo` to `hi` inclusive. A single point sits at `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect();
    // pin the endpoints exactly
    if let Some(first) = v.first_mut() {
        *first = lo;
    }
    if n > 1 {
        v[n - 1] = hi;
    }
    v
}

/// Base-2 grid `2^start, 2^(start+step), ...` with `n` points.
pub fn pow2_grid(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (start + step * i as f64).exp2()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spaces_hit_endpoints() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        let l = logspace(10.0, 1000.0, 3);
        assert_eq!(l[0], 10.0);
        assert!((l[1] - 100.0).abs() < 1e-12);
        assert_eq!(l[2], 1000.0);
        assert_eq!(logspace(5.0, 9.0, 1), vec![5.0]);
    }
}
