//! Independent reference implementations used by tests and `validate`.
//!
//! Everything here deliberately takes a different numerical route than the
//! production code it checks: the proximal step is recovered by root-finding
//! on the KKT multiplier instead of direct normalization, and the simplex
//! projection by bisection on the threshold instead of sort-and-threshold.
//! Nothing in this module is on a hot path.

/// Entropic proximal step via the KKT system: stationarity
/// `ln x'_i = ln x_i - a g_i - a lam - 1` plus primal feasibility
/// `sum x'_i = 1`, solved by bisection on the multiplier `lam`.
pub fn entropic_prox_kkt(x: &[f64], g: &[f64], alpha: f64) -> Vec<f64> {
    let mass = |lam: f64| -> f64 {
        x.iter()
            .zip(g)
            .map(|(&xi, &gi)| (xi.ln() - alpha * gi - alpha * lam - 1.0).exp())
            .sum()
    };
    let mut lo = -1.0;
    let mut hi = 1.0;
    while mass(lo) < 1.0 {
        lo = lo * 2.0 - 1.0;
    }
    while mass(hi) > 1.0 {
        hi = hi * 2.0 + 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| (xi.ln() - alpha * gi - alpha * lam - 1.0).exp())
        .collect()
}

/// Euclidean projection onto the simplex by bisection on the threshold in
/// `x_i = max(v_i - theta, 0)`.
pub fn projection_by_bisection(v: &[f64]) -> Vec<f64> {
    let mass = |theta: f64| -> f64 { v.iter().map(|&vi| (vi - theta).max(0.0)).sum() };
    let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    v.iter().map(|&vi| (vi - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kkt_prox_recovers_the_logistic_point() {
        let out = entropic_prox_kkt(&[0.5, 0.5], &[1.0, 0.0], 1.0);
        assert!((out[0] - 1.0 / (1.0 + std::f64::consts::E)).abs() < 1e-12);
        let s: f64 = out.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_projection_feasible() {
        let out = projection_by_bisection(&[2.0, -1.0, 0.3]);
        let s: f64 = out.iter().sum();
        assert!((s - 1.0).abs() < 1e-10);
        assert!(out.iter().all(|&v| v >= 0.0));
    }
}
