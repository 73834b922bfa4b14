//! Projected descent direction and stationarity gap on the simplex interior.
//!
//! At an interior point the tangent cone of the simplex is the fixed
//! hyperplane `{v : 1'v = 0}`, and the projection of the natural gradient
//! direction in the entropy Hessian metric has the closed form
//!
//! ```text
//! nu_x = -x .* g + <x, g> x
//! ```
//!
//! The stationarity gap is its local-norm length
//! `Gap(x) = ||nu_x||_x = sqrt(nu' diag(1/x) nu)`; it vanishes exactly at
//! stationary points of the field `g`. [`qp_projection_oracle`] solves the
//! same tangent-space program by a direct KKT linear solve and exists so the
//! closed form can be checked against an independent route.
//!
//! Boundary points are rejected: the closed form and the fixed tangent space
//! are interior facts, and the local norm degrades as coordinates vanish.

use nalgebra::{DMatrix, DVector};

use crate::error::{MirrorError, Result};
use crate::geometry::{norm, MirrorMap, Norm};

/// Outcome of a gap evaluation.
#[derive(Debug, Clone)]
pub struct GapReport {
    /// Projected tangent direction `nu_x`.
    pub nu: Vec<f64>,
    /// `||nu_x||_x`, the gap in the local Hessian norm.
    pub gap: f64,
    /// `||nu_x||_1`, a boundary-robust secondary report for plotting.
    pub nu_l1: f64,
    /// `|<g, nu> + nu' diag(1/x) nu|`; zero in exact arithmetic.
    pub inner_identity_residual: f64,
}

fn check_inputs(x: &[f64], g: &[f64]) -> Result<()> {
    if g.len() != x.len() {
        return Err(MirrorError::DimensionMismatch {
            expected: x.len(),
            got: g.len(),
        });
    }
    if let Some((i, &xi)) = x.iter().enumerate().find(|(_, &xi)| xi <= 0.0) {
        return Err(MirrorError::Domain(format!(
            "projected direction needs a strictly interior point: x[{i}] = {xi}"
        )));
    }
    if g.iter().any(|gi| !gi.is_finite()) {
        return Err(MirrorError::NonFiniteInput("gradient field".into()));
    }
    Ok(())
}

/// Closed-form tangent projection `nu = -x .* g + <x, g> x`.
///
/// Satisfies `1'nu = 0` exactly in exact arithmetic and is linear in `g`.
pub fn projected_direction(x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_inputs(x, g)?;
    let xg: f64 = x.iter().zip(g).map(|(&xi, &gi)| xi * gi).sum();
    Ok(x.iter()
        .zip(g)
        .map(|(&xi, &gi)| -xi * gi + xg * xi)
        .collect())
}

/// Stationarity gap `||nu_x||_x` in the local entropy-Hessian norm.
pub fn gap(x: &[f64], g: &[f64]) -> Result<f64> {
    let nu = projected_direction(x, g)?;
    MirrorMap::negative_entropy().local_norm(x, &nu)
}

/// Gap plus the diagnostics recorded by the experiment harness.
pub fn gap_report(x: &[f64], g: &[f64]) -> Result<GapReport> {
    let nu = projected_direction(x, g)?;
    let map = MirrorMap::negative_entropy();
    let gap = map.local_norm(x, &nu)?;
    let inner: f64 = g.iter().zip(&nu).map(|(&gi, &ni)| gi * ni).sum();
    let quad: f64 = x.iter().zip(&nu).map(|(&xi, &ni)| ni * ni / xi).sum();
    Ok(GapReport {
        nu_l1: norm(&nu, Norm::L1),
        inner_identity_residual: (inner + quad).abs(),
        nu,
        gap,
    })
}

/// Independent test oracle: solves the equality-constrained program
///
/// ```text
/// min_{1'nu = 0} (nu + diag(x) g)' diag(1/x) (nu + diag(x) g)
/// ```
///
/// by assembling and solving the (d+1) x (d+1) KKT system directly. Used
/// only to cross-check [`projected_direction`]; never on the hot path.
pub fn qp_projection_oracle(x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_inputs(x, g)?;
    let d = x.len();
    let mut kkt = DMatrix::zeros(d + 1, d + 1);
    let mut rhs = DVector::zeros(d + 1);
    for i in 0..d {
        kkt[(i, i)] = 2.0 / x[i];
        kkt[(i, d)] = 1.0;
        kkt[(d, i)] = 1.0;
        rhs[i] = -2.0 * g[i];
    }
    let sol = kkt.full_piv_lu().solve(&rhs).ok_or(MirrorError::SingularKkt)?;
    Ok(sol.as_slice()[..d].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_interior(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..d).map(|_| 0.02 + rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / s).collect()
    }

    #[test]
    fn constant_field_has_zero_direction() {
        let x = [0.2, 0.3, 0.5];
        let nu = projected_direction(&x, &[3.7, 3.7, 3.7]).unwrap();
        for v in nu {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_two_dim_example() {
        // KKT solve of the tangent QP at x = (1/2, 1/2), g = (1, -1).
        let nu = projected_direction(&[0.5, 0.5], &[1.0, -1.0]).unwrap();
        assert!((nu[0] + 0.5).abs() < 1e-15);
        assert!((nu[1] - 0.5).abs() < 1e-15);
        let gp = gap(&[0.5, 0.5], &[1.0, -1.0]).unwrap();
        assert!((gp - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frozen_unit_basis_example() {
        // 4x4 KKT system at the uniform point with g = e1.
        let x = [1.0 / 3.0; 3];
        let nu = projected_direction(&x, &[1.0, 0.0, 0.0]).unwrap();
        let expected = [-2.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0];
        for (a, b) in nu.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        let oracle = qp_projection_oracle(&x, &[1.0, 0.0, 0.0]).unwrap();
        for (a, b) in oracle.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn gap_scales_linearly_in_field_strength() {
        let x = [0.1, 0.6, 0.3];
        let g = [0.4, -1.0, 2.5];
        let g3: Vec<f64> = g.iter().map(|v| 3.0 * v).collect();
        let a = gap(&x, &g).unwrap();
        let b = gap(&x, &g3).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_kkt_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let d = rng.random_range(2..=20);
            let x = random_interior(&mut rng, d);
            let g: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = projected_direction(&x, &g).unwrap();
            let b = qp_projection_oracle(&x, &g).unwrap();
            for (ai, bi) in a.iter().zip(&b) {
                assert!((ai - bi).abs() < 1e-10, "{ai} vs {bi}");
            }
        }
    }

    #[test]
    fn tangency_orthogonality_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..1000 {
            let d = rng.random_range(2..=12);
            let x = random_interior(&mut rng, d);
            let g1: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let g2: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();

            let report = gap_report(&x, &g1).unwrap();
            let ones: f64 = report.nu.iter().sum();
            assert!(ones.abs() < 1e-12, "tangency violated: {ones}");
            assert!(
                report.inner_identity_residual < 1e-10,
                "orthogonality identity violated: {}",
                report.inner_identity_residual
            );

            // nu is linear in the field.
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let combo: Vec<f64> = g1.iter().zip(&g2).map(|(u, v)| a * u + b * v).collect();
            let nu_combo = projected_direction(&x, &combo).unwrap();
            let nu1 = projected_direction(&x, &g1).unwrap();
            let nu2 = projected_direction(&x, &g2).unwrap();
            for i in 0..d {
                assert!((nu_combo[i] - (a * nu1[i] + b * nu2[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nu_of_the_gradient_field_is_lipschitz_with_recorded_constant() {
        // ||nu_x - nu_y||_1 <= (2L + 3G) ||x - y||_1 with g = grad f of a
        // built-in problem and the problem's recorded constants.
        let prob = crate::problems::make_nonconvex_problem(4, 3, 21, 1.5).unwrap();
        let l_nu = prob.constants().l_nu;
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..10_000 {
            let x = random_interior(&mut rng, 4);
            let y = random_interior(&mut rng, 4);
            let nx = projected_direction(&x, &prob.mean_field_gradient(&x)).unwrap();
            let ny = projected_direction(&y, &prob.mean_field_gradient(&y)).unwrap();
            let dn: f64 = nx.iter().zip(&ny).map(|(a, b)| (a - b).abs()).sum();
            let dx: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
            assert!(
                dn <= l_nu * dx + 1e-12,
                "Lipschitz bound violated: {dn} > {l_nu} * {dx}"
            );
        }
    }

    #[test]
    fn boundary_point_rejected() {
        let err = projected_direction(&[1.0, 0.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, MirrorError::Domain(_)));
        let err = gap(&[0.5, 0.5, 0.0], &[1.0, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, MirrorError::Domain(_)));
    }

    #[test]
    fn zero_field_oracle() {
        let nu = qp_projection_oracle(&[0.25, 0.25, 0.5], &[0.0, 0.0, 0.0]).unwrap();
        for v in nu {
            assert!(v.abs() < 1e-14);
        }
    }
}
