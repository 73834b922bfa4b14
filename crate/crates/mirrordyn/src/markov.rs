//! Finite-state, decision-dependent Markov kernels.
//!
//! A [`DecisionKernel`] maps a decision vector `x` to an `m x m`
//! row-stochastic transition matrix `P(x)`. Alongside sampling
//! ([`kernel_step`]), the module provides the two exact solves that the rest
//! of the crate uses as ground truth:
//!
//! * [`stationary_distribution`]: the unique `mu` with `mu' P = mu'`,
//!   from the linear system `(P' - I) mu = 0` with one row replaced by the
//!   normalization `sum mu = 1` (that row is redundant because the rows of
//!   `P' - I` sum to zero).
//! * [`poisson_solve`]: the solution `Gt` of `(I - P) Gt = G - 1 (mu' G)`.
//!   The solution is only determined up to an additive constant per column;
//!   we pin the centered representative `mu' Gt = 0` via the fundamental
//!   matrix `Z = (I - P + 1 mu')^{-1}` applied to the centered data.
//!
//! State spaces are finite and dense solves are `O(m^3)`, which is the point:
//! at desk scale these are exact oracles for the chain-noise decomposition.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MirrorError, Result};

/// Decision-to-matrix map for custom kernels.
type KernelFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Row sums may deviate from 1 by at most this much at sampling time.
pub const ROW_SUM_SAMPLING_TOL: f64 = 1e-9;
/// Row-sum tolerance enforced when kernels are constructed or loaded.
pub const ROW_SUM_BUILD_TOL: f64 = 1e-12;
/// Residual `||mu' P - mu'||_inf` guaranteed by the stationary solve.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-12;
/// Residual of the Poisson identity guaranteed by [`poisson_solve`].
pub const POISSON_RESIDUAL_TOL: f64 = 1e-10;

/// How the kernel depends on the decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `P(x)` is the same matrix for every `x`.
    Constant,
    /// `P(x)[s, s'] ~ B[s, s'] exp(theta <w_{s'}, x>)`, row-normalized.
    GibbsTilted,
    /// Arbitrary user-supplied map `x -> P(x)`.
    Custom,
}

#[derive(Clone)]
enum KernelSpec {
    Constant(DMatrix<f64>),
    GibbsTilted {
        base: DMatrix<f64>,
        tilts: Vec<Vec<f64>>,
        theta: f64,
    },
    Custom(KernelFn),
}

/// A decision-dependent transition kernel on `{0, ..., m-1}`.
#[derive(Clone)]
pub struct DecisionKernel {
    m: usize,
    spec: KernelSpec,
}

impl fmt::Debug for DecisionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecisionKernel")
            .field("m", &self.m)
            .field("kind", &self.kind())
            .finish()
    }
}

impl DecisionKernel {
    /// Iterate-independent kernel. The matrix must be row-stochastic.
    pub fn constant(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(MirrorError::DimensionMismatch {
                expected: p.nrows(),
                got: p.ncols(),
            });
        }
        validate_row_stochastic(&p, ROW_SUM_BUILD_TOL)?;
        Ok(Self {
            m: p.nrows(),
            spec: KernelSpec::Constant(p),
        })
    }

    /// Gibbs-tilted kernel `P(x)[s, s'] ~ base[s, s'] exp(theta <tilts[s'], x>)`.
    ///
    /// `base` must be strictly positive so every `P(x)` is ergodic.
    pub fn gibbs_tilted(base: DMatrix<f64>, tilts: Vec<Vec<f64>>, theta: f64) -> Result<Self> {
        let m = base.nrows();
        if base.ncols() != m {
            return Err(MirrorError::DimensionMismatch {
                expected: m,
                got: base.ncols(),
            });
        }
        if tilts.len() != m {
            return Err(MirrorError::DimensionMismatch {
                expected: m,
                got: tilts.len(),
            });
        }
        if base.iter().any(|&b| b <= 0.0 || !b.is_finite()) {
            return Err(MirrorError::NonErgodic(
                "Gibbs base matrix must be strictly positive".into(),
            ));
        }
        if !theta.is_finite() || theta < 0.0 {
            return Err(MirrorError::Domain(format!(
                "tilt strength must be finite and nonnegative, got {theta}"
            )));
        }
        Ok(Self {
            m,
            spec: KernelSpec::GibbsTilted { base, tilts, theta },
        })
    }

    /// Arbitrary kernel; `f(x)` must return an `m x m` row-stochastic matrix.
    pub fn custom<F>(m: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            m,
            spec: KernelSpec::Custom(Arc::new(f)),
        }
    }

    /// Loads a constant kernel from a plain-text matrix file: one row per
    /// line, whitespace-separated entries, validated row-stochastic.
    pub fn from_matrix_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let row = row.map_err(|e| {
                MirrorError::InvalidConfig(format!(
                    "kernel file {}: line {}: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            rows.push(row);
        }
        let m = rows.len();
        if m == 0 {
            return Err(MirrorError::InvalidConfig(format!(
                "kernel file {} is empty",
                path.display()
            )));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(MirrorError::DimensionMismatch {
                expected: m,
                got: bad.len(),
            });
        }
        let p = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
        Self::constant(p)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> KernelKind {
        match self.spec {
            KernelSpec::Constant(_) => KernelKind::Constant,
            KernelSpec::GibbsTilted { .. } => KernelKind::GibbsTilted,
            KernelSpec::Custom(_) => KernelKind::Custom,
        }
    }

    /// The transition matrix at decision `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match &self.spec {
            KernelSpec::Constant(p) => Ok(p.clone()),
            KernelSpec::GibbsTilted { base, tilts, theta } => {
                if let Some(t) = tilts.first() {
                    if t.len() != x.len() {
                        return Err(MirrorError::DimensionMismatch {
                            expected: t.len(),
                            got: x.len(),
                        });
                    }
                }
                // The tilt multiplies columns; normalize rows afterwards.
                let col_factor: Vec<f64> = tilts
                    .iter()
                    .map(|w| {
                        let dot: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
                        (theta * dot).exp()
                    })
                    .collect();
                let m = self.m;
                let mut p = DMatrix::zeros(m, m);
                for s in 0..m {
                    let mut z = 0.0;
                    for sp in 0..m {
                        let v = base[(s, sp)] * col_factor[sp];
                        p[(s, sp)] = v;
                        z += v;
                    }
                    for sp in 0..m {
                        p[(s, sp)] /= z;
                    }
                }
                Ok(p)
            }
            KernelSpec::Custom(f) => {
                let p = f(x);
                if p.nrows() != self.m || p.ncols() != self.m {
                    return Err(MirrorError::DimensionMismatch {
                        expected: self.m,
                        got: p.nrows().max(p.ncols()),
                    });
                }
                validate_row_stochastic(&p, ROW_SUM_SAMPLING_TOL)?;
                Ok(p)
            }
        }
    }
}

/// Current chain position plus the deterministic generator that drives it.
///
/// Advancing twice from equal `(state, rng, x)` yields identical successors;
/// distinct trajectories get distinct seeds and never share a `ChainState`.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub state: usize,
    rng: ChaCha8Rng,
}

impl ChainState {
    pub fn new(state: usize, seed: u64) -> Self {
        Self {
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Samples the successor state by inverse CDF over row `P(x)[s, .]`,
/// advancing the generator exactly once.
pub fn kernel_step(kernel: &DecisionKernel, x: &[f64], state: &ChainState) -> Result<ChainState> {
    let p = kernel.evaluate(x)?;
    let mut next = state.clone();
    next.state = sample_row(&p, state.state, &mut next.rng)?;
    Ok(next)
}

/// Inverse-CDF draw from row `s` of `p`, consuming one uniform variate.
pub(crate) fn sample_row(p: &DMatrix<f64>, s: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    let m = p.nrows();
    if s >= m {
        return Err(MirrorError::IndexOutOfRange { index: s, len: m });
    }
    let mut sum = 0.0;
    for j in 0..m {
        let v = p[(s, j)];
        if v < -ROW_SUM_SAMPLING_TOL {
            return Err(MirrorError::NonStochasticRow { row: s, sum: v });
        }
        sum += v;
    }
    if (sum - 1.0).abs() > ROW_SUM_SAMPLING_TOL {
        return Err(MirrorError::NonStochasticRow { row: s, sum });
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = s;
    for j in 0..m {
        let v = p[(s, j)];
        if v > 0.0 {
            last_positive = j;
        }
        acc += v;
        if u < acc {
            return Ok(j);
        }
    }
    // u landed in the rounding gap past the accumulated sum.
    Ok(last_positive)
}

/// Unique stationary distribution of an ergodic row-stochastic matrix.
///
/// Solves `(P' - I) mu = 0` with the last equation replaced by
/// `sum mu = 1`, plus one step of iterative refinement. The replaced row is
/// redundant: every column of `P - I` sums to zero.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = p.nrows();
    if p.ncols() != m {
        return Err(MirrorError::DimensionMismatch {
            expected: m,
            got: p.ncols(),
        });
    }
    validate_row_stochastic(p, ROW_SUM_SAMPLING_TOL)?;
    if m == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }

    let mut a = p.transpose();
    for i in 0..m {
        a[(i, i)] -= 1.0;
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;

    let lu = a.clone().lu();
    let mut mu = lu
        .solve(&b)
        .ok_or_else(|| MirrorError::NonErgodic("singular stationary system".into()))?;
    // One refinement pass against the augmented system.
    let resid = &b - &a * &mu;
    if let Some(corr) = lu.solve(&resid) {
        mu += corr;
    }

    for v in mu.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 {
                return Err(MirrorError::NonErgodic(format!(
                    "stationary solve produced negative mass {v}"
                )));
            }
            *v = 0.0;
        }
    }
    let s: f64 = mu.iter().sum();
    mu /= s;

    let residual = stationary_residual(p, &mu);
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(MirrorError::NonErgodic(format!(
            "stationary residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(mu)
}

/// `||mu' P - mu'||_inf`.
pub fn stationary_residual(p: &DMatrix<f64>, mu: &DVector<f64>) -> f64 {
    let lhs = p.transpose() * mu;
    (lhs - mu).amax()
}

/// Solves the Poisson equation `(I - P) Gt = G - 1 (mu' G)` with the
/// normalization `mu' Gt = 0`, via the fundamental matrix
/// `Z = (I - P + 1 mu')^{-1}` applied to the centered data.
///
/// `g_values` holds one d-vector per state, as rows of an `m x d` matrix.
pub fn poisson_solve(
    p: &DMatrix<f64>,
    mu: &DVector<f64>,
    g_values: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = p.nrows();
    if p.ncols() != m {
        return Err(MirrorError::DimensionMismatch {
            expected: m,
            got: p.ncols(),
        });
    }
    if mu.len() != m || g_values.nrows() != m {
        return Err(MirrorError::DimensionMismatch {
            expected: m,
            got: if mu.len() != m {
                mu.len()
            } else {
                g_values.nrows()
            },
        });
    }

    let centered = center_rows(g_values, mu);

    // I - P + 1 mu'
    let mut fund = -p.clone();
    for i in 0..m {
        fund[(i, i)] += 1.0;
        for j in 0..m {
            fund[(i, j)] += mu[j];
        }
    }
    let lu = fund.clone().lu();
    let mut gt = lu
        .solve(&centered)
        .ok_or_else(|| MirrorError::SingularFundamentalMatrix("LU solve failed".into()))?;
    let resid = &centered - &fund * &gt;
    if let Some(corr) = lu.solve(&resid) {
        gt += corr;
    }

    // Pin the centered representative exactly.
    gt = center_rows(&gt, mu);

    let residual = poisson_residual(p, mu, g_values, &gt);
    if residual > POISSON_RESIDUAL_TOL {
        return Err(MirrorError::SingularFundamentalMatrix(format!(
            "Poisson residual {residual:.3e}; is mu stationary for P?"
        )));
    }
    Ok(gt)
}

/// Max-norm residual of the Poisson identity
/// `(I - P) Gt - (G - 1 (mu' G))`.
pub fn poisson_residual(
    p: &DMatrix<f64>,
    mu: &DVector<f64>,
    g_values: &DMatrix<f64>,
    gt: &DMatrix<f64>,
) -> f64 {
    let centered = center_rows(g_values, mu);
    let lhs = gt - p * gt;
    (lhs - centered).amax()
}

/// Expectation of `Gt` under one kernel transition: row `s` of the output is
/// `sum_{s'} P[s, s'] Gt[s', .]`.
pub fn apply_kernel_expectation(p: &DMatrix<f64>, gt: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if p.ncols() != gt.nrows() {
        return Err(MirrorError::DimensionMismatch {
            expected: p.ncols(),
            got: gt.nrows(),
        });
    }
    Ok(p * gt)
}

fn center_rows(g: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let mean = g.transpose() * mu; // d-vector mu' G
    let mut out = g.clone();
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            out[(i, j)] -= mean[j];
        }
    }
    out
}

/// Checks nonnegativity and row sums of a candidate transition matrix.
pub fn validate_row_stochastic(p: &DMatrix<f64>, tol: f64) -> Result<()> {
    for i in 0..p.nrows() {
        let mut sum = 0.0;
        for j in 0..p.ncols() {
            let v = p[(i, j)];
            if v < -tol || !v.is_finite() {
                return Err(MirrorError::NonStochasticRow { row: i, sum: v });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > tol {
            return Err(MirrorError::NonStochasticRow { row: i, sum });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn two_state() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8])
    }

    fn random_ergodic(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        // Entries in [0.2, 1.2) before normalization keep the minimum
        // post-normalization entry above 0.01 for m <= 8.
        let mut p = DMatrix::from_fn(m, m, |_, _| 0.2 + rng.random::<f64>());
        for i in 0..m {
            let s: f64 = p.row(i).iter().sum();
            for j in 0..m {
                p[(i, j)] /= s;
            }
        }
        p
    }

    #[test]
    fn deterministic_rows_sample_deterministically() {
        // Row s is a unit vector at the permuted position.
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let kernel = DecisionKernel::constant(p).unwrap();
        for seed in 0..20 {
            let s0 = ChainState::new(0, seed);
            let s1 = kernel_step(&kernel, &[1.0], &s0).unwrap();
            assert_eq!(s1.state, 1);
            let s2 = kernel_step(&kernel, &[1.0], &s1).unwrap();
            assert_eq!(s2.state, 2);
        }
    }

    #[test]
    fn absorbing_first_row_always_goes_to_zero() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let kernel = DecisionKernel::constant(p).unwrap();
        let mut st = ChainState::new(0, 99);
        for _ in 0..100 {
            st = kernel_step(&kernel, &[1.0], &st).unwrap();
            assert_eq!(st.state, 0);
        }
    }

    #[test]
    fn chain_state_advance_is_reproducible() {
        let kernel = DecisionKernel::constant(two_state()).unwrap();
        let a = ChainState::new(0, 42);
        let b = a.clone();
        let mut pa = a;
        let mut pb = b;
        for _ in 0..500 {
            pa = kernel_step(&kernel, &[1.0], &pa).unwrap();
            pb = kernel_step(&kernel, &[1.0], &pb).unwrap();
            assert_eq!(pa.state, pb.state);
        }
    }

    #[test]
    fn two_state_visit_frequency_matches_stationary() {
        let kernel = DecisionKernel::constant(two_state()).unwrap();
        let mut st = ChainState::new(0, 7);
        let n = 1_000_000usize;
        let mut visits0 = 0usize;
        for _ in 0..n {
            if st.state == 0 {
                visits0 += 1;
            }
            st = kernel_step(&kernel, &[1.0], &st).unwrap();
        }
        let freq = visits0 as f64 / n as f64;
        assert!(
            (freq - 2.0 / 3.0).abs() < 0.002,
            "empirical frequency {freq}"
        );
    }

    #[test]
    fn non_stochastic_row_detected_at_sampling() {
        let p = DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.2, 0.8]);
        let kernel = DecisionKernel::custom(2, move |_| p.clone());
        let st = ChainState::new(0, 1);
        let err = kernel_step(&kernel, &[1.0], &st).unwrap_err();
        assert!(matches!(err, MirrorError::NonStochasticRow { row: 0, .. }));
    }

    #[test]
    fn stationary_two_state_exact() {
        let mu = stationary_distribution(&two_state()).unwrap();
        assert!((mu[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((mu[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn stationary_doubly_stochastic_is_uniform() {
        // Convex combination of permutation matrices is doubly stochastic.
        let m = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut p = DMatrix::zeros(m, m);
        let weights = [0.4, 0.35, 0.25];
        for &w in &weights {
            let mut perm: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            for (i, &pi) in perm.iter().enumerate() {
                p[(i, pi)] += w;
            }
        }
        let mu = stationary_distribution(&p).unwrap();
        for v in mu.iter() {
            assert!((v - 1.0 / m as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn stationary_iid_kernel_returns_the_row() {
        let r = [0.1, 0.25, 0.65];
        let p = DMatrix::from_fn(3, 3, |_, j| r[j]);
        let mu = stationary_distribution(&p).unwrap();
        for (a, b) in mu.iter().zip(&r) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn stationary_rejects_reducible_chain() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let err = stationary_distribution(&p).unwrap_err();
        assert!(matches!(err, MirrorError::NonErgodic(_)), "{err}");
    }

    #[test]
    fn stationary_residual_small_on_random_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let m = rng.random_range(2..=8);
            let p = random_ergodic(&mut rng, m);
            let mu = stationary_distribution(&p).unwrap();
            assert!(stationary_residual(&p, &mu) <= STATIONARY_RESIDUAL_TOL);
        }
    }

    #[test]
    fn poisson_constant_g_gives_zero() {
        let p = two_state();
        let mu = stationary_distribution(&p).unwrap();
        let g = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
        let gt = poisson_solve(&p, &mu, &g).unwrap();
        assert!(gt.amax() < 1e-12);
    }

    #[test]
    fn poisson_iid_kernel_returns_centered_data() {
        let r = [0.3, 0.3, 0.4];
        let p = DMatrix::from_fn(3, 3, |_, j| r[j]);
        let mu = stationary_distribution(&p).unwrap();
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, -1.0, 1.0]);
        let gt = poisson_solve(&p, &mu, &g).unwrap();
        let mean = g.transpose() * &mu;
        for i in 0..3 {
            for j in 0..2 {
                assert!((gt[(i, j)] - (g[(i, j)] - mean[j])).abs() < 1e-12);
            }
        }
        // Rows of P all equal mu, so the kernel expectation of the pinned
        // solution vanishes.
        let pg = apply_kernel_expectation(&p, &gt).unwrap();
        assert!(pg.amax() < 1e-12);
    }

    #[test]
    fn poisson_two_state_frozen_solution() {
        // (I - P) Gt = G - 1 mu'G with mu'Gt = 0 for G = (1, 0):
        // direct solve of the augmented 2x2 system gives Gt = (10/9, -20/9).
        let p = two_state();
        let mu = stationary_distribution(&p).unwrap();
        let g = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let gt = poisson_solve(&p, &mu, &g).unwrap();
        assert!((gt[(0, 0)] - 10.0 / 9.0).abs() < 1e-12, "{}", gt[(0, 0)]);
        assert!((gt[(1, 0)] + 20.0 / 9.0).abs() < 1e-12, "{}", gt[(1, 0)]);
    }

    #[test]
    fn poisson_residual_and_centering_on_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let m = rng.random_range(2..=8);
            let d = rng.random_range(2..=6);
            let p = random_ergodic(&mut rng, m);
            let mu = stationary_distribution(&p).unwrap();
            let g = DMatrix::from_fn(m, d, |_, _| rng.random_range(-2.0..2.0));
            let gt = poisson_solve(&p, &mu, &g).unwrap();
            assert!(poisson_residual(&p, &mu, &g, &gt) <= POISSON_RESIDUAL_TOL);
            let pin = (gt.transpose() * &mu).amax();
            assert!(pin <= 1e-12, "centering pin violated: {pin}");
        }
    }

    #[test]
    fn poisson_detects_wrong_mu() {
        let p = two_state();
        let wrong_mu = DVector::from_row_slice(&[0.5, 0.5]);
        let g = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let err = poisson_solve(&p, &wrong_mu, &g).unwrap_err();
        assert!(matches!(err, MirrorError::SingularFundamentalMatrix(_)));
    }

    #[test]
    fn kernel_expectation_trivia() {
        let p = two_state();
        let zero = DMatrix::zeros(2, 3);
        assert!(apply_kernel_expectation(&p, &zero).unwrap().amax() == 0.0);
        let id = DMatrix::identity(2, 2);
        let gt = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(apply_kernel_expectation(&id, &gt).unwrap(), gt);
        let bad = DMatrix::zeros(3, 2);
        assert!(matches!(
            apply_kernel_expectation(&p, &bad).unwrap_err(),
            MirrorError::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn matrix_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.txt");
        std::fs::write(&good, "0.9 0.1\n0.2 0.8\n").unwrap();
        let k = DecisionKernel::from_matrix_file(&good).unwrap();
        assert_eq!(k.m(), 2);
        assert_eq!(k.kind(), KernelKind::Constant);
        assert_eq!(k.evaluate(&[0.5]).unwrap(), two_state());

        let bad_sum = dir.path().join("bad_sum.txt");
        std::fs::write(&bad_sum, "0.9 0.2\n0.2 0.8\n").unwrap();
        assert!(matches!(
            DecisionKernel::from_matrix_file(&bad_sum).unwrap_err(),
            MirrorError::NonStochasticRow { .. }
        ));

        let ragged = dir.path().join("ragged.txt");
        std::fs::write(&ragged, "0.9 0.1\n1.0\n").unwrap();
        assert!(matches!(
            DecisionKernel::from_matrix_file(&ragged).unwrap_err(),
            MirrorError::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn visit_frequencies_match_stationary_within_clt_bands() {
        // Gibbs kernel frozen at one decision; per-state empirical visit
        // frequency over 1e6 steps vs mu within 3 asymptotic standard
        // errors. The asymptotic variance of the indicator average is
        // computed exactly from its Poisson solution:
        // sigma^2 = sum_s mu_s (h_s^2 - (P h)_s^2).
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = 4;
        let d = 3;
        let base = DMatrix::from_fn(m, m, |_, _| 0.75 + 0.5 * rng.random::<f64>());
        let tilts: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.random_range(-0.5..0.5)).collect())
            .collect();
        let kernel = DecisionKernel::gibbs_tilted(base, tilts, 2.0).unwrap();
        let x = [0.5, 0.3, 0.2];
        let p = kernel.evaluate(&x).unwrap();
        let mu = stationary_distribution(&p).unwrap();

        let n = 1_000_000usize;
        let mut counts = vec![0usize; m];
        let mut st = ChainState::new(0, 424_242);
        for _ in 0..n {
            counts[st.state] += 1;
            st.state = sample_row(&p, st.state, &mut st.rng).unwrap();
        }
        for s in 0..m {
            let indicator = DMatrix::from_fn(m, 1, |i, _| if i == s { 1.0 } else { 0.0 });
            let h = poisson_solve(&p, &mu, &indicator).unwrap();
            let ph = &p * &h;
            let sigma2: f64 = (0..m)
                .map(|i| mu[i] * (h[(i, 0)] * h[(i, 0)] - ph[(i, 0)] * ph[(i, 0)]))
                .sum();
            let se = (sigma2 / n as f64).sqrt();
            let freq = counts[s] as f64 / n as f64;
            assert!(
                (freq - mu[s]).abs() <= 3.0 * se,
                "state {s}: freq {freq:.6} vs mu {:.6}, 3se = {:.6}",
                mu[s],
                3.0 * se
            );
        }
    }

    #[test]
    fn gibbs_kernel_rows_are_stochastic_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 4;
        let d = 5;
        let base = DMatrix::from_fn(m, m, |_, _| 0.75 + 0.5 * rng.random::<f64>());
        let tilts: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.random_range(-0.5..0.5)).collect())
            .collect();
        let k = DecisionKernel::gibbs_tilted(base, tilts, 2.0).unwrap();
        for _ in 0..50 {
            let raw: Vec<f64> = (0..d).map(|_| 0.05 + rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            let x: Vec<f64> = raw.iter().map(|r| r / s).collect();
            let p = k.evaluate(&x).unwrap();
            validate_row_stochastic(&p, ROW_SUM_BUILD_TOL).unwrap();
            assert!(p.iter().all(|&v| v > 0.0));
        }
    }
}
