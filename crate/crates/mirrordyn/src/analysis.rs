//! Noise decomposition, Monte-Carlo tail estimation, and sample-complexity
//! calculators.
//!
//! The gradient noise of the Markov oracle at step `n` is
//! `S_{n+1} = G(x_n, S_n) - grad f(x_n)`. Through the Poisson solution `Gt`
//! of the chain it splits exactly as `S_{n+1} = A1_{n+1} + A2_{n+1}` with
//!
//! ```text
//! A1_{n+1} = Gt(x_n, S_{n+1}) - (P Gt)(x_n, S_n)   (martingale difference)
//! A2_{n+1} = Gt(x_n, S_n) - Gt(x_n, S_{n+1})       (telescoping bias)
//! ```
//!
//! [`decompose_noise`] verifies the identity step by step with exact solves,
//! and [`martingale_check`] asserts the zero conditional mean of `A1` both
//! exactly (through the kernel row) and by sampling.
//!
//! The tail experiments estimate `P(f(z_n) - f* >= eps)` (convex) and
//! `P(min_k Gap(x_k) >= eps)` (non-convex) over independent replications and
//! compare them against the Azuma-type bounds
//!
//! ```text
//! convex:     exp(- eps^2 (sum a_k)^2 / (72 D^2 G^2 sum a_k^2))
//! non-convex: exp(- eps^4 (sum a_k)^2 / (18 G^4 sum a_k^2))
//! ```
//!
//! wherever the burn-in preconditions on `sum a_k` hold. Dominance is
//! asserted one-sided (empirical tail minus its Wilson half-width must not
//! exceed the bound): these are upper bounds, tightness is not claimed.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{MirrorError, Result};
use crate::geometry::{MirrorMap, SimplexPoint};
use crate::markov::{apply_kernel_expectation, poisson_solve, sample_row};
use crate::optimizer::{run_smd, OracleOrder, RecordMode, RunOptions, StepSchedule, Trajectory};
use crate::problems::{ProblemConstants, ProblemSpec};
use crate::stationarity;

/// z-value of the 95% Wilson interval.
const WILSON_Z: f64 = 1.959_963_984_540_054;

/// Per-step record of the exact noise decomposition.
#[derive(Debug, Clone)]
pub struct NoiseStep {
    pub n: usize,
    /// `G(x_n, S_n) - grad f(x_n)`.
    pub noise: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    /// `||noise - a1 - a2||_inf`.
    pub residual: f64,
    /// `||sum_{s'} P[s, s'] Gt[s'] - (P Gt)[s]||_inf`, the exact
    /// conditional mean of `A1` given the step's state.
    pub exact_cond_mean: f64,
}

/// Full decomposition of a recorded trajectory.
#[derive(Debug, Clone)]
pub struct NoiseDecomposition {
    pub steps: Vec<NoiseStep>,
    pub max_residual: f64,
    pub max_exact_cond_mean: f64,
}

/// Splits the recorded noise into martingale and telescoping parts with an
/// exact Poisson solve at every step. Needs [`RecordMode::Full`].
pub fn decompose_noise(traj: &Trajectory, prob: &ProblemSpec) -> Result<NoiseDecomposition> {
    let iterates = traj.iterates.as_ref().ok_or(MirrorError::MissingFullRecord)?;
    let mut steps = Vec::with_capacity(traj.n_iters);
    let mut max_residual = 0.0f64;
    let mut max_exact = 0.0f64;
    let d = prob.d();
    for n in 1..=traj.n_iters {
        let x = &iterates[n - 1];
        let s = traj.states[n - 1];
        let s_next = traj.states[n];

        let oracle = prob.oracle_at(x.as_slice())?;
        let g_values = prob.gradient_field_matrix(&oracle);
        let gt = poisson_solve(&oracle.p, &oracle.mu, &g_values)?;
        let pgt = apply_kernel_expectation(&oracle.p, &gt)?;

        let mut noise = vec![0.0; d];
        let mut a1 = vec![0.0; d];
        let mut a2 = vec![0.0; d];
        let mut residual = 0.0f64;
        for j in 0..d {
            noise[j] = g_values[(s, j)] - oracle.grad_f[j];
            a1[j] = gt[(s_next, j)] - pgt[(s, j)];
            a2[j] = gt[(s, j)] - gt[(s_next, j)];
            residual = residual.max((noise[j] - a1[j] - a2[j]).abs());
        }

        // Conditional mean of A1 through the kernel row, summed by hand so
        // it exercises a route independent of the matrix product.
        let mut exact = 0.0f64;
        for j in 0..d {
            let mut acc = 0.0;
            for sp in 0..prob.m() {
                acc += oracle.p[(s, sp)] * gt[(sp, j)];
            }
            exact = exact.max((acc - pgt[(s, j)]).abs());
        }

        max_residual = max_residual.max(residual);
        max_exact = max_exact.max(exact);
        steps.push(NoiseStep {
            n,
            noise,
            a1,
            a2,
            residual,
            exact_cond_mean: exact,
        });
    }
    Ok(NoiseDecomposition {
        steps,
        max_residual,
        max_exact_cond_mean: max_exact,
    })
}

/// Outcome of the martingale-difference check at one `(x, s)`.
#[derive(Debug, Clone)]
pub struct MartingaleReport {
    /// `||E[A1 | x, s]||_inf` computed exactly through the kernel row.
    pub exact_cond_mean: f64,
    pub sample_mean: Vec<f64>,
    pub sample_std: Vec<f64>,
    /// `mean_i sqrt(M) / std_i` per coordinate (0 where the draw is
    /// deterministic and the mean matches exactly).
    pub z_scores: Vec<f64>,
}

/// Verifies `E[A1 | F_n] = 0`: exactly via the kernel row, and empirically
/// from `m_samples` successor draws.
pub fn martingale_check(
    prob: &ProblemSpec,
    x: &SimplexPoint,
    s: usize,
    m_samples: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    if s >= prob.m() {
        return Err(MirrorError::IndexOutOfRange {
            index: s,
            len: prob.m(),
        });
    }
    let d = prob.d();
    let oracle = prob.oracle_at(x.as_slice())?;
    let g_values = prob.gradient_field_matrix(&oracle);
    let gt = poisson_solve(&oracle.p, &oracle.mu, &g_values)?;
    let pgt = apply_kernel_expectation(&oracle.p, &gt)?;

    let mut exact = 0.0f64;
    for j in 0..d {
        let mut acc = 0.0;
        for sp in 0..prob.m() {
            acc += oracle.p[(s, sp)] * gt[(sp, j)];
        }
        exact = exact.max((acc - pgt[(s, j)]).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for k in 1..=m_samples {
        let sp = sample_row(&oracle.p, s, &mut rng)?;
        for j in 0..d {
            let a1 = gt[(sp, j)] - pgt[(s, j)];
            let delta = a1 - mean[j];
            mean[j] += delta / k as f64;
            m2[j] += delta * (a1 - mean[j]);
        }
    }
    let std: Vec<f64> = m2
        .iter()
        .map(|&v| (v / (m_samples.max(2) - 1) as f64).sqrt())
        .collect();
    let z_scores: Vec<f64> = mean
        .iter()
        .zip(&std)
        .map(|(&m, &s)| {
            if s > 0.0 {
                m * (m_samples as f64).sqrt() / s
            } else if m.abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(MartingaleReport {
        exact_cond_mean: exact,
        sample_mean: mean,
        sample_std: std,
        z_scores,
    })
}

// ---------------------------------------------------------------------------
// Concentration bounds and their burn-in preconditions.
// ---------------------------------------------------------------------------

/// Convex ergodic-iterate tail bound
/// `exp(- eps^2 (sum a)^2 / (72 D^2 G^2 sum a^2))`; 1 when the sums vanish.
pub fn convex_tail_bound(eps: f64, sum_a: f64, sum_a2: f64, d_diam: f64, g_bound: f64) -> f64 {
    if sum_a <= 0.0 || sum_a2 <= 0.0 {
        return 1.0;
    }
    let expo = eps * eps * sum_a * sum_a / (72.0 * d_diam * d_diam * g_bound * g_bound * sum_a2);
    (-expo).exp()
}

/// Burn-in condition under which [`convex_tail_bound`] applies:
/// `sum a >= max{ (3/eps)(D_R(x*, x_1) + 4 G D),
///               3 (G + G^2 + 2 L_Pi D G) / (2 sigma eps) * sum a^2 }`.
pub fn convex_precondition(
    eps: f64,
    sum_a: f64,
    sum_a2: f64,
    bregman_x1: f64,
    c: &ProblemConstants,
) -> bool {
    if eps <= 0.0 {
        return false;
    }
    let g = c.g_bound;
    let first = 3.0 / eps * (bregman_x1 + 4.0 * g * c.d_diam);
    let second =
        3.0 * (g + g * g + 2.0 * c.l_pi * c.d_diam * g) / (2.0 * c.sigma_r * eps) * sum_a2;
    sum_a >= first.max(second)
}

/// Non-convex minimum-gap tail bound
/// `exp(- eps^4 (sum a)^2 / (18 G^4 sum a^2))`.
pub fn nonconvex_tail_bound(eps: f64, sum_a: f64, sum_a2: f64, g_bound: f64) -> f64 {
    if sum_a <= 0.0 || sum_a2 <= 0.0 {
        return 1.0;
    }
    let g4 = g_bound.powi(4);
    let expo = eps.powi(4) * sum_a * sum_a / (18.0 * g4 * sum_a2);
    (-expo).exp()
}

/// Burn-in condition under which [`nonconvex_tail_bound`] applies:
/// `sum a >= max{ (3/eps^2)(f(x_1) + 3 G),
///               (3/eps^2)(L_nu G^2 + L_Pi G^2 + L G^2 / 2) sum a^2 }`.
pub fn nonconvex_precondition(
    eps: f64,
    sum_a: f64,
    sum_a2: f64,
    f_x1: f64,
    c: &ProblemConstants,
) -> bool {
    if eps <= 0.0 {
        return false;
    }
    let g2 = c.g_bound * c.g_bound;
    let first = 3.0 / (eps * eps) * (f_x1 + 3.0 * c.g_bound);
    let second =
        3.0 / (eps * eps) * (c.l_nu * g2 + c.l_pi * g2 + c.l_smooth * g2 / 2.0) * sum_a2;
    sum_a >= first.max(second)
}

/// Gradient-domination tail bound for `min_k f(x_k) - f*`:
/// `exp(- eps^2 (sum a)^2 / (18 G^4 sum a^2))`.
pub fn pl_tail_bound(eps: f64, sum_a: f64, sum_a2: f64, g_bound: f64) -> f64 {
    if sum_a <= 0.0 || sum_a2 <= 0.0 {
        return 1.0;
    }
    let g4 = g_bound.powi(4);
    let expo = eps * eps * sum_a * sum_a / (18.0 * g4 * sum_a2);
    (-expo).exp()
}

/// Burn-in condition under which [`pl_tail_bound`] applies:
/// `f(x_1) + 3 G^2 <= (eps/3) sum a` and
/// `(L_nu G^2 + L_Pi G^2 + L G^2 / 2) sum a^2 <= (eps/3) sum a`.
pub fn pl_precondition(
    eps: f64,
    sum_a: f64,
    sum_a2: f64,
    f_x1: f64,
    c: &ProblemConstants,
) -> bool {
    if eps <= 0.0 {
        return false;
    }
    let g2 = c.g_bound * c.g_bound;
    let lhs2 = (c.l_nu * g2 + c.l_pi * g2 + c.l_smooth * g2 / 2.0) * sum_a2;
    f_x1 + 3.0 * g2 <= eps / 3.0 * sum_a && lhs2 <= eps / 3.0 * sum_a
}

/// Half-width of the 95% Wilson score interval for a proportion.
pub fn wilson_half_width(p_hat: f64, m: usize) -> f64 {
    let n = m as f64;
    let z2 = WILSON_Z * WILSON_Z;
    (WILSON_Z / (1.0 + z2 / n)) * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt()
}

// ---------------------------------------------------------------------------
// Monte-Carlo tail experiments.
// ---------------------------------------------------------------------------

/// Which tail statistic a [`TailEstimate`] tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailKind {
    /// `f(z_n) - f* >= eps` for the ergodic average.
    ConvexErgodic,
    /// `min_{k <= n} Gap(x_k) >= eps`.
    NonconvexMinGap,
}

/// One `(n, eps)` grid cell.
#[derive(Debug, Clone)]
pub struct TailCell {
    pub n: usize,
    pub eps: f64,
    pub p_hat: f64,
    pub half_width: f64,
    pub bound: f64,
    pub precondition_ok: bool,
}

impl TailCell {
    /// One-sided dominance where the precondition holds and the bound bites.
    pub fn dominance_ok(&self) -> bool {
        if !self.precondition_ok || self.bound >= 1.0 {
            return true;
        }
        (self.p_hat - self.half_width).max(0.0) <= self.bound + 1e-15
    }
}

/// Monte-Carlo tail probabilities over an `(n, eps)` grid with the paired
/// theoretical bound values.
#[derive(Debug, Clone)]
pub struct TailEstimate {
    pub kind: TailKind,
    pub cells: Vec<TailCell>,
    /// Gradient-domination cells for `min_k f(x_k) - f*`, present when the
    /// problem records `mu_pl` and an optimum.
    pub pl_cells: Option<Vec<TailCell>>,
    pub checkpoints: Vec<usize>,
    pub m_runs: usize,
    pub fingerprint: String,
}

impl TailEstimate {
    /// Cells violating one-sided dominance (empty means the estimate is
    /// consistent with the bounds).
    pub fn dominance_violations(&self) -> Vec<&TailCell> {
        self.cells
            .iter()
            .chain(self.pl_cells.iter().flatten())
            .filter(|c| !c.dominance_ok())
            .collect()
    }

    /// CSV export: fingerprint comment, fixed header, one row per cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# config_fingerprint={}", self.fingerprint)?;
        writeln!(w, "n,eps,p_hat,half_width,bound,precondition_ok")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.n, c.eps, c.p_hat, c.half_width, c.bound, c.precondition_ok
            )?;
        }
        Ok(())
    }
}

/// Geometric checkpoint grid `{32, 64, ...} ∪ {n}`, capped at `n`.
pub fn geometric_checkpoints(n: usize) -> Vec<usize> {
    let mut pts = Vec::new();
    let mut c = 32usize;
    while c < n {
        pts.push(c);
        c = c.saturating_mul(2);
    }
    pts.push(n);
    pts
}

fn validate_grid(eps_grid: &[f64]) -> Result<()> {
    if eps_grid.is_empty() {
        return Err(MirrorError::InvalidConfig("eps_grid must not be empty".into()));
    }
    if eps_grid.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(MirrorError::InvalidConfig(
            "eps_grid entries must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

/// Partial sums `(sum a_k, sum a_k^2)` up to each checkpoint.
fn schedule_sums(sched: &StepSchedule, checkpoints: &[usize]) -> Result<Vec<(f64, f64)>> {
    let n_max = *checkpoints.last().expect("non-empty checkpoints");
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut sum_a = 0.0;
    let mut sum_a2 = 0.0;
    let mut idx = 0;
    for n in 1..=n_max {
        let a = sched.alpha(n)?;
        sum_a += a;
        sum_a2 += a * a;
        if checkpoints[idx] == n {
            out.push((sum_a, sum_a2));
            idx += 1;
            if idx == checkpoints.len() {
                break;
            }
        }
    }
    Ok(out)
}

/// Runs `m_runs` independent trajectories of the convex problem and compares
/// ergodic-iterate tails `P(f(z_n) - f* >= eps)` against the paired bound.
///
/// Replications run in parallel; the per-run seed is `seed + run_index`, so
/// results are independent of worker scheduling.
#[allow(clippy::too_many_arguments)]
pub fn tail_experiment_convex(
    prob: &ProblemSpec,
    map: &MirrorMap,
    sched: &StepSchedule,
    n_iters: usize,
    m_runs: usize,
    eps_grid: &[f64],
    seed: u64,
) -> Result<TailEstimate> {
    validate_grid(eps_grid)?;
    if m_runs == 0 {
        return Err(MirrorError::InvalidConfig("need at least one run".into()));
    }
    let (x_star, _) = prob.optimum().ok_or(MirrorError::MissingOptimum)?;
    let x_init = SimplexPoint::uniform(prob.d());
    let bregman_x1 = map.bregman(x_star.as_slice(), x_init.as_slice())?;
    let checkpoints = geometric_checkpoints(n_iters);
    let sums = schedule_sums(sched, &checkpoints)?;

    let per_run: Vec<Vec<f64>> = (0..m_runs)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let traj = run_smd(
                prob,
                map,
                sched,
                n_iters,
                &x_init,
                0,
                seed.wrapping_add(r as u64),
                &RunOptions {
                    record: Some(RecordMode::Stride(n_iters.max(1))),
                    checkpoints: checkpoints.clone(),
                    oracle_order: OracleOrder::GradientFirst,
                },
            )?;
            Ok(traj
                .checkpoints
                .iter()
                .map(|c| c.f_z_gap.expect("optimum recorded"))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let c = prob.constants();
    let mut cells = Vec::new();
    for (i, &n) in checkpoints.iter().enumerate() {
        let (sum_a, sum_a2) = sums[i];
        for &eps in eps_grid {
            let hits = per_run.iter().filter(|run| run[i] >= eps).count();
            let p_hat = hits as f64 / m_runs as f64;
            cells.push(TailCell {
                n,
                eps,
                p_hat,
                half_width: wilson_half_width(p_hat, m_runs),
                bound: convex_tail_bound(eps, sum_a, sum_a2, c.d_diam, c.g_bound),
                precondition_ok: convex_precondition(eps, sum_a, sum_a2, bregman_x1, c),
            });
        }
    }
    Ok(TailEstimate {
        kind: TailKind::ConvexErgodic,
        cells,
        pl_cells: None,
        checkpoints,
        m_runs,
        fingerprint: String::from("none"),
    })
}

/// Runs `m_runs` independent trajectories and compares running-minimum gap
/// tails `P(min_{k <= n} Gap(x_k) >= eps)` against the non-convex bound.
///
/// When the problem records a gradient-domination constant and an optimum,
/// the corresponding `min_k f(x_k) - f*` tail is evaluated as well.
#[allow(clippy::too_many_arguments)]
pub fn tail_experiment_nonconvex(
    prob: &ProblemSpec,
    map: &MirrorMap,
    sched: &StepSchedule,
    n_iters: usize,
    m_runs: usize,
    eps_grid: &[f64],
    seed: u64,
) -> Result<TailEstimate> {
    validate_grid(eps_grid)?;
    if m_runs == 0 {
        return Err(MirrorError::InvalidConfig("need at least one run".into()));
    }
    let x_init = SimplexPoint::uniform(prob.d());
    let f_x1 = prob.objective(x_init.as_slice());
    let checkpoints = geometric_checkpoints(n_iters);
    let sums = schedule_sums(sched, &checkpoints)?;
    let with_pl = prob.constants().mu_pl.is_some() && prob.optimum().is_some();

    struct RunStats {
        min_gap: Vec<f64>,
        min_f_gap: Option<Vec<f64>>,
    }

    let per_run: Vec<RunStats> = (0..m_runs)
        .into_par_iter()
        .map(|r| -> Result<RunStats> {
            let traj = run_smd(
                prob,
                map,
                sched,
                n_iters,
                &x_init,
                0,
                seed.wrapping_add(r as u64),
                &RunOptions {
                    record: Some(RecordMode::Stride(n_iters.max(1))),
                    checkpoints: checkpoints.clone(),
                    oracle_order: OracleOrder::GradientFirst,
                },
            )?;
            Ok(RunStats {
                min_gap: traj.checkpoints.iter().map(|c| c.min_gap).collect(),
                min_f_gap: with_pl.then(|| {
                    traj.checkpoints
                        .iter()
                        .map(|c| c.min_f_gap.expect("optimum recorded"))
                        .collect()
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let c = prob.constants();
    let mut cells = Vec::new();
    let mut pl_cells = with_pl.then(Vec::new);
    for (i, &n) in checkpoints.iter().enumerate() {
        let (sum_a, sum_a2) = sums[i];
        for &eps in eps_grid {
            let hits = per_run.iter().filter(|run| run.min_gap[i] >= eps).count();
            let p_hat = hits as f64 / m_runs as f64;
            cells.push(TailCell {
                n,
                eps,
                p_hat,
                half_width: wilson_half_width(p_hat, m_runs),
                bound: nonconvex_tail_bound(eps, sum_a, sum_a2, c.g_bound),
                precondition_ok: nonconvex_precondition(eps, sum_a, sum_a2, f_x1, c),
            });
            if let Some(pl) = pl_cells.as_mut() {
                let hits = per_run
                    .iter()
                    .filter(|run| run.min_f_gap.as_ref().expect("with_pl")[i] >= eps)
                    .count();
                let p_hat = hits as f64 / m_runs as f64;
                pl.push(TailCell {
                    n,
                    eps,
                    p_hat,
                    half_width: wilson_half_width(p_hat, m_runs),
                    bound: pl_tail_bound(eps, sum_a, sum_a2, c.g_bound),
                    precondition_ok: pl_precondition(eps, sum_a, sum_a2, f_x1, c),
                });
            }
        }
    }
    Ok(TailEstimate {
        kind: TailKind::NonconvexMinGap,
        cells,
        pl_cells,
        checkpoints,
        m_runs,
        fingerprint: String::from("none"),
    })
}

// ---------------------------------------------------------------------------
// Sample complexity.
// ---------------------------------------------------------------------------

/// Result of the sample-complexity computation for `alpha_n = a / sqrt(n)`.
#[derive(Debug, Clone)]
pub struct ComplexityReport {
    /// Smallest `n` from which all three clauses hold for every `n' >= n`.
    pub n: u64,
    /// Per-clause thresholds; `n` is their maximum.
    pub clause_thresholds: [u64; 3],
    /// 1-based index of the binding clause.
    pub binding_clause: usize,
    /// Order-level iteration-count estimate (logarithmic factors dropped),
    /// for comparison against `n`.
    pub order_estimate: f64,
    pub eps: f64,
    pub p: f64,
    pub a: f64,
    pub d1: f64,
}

/// The three clause coefficients for given inputs:
/// `n >= c1`, `n >= k2 ln^2(1+n)`, `n >= k3 ln(1+n)`.
pub fn complexity_clause_coefficients(
    eps: f64,
    p: f64,
    constants: &ProblemConstants,
    d1: f64,
    a: f64,
) -> Result<(f64, f64, f64)> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(MirrorError::NoFiniteN(format!("eps must be positive, got {eps}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(MirrorError::NoFiniteN(format!("p must lie in (0, 1), got {p}")));
    }
    if a <= 0.0 || !a.is_finite() {
        return Err(MirrorError::NoFiniteN(format!(
            "schedule scale must be positive, got {a}"
        )));
    }
    let g = constants.g_bound;
    let dd = constants.d_diam;
    let sig = constants.sigma_r;
    if g <= 0.0 || dd <= 0.0 || sig <= 0.0 || d1 < 0.0 {
        return Err(MirrorError::NoFiniteN(
            "constants must be positive (G, D, sigma_R) and D1 nonnegative".into(),
        ));
    }
    let c1 = 9.0 / (2.0 * a * a * eps * eps) * (d1 * d1 + 16.0 * g * g * dd * dd);
    let c = 3.0 * (g + g * g + 2.0 * constants.l_pi * dd * g) / (2.0 * sig);
    let k2 = c * c / (4.0 * a * a * eps * eps);
    let k3 = 18.0 * dd * dd * g * g / (eps * eps) * (1.0 / p).ln();
    Ok((c1, k2, k3))
}

/// Whether all three clauses hold at `n`.
pub fn complexity_clauses_hold(n: u64, c1: f64, k2: f64, k3: f64) -> bool {
    let nf = n as f64;
    let l = (1.0 + nf).ln();
    nf >= c1 && nf >= k2 * l * l && nf >= k3 * l
}

/// Smallest `N` such that the three clauses hold for every `n >= N`,
/// found by doubling to a certified monotone region then bisecting for the
/// last failing integer of each clause.
pub fn sample_complexity(
    eps: f64,
    p: f64,
    constants: &ProblemConstants,
    d1: f64,
    a: f64,
) -> Result<ComplexityReport> {
    let (c1, k2, k3) = complexity_clause_coefficients(eps, p, constants, d1, a)?;
    let t1 = if c1 <= 1.0 { 1 } else { c1.ceil() as u64 };
    let t2 = log_clause_threshold(k2, 2)?;
    let t3 = log_clause_threshold(k3, 1)?;
    let thresholds = [t1, t2, t3];
    let n = *thresholds.iter().max().expect("three clauses");
    let binding = thresholds
        .iter()
        .position(|&t| t == n)
        .expect("max is attained")
        + 1;

    let g = constants.g_bound;
    let dd = constants.d_diam;
    let order_estimate = 1.0 / (eps * eps)
        * (d1 * d1 + g * g * dd * dd)
            .max(
                (g.powi(4) + g * g * (1.0 + 2.0 * constants.l_pi * dd).powi(2))
                    / (a * a * constants.sigma_r * constants.sigma_r),
            )
            .max(g * g * dd * dd * (1.0 / p).ln());

    Ok(ComplexityReport {
        n,
        clause_thresholds: thresholds,
        binding_clause: binding,
        order_estimate,
        eps,
        p,
        a,
        d1,
    })
}

/// Smallest integer from which `n >= k ln^q(1+n)` holds forever.
///
/// `h(n) = n - k ln^q(1+n)` decreases to a single continuous minimum and
/// then increases, so the last failing integer sits at the upward crossing;
/// it is found by doubling past the crossing and integer bisection.
fn log_clause_threshold(k: f64, q: i32) -> Result<u64> {
    if k <= 0.0 {
        return Ok(1);
    }
    let h = |n: f64| n - k * (1.0 + n).ln().powi(q);
    // phi(n) = k q ln^{q-1}(1+n) / (1+n) bounds h' from below by 1 - phi;
    // phi is decreasing for n >= 2 (for q in {1, 2}).
    let phi = |n: f64| k * q as f64 * (1.0 + n).ln().powi(q - 1) / (1.0 + n);

    // Smallest integer m >= 2 with phi(m) <= 1; h is nondecreasing beyond.
    let m = if phi(2.0) <= 1.0 {
        2u64
    } else {
        let mut hi = 4u64;
        while phi(hi as f64) > 1.0 {
            hi = hi.checked_mul(2).ok_or_else(|| {
                MirrorError::NoFiniteN("clause coefficient too large".into())
            })?;
        }
        let mut lo = 2u64;
        while lo + 1 < hi {
            let mid = lo + (hi - lo) / 2;
            if phi(mid as f64) <= 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };

    if h(m as f64) >= 0.0 {
        // h decreases into m, so nothing at or beyond max(2, ...) fails;
        // only the 1..2 head can fail (q = 2 has an increasing phi there).
        let mut last_fail = 0u64;
        for n in 1..=2u64.min(m) {
            if h(n as f64) < 0.0 {
                last_fail = n;
            }
        }
        return Ok(last_fail + 1);
    }

    // Doubling past the upward crossing.
    let mut hi = m.max(2);
    while h(hi as f64) < 0.0 {
        hi = hi
            .checked_mul(2)
            .ok_or_else(|| MirrorError::NoFiniteN("clause coefficient too large".into()))?;
    }
    // Largest failing integer in [m, hi]: h restricted there is monotone.
    let mut lo = m;
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if h(mid as f64) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + 1)
}

// ---------------------------------------------------------------------------
// Bias-ledger inequalities.
// ---------------------------------------------------------------------------

/// One partial-sum comparison.
#[derive(Debug, Clone)]
pub struct BiasRow {
    pub n: usize,
    pub lhs_abs: f64,
    pub rhs: f64,
}

/// Running comparison of a bias partial sum against its closed-form cap.
#[derive(Debug, Clone)]
pub struct BiasLedger {
    pub rows: Vec<BiasRow>,
    /// Max over n of `lhs / rhs`.
    pub max_ratio: f64,
    pub all_dominated: bool,
}

/// Convex bias ledger: partial sums `|sum_k a_k <x* - x_k, A2_{k+1}>|`
/// against `4 G D + (G^2 / 2 sigma) sum a^2 + (D L_Pi G / sigma) sum a^2`.
pub fn bias_bound_check_convex(traj: &Trajectory, prob: &ProblemSpec) -> Result<BiasLedger> {
    let (x_star, _) = prob.optimum().ok_or(MirrorError::MissingOptimum)?;
    let x_star = x_star.clone();
    let decomp = decompose_noise(traj, prob)?;
    let iterates = traj.iterates.as_ref().ok_or(MirrorError::MissingFullRecord)?;
    let c = prob.constants();
    let g = c.g_bound;

    let mut rows = Vec::with_capacity(traj.n_iters);
    let mut lhs = 0.0f64;
    let mut sum_a2 = 0.0f64;
    let mut max_ratio = 0.0f64;
    for (k, step) in decomp.steps.iter().enumerate() {
        let a = traj.alphas[k];
        let x = &iterates[k];
        let inner: f64 = x_star
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .zip(&step.a2)
            .map(|((&xs, &xk), &a2)| (xs - xk) * a2)
            .sum();
        lhs += a * inner;
        sum_a2 += a * a;
        let rhs = 4.0 * g * c.d_diam
            + g * g / (2.0 * c.sigma_r) * sum_a2
            + c.d_diam * c.l_pi * g / c.sigma_r * sum_a2;
        max_ratio = max_ratio.max(lhs.abs() / rhs);
        rows.push(BiasRow {
            n: k + 1,
            lhs_abs: lhs.abs(),
            rhs,
        });
    }
    Ok(BiasLedger {
        all_dominated: max_ratio <= 1.0,
        rows,
        max_ratio,
    })
}

/// Non-convex bias ledger: `|sum_k a_k <grad f(x_k), T3_k>|` with `T3` the
/// tangent projection of the Hessian-preconditioned `A2`, against
/// `3 G^2 a_1 + (L_nu G^2 + L_Pi G^2) sum a^2`.
pub fn bias_bound_check_nonconvex(traj: &Trajectory, prob: &ProblemSpec) -> Result<BiasLedger> {
    let decomp = decompose_noise(traj, prob)?;
    let iterates = traj.iterates.as_ref().ok_or(MirrorError::MissingFullRecord)?;
    let c = prob.constants();
    let g2 = c.g_bound * c.g_bound;
    let alpha1 = traj.alphas.first().copied().unwrap_or(0.0);

    let mut rows = Vec::with_capacity(traj.n_iters);
    let mut lhs = 0.0f64;
    let mut sum_a2 = 0.0f64;
    let mut max_ratio = 0.0f64;
    for (k, step) in decomp.steps.iter().enumerate() {
        let a = traj.alphas[k];
        let x = &iterates[k];
        let t3 = stationarity::projected_direction(x.as_slice(), &step.a2)?;
        let grad = prob.mean_field_gradient(x.as_slice());
        let inner: f64 = grad.iter().zip(&t3).map(|(&gi, &ti)| gi * ti).sum();
        lhs += a * inner;
        sum_a2 += a * a;
        let rhs = 3.0 * g2 * alpha1 + (c.l_nu * g2 + c.l_pi * g2) * sum_a2;
        max_ratio = max_ratio.max(lhs.abs() / rhs);
        rows.push(BiasRow {
            n: k + 1,
            lhs_abs: lhs.abs(),
            rhs,
        });
    }
    Ok(BiasLedger {
        all_dominated: max_ratio <= 1.0,
        rows,
        max_ratio,
    })
}
