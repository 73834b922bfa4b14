//! Constructed decision-dependent test problems.
//!
//! Every built-in problem pairs a closed-form objective on the simplex with
//! a Gibbs-tilted kernel and per-state gradient offsets arranged so that the
//! stationary average of the per-state gradient field is *exactly* the
//! gradient of the objective:
//!
//! ```text
//! G(x, s) = grad f(x) + (c_s - sum_{s'} mu_x(s') c_{s'})
//! ```
//!
//! The offsets cancel under `mu_x` for any kernel, so the mean-field
//! condition holds by construction and every downstream decomposition and
//! bound hypothesis is machine-checkable. An arbitrary per-state field would
//! generally have a non-conservative stationary average (no `f` exists).
//!
//! Constants are recorded with respect to the (l1, l-infinity) norm pair.
//! `G_bound` and `L_smooth` are analytic over-estimates from the objective
//! coefficients; `L_Pi` (the Lipschitz constant of the Poisson solution in
//! `x`) has no closed form, so it is estimated by sampling difference
//! quotients and inflating the maximum by 1.5. Overestimates are safe: the
//! constants only enter bound computations.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MirrorError, Result};
use crate::geometry::SimplexPoint;
use crate::markov::{poisson_solve, stationary_distribution, DecisionKernel};
use crate::stationarity;

/// Number of sampled decisions used for the empirical `L_Pi` estimate.
const L_PI_SAMPLE_PAIRS: usize = 120;
/// Safety factor applied to the sampled `L_Pi` maximum.
const L_PI_INFLATION: f64 = 1.5;

/// Closed-form objective families.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveKind {
    /// `f(x) = ||x - p||^2 / 2`.
    ConvexQuadratic { center: Vec<f64> },
    /// `f(x) = <cost, x>`.
    Linear { cost: Vec<f64> },
    /// `f(x) = sum_i a_i x_i^2 + <b, x>` with mixed-sign `a`.
    NonConvexQuadratic { diag: Vec<f64>, linear: Vec<f64> },
}

impl ObjectiveKind {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::ConvexQuadratic { center } => {
                0.5 * x
                    .iter()
                    .zip(center)
                    .map(|(&xi, &pi)| (xi - pi) * (xi - pi))
                    .sum::<f64>()
            }
            Self::Linear { cost } => x.iter().zip(cost).map(|(&xi, &ci)| xi * ci).sum(),
            Self::NonConvexQuadratic { diag, linear } => x
                .iter()
                .zip(diag.iter().zip(linear))
                .map(|(&xi, (&ai, &bi))| ai * xi * xi + bi * xi)
                .sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::ConvexQuadratic { center } => {
                x.iter().zip(center).map(|(&xi, &pi)| xi - pi).collect()
            }
            Self::Linear { cost } => cost.clone(),
            Self::NonConvexQuadratic { diag, linear } => x
                .iter()
                .zip(diag.iter().zip(linear))
                .map(|(&xi, (&ai, &bi))| 2.0 * ai * xi + bi)
                .collect(),
        }
    }

    /// Analytic over-estimate of `sup_x ||grad f(x)||_inf` on the simplex.
    fn gradient_sup_bound(&self) -> f64 {
        match self {
            Self::ConvexQuadratic { center } => center
                .iter()
                .map(|&pi| pi.max(1.0 - pi).abs())
                .fold(0.0, f64::max),
            Self::Linear { cost } => cost.iter().map(|c| c.abs()).fold(0.0, f64::max),
            Self::NonConvexQuadratic { diag, linear } => diag
                .iter()
                .zip(linear)
                .map(|(&ai, &bi)| bi.abs().max((2.0 * ai + bi).abs()))
                .fold(0.0, f64::max),
        }
    }

    /// Gradient Lipschitz constant w.r.t. the (l1, l-infinity) pair.
    fn lipschitz_smooth(&self) -> f64 {
        match self {
            Self::ConvexQuadratic { .. } => 1.0,
            Self::Linear { .. } => 0.0,
            Self::NonConvexQuadratic { diag, .. } => {
                2.0 * diag.iter().map(|a| a.abs()).fold(0.0, f64::max)
            }
        }
    }
}

/// Problem constants used by bound computations, in the (l1, l-inf) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Analytic over-estimate of `sup_{x,s} ||G(x, s)||_inf`.
    pub g_bound: f64,
    /// Gradient Lipschitz constant of `f`.
    pub l_smooth: f64,
    /// Empirical Lipschitz constant of the Poisson solution in `x`.
    pub l_pi: f64,
    /// `2 L_smooth + 3 G_bound` exactly.
    pub l_nu: f64,
    /// l1 diameter of the simplex.
    pub d_diam: f64,
    /// Strong-convexity modulus of the mirror map.
    pub sigma_r: f64,
    /// Optional gradient-domination constant.
    pub mu_pl: Option<f64>,
    /// Empirical `sup ||Gt(x, s)||_inf` over the decision sample (reported;
    /// finite-state chains always admit a bound, its size is instance data).
    pub g_tilde_sup: f64,
}

/// An immutable test-problem bundle; shareable read-only across workers.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    d: usize,
    m: usize,
    kernel: DecisionKernel,
    offsets: Vec<Vec<f64>>,
    objective: ObjectiveKind,
    constants: ProblemConstants,
    optimum: Option<(SimplexPoint, f64)>,
}

/// Kernel matrix, stationary law, and offset mean at one decision point.
///
/// The optimizer evaluates this once per iteration and reuses it for both
/// the gradient sample and the chain transition.
#[derive(Debug, Clone)]
pub struct OracleAt {
    pub p: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub mean_offset: Vec<f64>,
    pub grad_f: Vec<f64>,
}

impl ProblemSpec {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kernel(&self) -> &DecisionKernel {
        &self.kernel
    }

    pub fn objective_kind(&self) -> &ObjectiveKind {
        &self.objective
    }

    pub fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    pub fn optimum(&self) -> Option<(&SimplexPoint, f64)> {
        self.optimum.as_ref().map(|(x, f)| (x, *f))
    }

    /// Per-state offset vectors `c_s`.
    pub fn offsets(&self) -> &[Vec<f64>] {
        &self.offsets
    }

    /// Whether the objective is convex (tail experiments dispatch on this).
    pub fn is_convex_objective(&self) -> bool {
        match &self.objective {
            ObjectiveKind::ConvexQuadratic { .. } | ObjectiveKind::Linear { .. } => true,
            ObjectiveKind::NonConvexQuadratic { diag, .. } => diag.iter().all(|&a| a >= 0.0),
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.objective.value(x)
    }

    /// Exact mean-field gradient `grad f(x)` from the closed form, never
    /// through the chain. Ground truth for every diagnostic.
    pub fn mean_field_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.objective.gradient(x)
    }

    /// Kernel, stationary law, offset mean, and gradient at `x`.
    pub fn oracle_at(&self, x: &[f64]) -> Result<OracleAt> {
        let p = self.kernel.evaluate(x)?;
        let mu = stationary_distribution(&p)?;
        let mut mean_offset = vec![0.0; self.d];
        for (s, c) in self.offsets.iter().enumerate() {
            for (j, &cj) in c.iter().enumerate() {
                mean_offset[j] += mu[s] * cj;
            }
        }
        Ok(OracleAt {
            p,
            mu,
            mean_offset,
            grad_f: self.objective.gradient(x),
        })
    }

    /// The per-state gradient sample `G(x, s)`; deterministic in `(x, s)`.
    pub fn sample_subgradient(&self, x: &[f64], s: usize) -> Result<Vec<f64>> {
        if s >= self.m {
            return Err(MirrorError::IndexOutOfRange {
                index: s,
                len: self.m,
            });
        }
        let oracle = self.oracle_at(x)?;
        Ok(subgradient_from_oracle(&oracle, &self.offsets[s]))
    }

    /// All `m` per-state gradients at `x` as rows of an `m x d` matrix,
    /// the input to the Poisson solve.
    pub fn gradient_field_matrix(&self, oracle: &OracleAt) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.d, |s, j| {
            oracle.grad_f[j] + self.offsets[s][j] - oracle.mean_offset[j]
        })
    }

    /// Installs a gradient-domination constant estimated from samples:
    /// half the sampled minimum of `||nu_x||_x^2 / (2 (f(x) - f*))`.
    ///
    /// Requires a recorded optimum. Returns the installed value.
    pub fn estimate_mu_pl(&mut self, samples: usize, seed: u64) -> Result<f64> {
        let (_, f_star) = self.optimum.as_ref().ok_or(MirrorError::MissingOptimum)?;
        let f_star = *f_star;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ratio_min = f64::INFINITY;
        for _ in 0..samples {
            let x = random_interior(&mut rng, self.d);
            let fx = self.objective.value(x.as_slice());
            if fx - f_star < 1e-9 {
                continue;
            }
            let g = self.objective.gradient(x.as_slice());
            let gap = stationarity::gap(x.as_slice(), &g)?;
            ratio_min = ratio_min.min(gap * gap / (2.0 * (fx - f_star)));
        }
        if !ratio_min.is_finite() || ratio_min <= 0.0 {
            return Err(MirrorError::Domain(
                "could not estimate a positive gradient-domination constant".into(),
            ));
        }
        let mu = 0.5 * ratio_min;
        self.constants.mu_pl = Some(mu);
        Ok(mu)
    }
}

pub(crate) fn subgradient_from_oracle(oracle: &OracleAt, offset: &[f64]) -> Vec<f64> {
    oracle
        .grad_f
        .iter()
        .zip(offset.iter().zip(&oracle.mean_offset))
        .map(|(&gf, (&cs, &mc))| gf + cs - mc)
        .collect()
}

/// Convex instance: `f(x) = ||x - p||^2 / 2` with an interior center,
/// Gibbs-tilted kernel, exact recorded optimum.
pub fn make_convex_problem(d: usize, m: usize, seed: u64, theta: f64) -> Result<ProblemSpec> {
    let cfg = ProblemConfig {
        kind: ProblemKind::Convex,
        d,
        m,
        seed,
        theta,
        coefficients: None,
        kernel_file: None,
    };
    build_problem(&cfg)
}

/// Non-convex instance: `f(x) = sum a_i x_i^2 + <b, x>` with mixed-sign `a`
/// and `b` arranged so an interior stationary point exists. No optimum is
/// recorded; stationary points are characterized by `nu_x = 0`.
pub fn make_nonconvex_problem(d: usize, m: usize, seed: u64, theta: f64) -> Result<ProblemSpec> {
    let cfg = ProblemConfig {
        kind: ProblemKind::Nonconvex,
        d,
        m,
        seed,
        theta,
        coefficients: None,
        kernel_file: None,
    };
    build_problem(&cfg)
}

/// Problem family selector in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Convex,
    Nonconvex,
    Linear,
}

/// Explicit objective coefficients overriding the seeded draw.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoefficientOverrides {
    /// Center `p` for the convex quadratic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// Diagonal `a` for the non-convex quadratic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<Vec<f64>>,
    /// Linear part `b` for the non-convex quadratic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<Vec<f64>>,
    /// Cost vector for the linear objective.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<Vec<f64>>,
}

/// Reproducible problem description: `(kind, d, m, seed, theta)` plus
/// optional explicit coefficients and an optional constant-kernel file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientOverrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_file: Option<PathBuf>,
}

/// Builds a [`ProblemSpec`] from its config. Deterministic given the config.
pub fn build_problem(cfg: &ProblemConfig) -> Result<ProblemSpec> {
    if cfg.d < 2 {
        return Err(MirrorError::InvalidConfig(format!(
            "problem dimension must be >= 2, got {}",
            cfg.d
        )));
    }
    if cfg.m < 1 {
        return Err(MirrorError::InvalidConfig("state count must be >= 1".into()));
    }
    if !cfg.theta.is_finite() || cfg.theta < 0.0 {
        return Err(MirrorError::InvalidConfig(format!(
            "tilt strength must be finite and nonnegative, got {}",
            cfg.theta
        )));
    }
    let (d, m) = (cfg.d, cfg.m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Draw order is fixed so (kind, d, m, seed, theta) pins everything.
    let base = DMatrix::from_fn(m, m, |_, _| 0.75 + 0.5 * rng.random::<f64>());
    let tilts: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    let offsets: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| rng.random_range(-0.3..0.3)).collect())
        .collect();

    let objective = seeded_objective(cfg.kind, d, &mut rng);
    let objective = apply_overrides(objective, cfg.coefficients.as_ref(), d)?;

    let kernel = match &cfg.kernel_file {
        Some(path) => {
            let k = DecisionKernel::from_matrix_file(path)?;
            if k.m() != m {
                return Err(MirrorError::DimensionMismatch {
                    expected: m,
                    got: k.m(),
                });
            }
            k
        }
        None => {
            if cfg.theta == 0.0 || m == 1 {
                // Degenerate decision dependence: the row-normalized base.
                let mut p = base.clone();
                for i in 0..m {
                    let s: f64 = p.row(i).iter().sum();
                    for j in 0..m {
                        p[(i, j)] /= s;
                    }
                }
                DecisionKernel::constant(p)?
            } else {
                DecisionKernel::gibbs_tilted(base.clone(), tilts.clone(), cfg.theta)?
            }
        }
    };

    let optimum = match &objective {
        ObjectiveKind::ConvexQuadratic { center } if d <= 15 => {
            let (x, f) = simplex_quadratic_optimum(center)?;
            Some((SimplexPoint::new(x)?, f))
        }
        ObjectiveKind::Linear { cost } => {
            let (j, fj) = cost
                .iter()
                .copied()
                .enumerate()
                .fold((0usize, f64::INFINITY), |(bj, bv), (i, v)| {
                    if v < bv {
                        (i, v)
                    } else {
                        (bj, bv)
                    }
                });
            let mut x = vec![0.0; d];
            x[j] = 1.0;
            Some((SimplexPoint::new(x)?, fj))
        }
        _ => None,
    };

    let max_offset = offsets
        .iter()
        .flat_map(|c| c.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let g_bound = objective.gradient_sup_bound() + 2.0 * max_offset;
    let l_smooth = objective.lipschitz_smooth();

    let mut spec = ProblemSpec {
        d,
        m,
        kernel,
        offsets,
        objective,
        constants: ProblemConstants {
            g_bound,
            l_smooth,
            l_pi: 0.0,
            l_nu: 2.0 * l_smooth + 3.0 * g_bound,
            d_diam: 2.0,
            sigma_r: 1.0,
            mu_pl: None,
            g_tilde_sup: 0.0,
        },
        optimum,
    };
    let (l_pi, g_tilde_sup) = estimate_poisson_constants(&spec, cfg.seed)?;
    spec.constants.l_pi = l_pi;
    spec.constants.g_tilde_sup = g_tilde_sup;
    Ok(spec)
}

fn seeded_objective(kind: ProblemKind, d: usize, rng: &mut ChaCha8Rng) -> ObjectiveKind {
    match kind {
        ProblemKind::Convex => ObjectiveKind::ConvexQuadratic {
            center: random_interior_vec(rng, d),
        },
        ProblemKind::Nonconvex => {
            let mut diag: Vec<f64> = (0..d)
                .map(|_| {
                    let mag = rng.random_range(0.3..0.7);
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            if diag.iter().all(|&a| a >= 0.0) {
                diag[d - 1] = -diag[d - 1];
            }
            // Choose b so that grad f is constant at an interior point
            // x_bar: then nu_{x_bar} = 0 and a stationary point exists in
            // the relative interior.
            let x_bar = random_interior_vec(rng, d);
            let level = 0.2;
            let linear: Vec<f64> = diag
                .iter()
                .zip(&x_bar)
                .map(|(&ai, &xi)| level - 2.0 * ai * xi)
                .collect();
            ObjectiveKind::NonConvexQuadratic { diag, linear }
        }
        ProblemKind::Linear => ObjectiveKind::Linear {
            cost: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        },
    }
}

fn apply_overrides(
    objective: ObjectiveKind,
    overrides: Option<&CoefficientOverrides>,
    d: usize,
) -> Result<ObjectiveKind> {
    let Some(ov) = overrides else {
        return Ok(objective);
    };
    let check = |v: &Vec<f64>| -> Result<()> {
        if v.len() != d {
            return Err(MirrorError::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(MirrorError::NonFiniteInput("objective coefficients".into()));
        }
        Ok(())
    };
    Ok(match objective {
        ObjectiveKind::ConvexQuadratic { center } => {
            let center = match &ov.center {
                Some(c) => {
                    check(c)?;
                    c.clone()
                }
                None => center,
            };
            ObjectiveKind::ConvexQuadratic { center }
        }
        ObjectiveKind::Linear { cost } => {
            let cost = match &ov.cost {
                Some(c) => {
                    check(c)?;
                    c.clone()
                }
                None => cost,
            };
            ObjectiveKind::Linear { cost }
        }
        ObjectiveKind::NonConvexQuadratic { diag, linear } => {
            let diag = match &ov.diag {
                Some(a) => {
                    check(a)?;
                    a.clone()
                }
                None => diag,
            };
            let linear = match &ov.linear {
                Some(b) => {
                    check(b)?;
                    b.clone()
                }
                None => linear,
            };
            ObjectiveKind::NonConvexQuadratic { diag, linear }
        }
    })
}

/// Samples difference quotients of the Poisson solution to estimate its
/// Lipschitz constant in `x`, and records the empirical sup of `||Gt||_inf`.
fn estimate_poisson_constants(spec: &ProblemSpec, seed: u64) -> Result<(f64, f64)> {
    if spec.m == 1 {
        return Ok((0.0, 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let mut max_ratio = 0.0f64;
    let mut sup_gt = 0.0f64;
    for _ in 0..L_PI_SAMPLE_PAIRS {
        let x = random_interior(&mut rng, spec.d);
        let y = random_interior(&mut rng, spec.d);
        let gx = poisson_solution_at(spec, x.as_slice())?;
        let gy = poisson_solution_at(spec, y.as_slice())?;
        sup_gt = sup_gt.max(gx.amax()).max(gy.amax());
        let dist: f64 = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum();
        if dist < 1e-9 {
            continue;
        }
        let diff = (&gx - &gy).amax();
        max_ratio = max_ratio.max(diff / dist);
    }
    Ok((L_PI_INFLATION * max_ratio, sup_gt))
}

/// Poisson solution `Gt(x, .)` for the problem's gradient field at `x`.
pub fn poisson_solution_at(spec: &ProblemSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    let oracle = spec.oracle_at(x)?;
    let g_values = spec.gradient_field_matrix(&oracle);
    poisson_solve(&oracle.p, &oracle.mu, &g_values)
}

/// Exact minimizer of `||x - p||^2 / 2` over the simplex by exhaustive
/// active-set enumeration: for each candidate support `F`, the equality
/// KKT solution is `x_i = p_i + (1 - sum_F p_j)/|F|` on `F`, zero off `F`;
/// primal feasibility and dual signs select the (unique) optimum.
pub fn simplex_quadratic_optimum(center: &[f64]) -> Result<(Vec<f64>, f64)> {
    let d = center.len();
    if d == 0 || d > 15 {
        return Err(MirrorError::Domain(format!(
            "active-set enumeration supports 1 <= d <= 15, got {d}"
        )));
    }
    let full: u32 = (1u32 << d) - 1;
    let tol = 1e-12;
    for mask in 1..=full {
        let k = mask.count_ones() as f64;
        let sum_p: f64 = (0..d)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| center[i])
            .sum();
        let shift = (1.0 - sum_p) / k;
        let lambda = -shift;
        // Primal feasibility on the support, dual feasibility off it
        // (eta_i = lambda - p_i >= 0).
        let feasible = center.iter().enumerate().all(|(i, &pi)| {
            if mask & (1 << i) != 0 {
                pi + shift >= -tol
            } else {
                lambda - pi >= -tol
            }
        });
        if !feasible {
            continue;
        }
        let mut x = vec![0.0; d];
        for i in 0..d {
            if mask & (1 << i) != 0 {
                x[i] = (center[i] + shift).max(0.0);
            }
        }
        let s: f64 = x.iter().sum();
        for xi in &mut x {
            *xi /= s;
        }
        let f = 0.5 * x
            .iter()
            .zip(center)
            .map(|(&xi, &pi)| (xi - pi) * (xi - pi))
            .sum::<f64>();
        return Ok((x, f));
    }
    Err(MirrorError::Domain(
        "no KKT point found (unreachable for a strictly convex program)".into(),
    ))
}

fn random_interior_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| 0.25 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / s).collect()
}

pub(crate) fn random_interior(rng: &mut ChaCha8Rng, d: usize) -> SimplexPoint {
    SimplexPoint::new(random_interior_vec(rng, d)).expect("normalized vector is on the simplex")
}
