//! The stochastic Markov mirror-descent loop.
//!
//! Per iteration `n`, starting from `(x_n, S_n)`:
//!
//! 1. query the gradient sample `g = G(x_n, S_n)`,
//! 2. take the proximal step `x_{n+1} = argmin <g, x> + D_R(x, x_n)/alpha_n`,
//! 3. advance the chain `S_{n+1} ~ P(x_n)[S_n, .]`.
//!
//! The sample is evaluated at the state the chain occupied when queried;
//! the alternative oracle reading (transition first, evaluate the sample at
//! the new state) is selectable through [`OracleOrder::TransitionFirst`]
//! for robustness experiments.
//!
//! Every step checks the contract `||x_{n+1} - x_n|| <= alpha_n ||g||_* /
//! sigma_R` in the geometry's norm pair, and maintains the step-weighted
//! ergodic average `z_n = sum_k alpha_k x_k / sum_k alpha_k` as a running
//! (compensated) sum. Runs are bitwise deterministic given `(config, seed)`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MirrorError, Result};
use crate::geometry::{norm, MirrorMap, SimplexPoint};
use crate::markov::sample_row;
use crate::problems::{subgradient_from_oracle, ProblemSpec};
use crate::stationarity;

/// Step-size schedule; non-increasing by construction or validation.
///
/// `InvSqrt { a }` gives `alpha_n = a / sqrt(n)`, which satisfies
/// `sum alpha_n = inf` and `sum alpha_n^2 < inf` analytically.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    InvSqrt { a: f64 },
    Constant { a: f64 },
    Custom(Vec<f64>),
}

impl StepSchedule {
    /// Validates positivity and (for `Custom`) the non-increasing property.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::InvSqrt { a } | Self::Constant { a } => {
                if !a.is_finite() || *a <= 0.0 {
                    return Err(MirrorError::InvalidConfig(format!(
                        "step scale must be positive, got {a}"
                    )));
                }
            }
            Self::Custom(seq) => {
                if seq.is_empty() {
                    return Err(MirrorError::InvalidConfig("empty custom schedule".into()));
                }
                for w in seq.windows(2) {
                    if w[1] > w[0] {
                        return Err(MirrorError::InvalidConfig(
                            "custom schedule must be non-increasing".into(),
                        ));
                    }
                }
                if seq.iter().any(|a| !a.is_finite() || *a <= 0.0) {
                    return Err(MirrorError::InvalidConfig(
                        "custom schedule entries must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `alpha_n` for `n >= 1`.
    pub fn alpha(&self, n: usize) -> Result<f64> {
        match self {
            Self::InvSqrt { a } => Ok(a / (n as f64).sqrt()),
            Self::Constant { a } => Ok(*a),
            Self::Custom(seq) => seq
                .get(n - 1)
                .copied()
                .ok_or(MirrorError::ScheduleExhausted(n)),
        }
    }
}

/// Which oracle reading drives the gradient sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleOrder {
    /// Sample at `(x_n, S_n)`, then transition (the default reading).
    #[default]
    GradientFirst,
    /// Transition to `S'` first, then sample at `(x_n, S')`.
    TransitionFirst,
}

/// How much of the trajectory to keep in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordMode {
    /// Keep every iterate and state (required by the noise decomposition).
    Full,
    /// Keep diagnostics every k-th step plus the final iterate.
    Stride(usize),
}

/// Options for [`run_smd`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub record: Option<RecordMode>,
    /// Iteration indices at which to snapshot the ergodic average.
    pub checkpoints: Vec<usize>,
    pub oracle_order: OracleOrder,
}

/// One recorded diagnostics row.
#[derive(Debug, Clone)]
pub struct TrajRow {
    pub n: usize,
    pub alpha: f64,
    /// `f(x_n) - f*` when the optimum is known.
    pub f_gap: Option<f64>,
    /// Stationarity gap at `x_n` using the exact mean-field gradient.
    pub gap_riemann: f64,
    /// `D_R(x*, x_n)` when the optimum is known (entropy geometry).
    pub bregman_to_opt: Option<f64>,
    /// `||x_{n+1} - x_n||_1` (zero on the final row).
    pub step_len_l1: f64,
    pub state: usize,
}

/// Snapshot of the run at a checkpoint iteration.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub n: usize,
    pub z: SimplexPoint,
    /// `f(z_n) - f*` when the optimum is known.
    pub f_z_gap: Option<f64>,
    /// `min_{k <= n} Gap(x_k)`.
    pub min_gap: f64,
    /// `min_{k <= n} (f(x_k) - f*)` when the optimum is known.
    pub min_f_gap: Option<f64>,
}

/// A recorded run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub seed: u64,
    pub n_iters: usize,
    /// Configuration fingerprint embedded in exports.
    pub fingerprint: String,
    /// `alpha_1 .. alpha_N`.
    pub alphas: Vec<f64>,
    /// `S_1 .. S_{N+1}`.
    pub states: Vec<usize>,
    /// `x_1 .. x_{N+1}` under [`RecordMode::Full`].
    pub iterates: Option<Vec<SimplexPoint>>,
    pub rows: Vec<TrajRow>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_x: SimplexPoint,
    pub final_z: SimplexPoint,
    pub initial_gap: f64,
    pub final_gap: f64,
    pub min_gap: f64,
    pub initial_bregman: Option<f64>,
    pub min_bregman: Option<f64>,
    pub final_f_gap: Option<f64>,
    /// Smallest coordinate seen along the run (interior monitoring).
    pub min_coord_seen: f64,
    /// Max over steps of `||x_{n+1} - x_n|| / (alpha_n ||g_n||_* / sigma)`.
    pub max_step_ratio: f64,
    /// Max over steps of `||x_{n+1} - x_n|| / (alpha_n G_bound / sigma)`.
    pub max_step_ratio_gbound: f64,
}

impl Trajectory {
    /// Ergodic average `z_n` recomputed from scratch from stored iterates.
    ///
    /// This is the oracle the running value is checked against; it needs
    /// [`RecordMode::Full`].
    pub fn ergodic_average(&self, n: usize) -> Result<SimplexPoint> {
        let iterates = self.iterates.as_ref().ok_or(MirrorError::MissingFullRecord)?;
        if n == 0 || n > self.n_iters {
            return Err(MirrorError::IndexOutOfRange {
                index: n,
                len: self.n_iters,
            });
        }
        let d = self.final_x.dim();
        let mut acc = KahanVec::new(d);
        let mut den = 0.0;
        for k in 1..=n {
            let a = self.alphas[k - 1];
            acc.add_scaled(a, iterates[k - 1].as_slice());
            den += a;
        }
        let mut z = acc.value();
        for v in &mut z {
            *v /= den;
        }
        let s: f64 = z.iter().sum();
        for v in &mut z {
            *v /= s;
        }
        SimplexPoint::new(z)
    }

    /// Writes the trajectory CSV: a fingerprint comment, the fixed header,
    /// then one data row per recorded step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# config_fingerprint={}", self.fingerprint)?;
        writeln!(w, "n,alpha,f_gap,gap_riemann,bregman_to_opt,step_len_l1,state")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.n,
                r.alpha,
                r.f_gap.map(|v| v.to_string()).unwrap_or_default(),
                r.gap_riemann,
                r.bregman_to_opt.map(|v| v.to_string()).unwrap_or_default(),
                r.step_len_l1,
                r.state
            )?;
        }
        Ok(())
    }
}

/// Compensated (Kahan) accumulation of weighted vectors, so the running
/// ergodic average matches a from-scratch recomputation over long runs.
struct KahanVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanVec {
    fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d],
            comp: vec![0.0; d],
        }
    }

    fn add_scaled(&mut self, a: f64, x: &[f64]) {
        for (i, &xi) in x.iter().enumerate() {
            let y = a * xi - self.comp[i];
            let t = self.sum[i] + y;
            self.comp[i] = (t - self.sum[i]) - y;
            self.sum[i] = t;
        }
    }

    fn value(&self) -> Vec<f64> {
        self.sum.clone()
    }
}

/// Runs stochastic Markov mirror descent for `n_iters` steps.
///
/// Diagnostics (gap, Bregman distance, f-gap) are computed with the exact
/// mean-field gradient from the problem, never through the chain.
#[allow(clippy::too_many_arguments)]
pub fn run_smd(
    prob: &ProblemSpec,
    map: &MirrorMap,
    sched: &StepSchedule,
    n_iters: usize,
    x_init: &SimplexPoint,
    s_init: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    if n_iters == 0 {
        return Err(MirrorError::InvalidConfig("n_iters must be >= 1".into()));
    }
    if x_init.dim() != prob.d() {
        return Err(MirrorError::DimensionMismatch {
            expected: prob.d(),
            got: x_init.dim(),
        });
    }
    if s_init >= prob.m() {
        return Err(MirrorError::IndexOutOfRange {
            index: s_init,
            len: prob.m(),
        });
    }
    if !x_init.is_strictly_interior() {
        return Err(MirrorError::Domain(
            "initial point must be strictly interior".into(),
        ));
    }
    sched.validate()?;

    let record = opts.record.unwrap_or(RecordMode::Stride(1));
    let stride = match record {
        RecordMode::Full => 1,
        RecordMode::Stride(k) => {
            if k == 0 {
                return Err(MirrorError::InvalidConfig("stride must be >= 1".into()));
            }
            k
        }
    };
    let full = matches!(record, RecordMode::Full);
    let d = prob.d();
    let sigma = map.sigma_r();
    let g_bound = prob.constants().g_bound;
    let f_star = prob.optimum().map(|(_, f)| f);
    let x_star: Option<SimplexPoint> = prob.optimum().map(|(x, _)| x.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x_init.clone();
    let mut state = s_init;
    let mut alphas = Vec::with_capacity(n_iters);
    let mut states = Vec::with_capacity(n_iters + 1);
    states.push(state);
    let mut iterates: Option<Vec<SimplexPoint>> = if full {
        let mut v = Vec::with_capacity(n_iters + 1);
        v.push(x.clone());
        Some(v)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    let checkpoint_set: std::collections::BTreeSet<usize> =
        opts.checkpoints.iter().copied().collect();

    let mut zsum = KahanVec::new(d);
    let mut zden = 0.0;
    let mut min_gap = f64::INFINITY;
    let mut min_bregman: Option<f64> = None;
    let mut min_f_gap: Option<f64> = None;
    let mut initial_gap = 0.0;
    let mut initial_bregman = None;
    let mut min_coord_seen = x.min_coord();
    let mut max_step_ratio = 0.0f64;
    let mut max_step_ratio_gbound = 0.0f64;

    for n in 1..=n_iters {
        let alpha = sched.alpha(n)?;
        alphas.push(alpha);

        let oracle = prob.oracle_at(x.as_slice())?;

        // Chain draw. GradientFirst consumes it after sampling the gradient
        // at S_n; TransitionFirst evaluates the sample at the new state.
        let next_state = sample_row(&oracle.p, state, &mut rng)?;
        let sample_state = match opts.oracle_order {
            OracleOrder::GradientFirst => state,
            OracleOrder::TransitionFirst => next_state,
        };
        let g = subgradient_from_oracle(&oracle, &prob.offsets()[sample_state]);

        // Diagnostics at x_n with the exact mean-field gradient. The local
        // gap is an interior quantity; Euclidean-projection iterates can sit
        // on the boundary, where it is recorded as NaN.
        let gap_n = if x.is_strictly_interior() {
            stationarity::gap(x.as_slice(), &oracle.grad_f)?
        } else {
            f64::NAN
        };
        let f_gap_n = f_star.map(|fs| prob.objective(x.as_slice()) - fs);
        let bregman_n = match &x_star {
            Some(xs) => Some(diagnostic_bregman(map, xs.as_slice(), x.as_slice())?),
            None => None,
        };
        if n == 1 {
            initial_gap = gap_n;
            initial_bregman = bregman_n;
        }
        min_gap = min_gap.min(gap_n);
        if let Some(b) = bregman_n {
            min_bregman = Some(min_bregman.map_or(b, |m: f64| m.min(b)));
        }
        if let Some(fg) = f_gap_n {
            min_f_gap = Some(min_f_gap.map_or(fg, |m: f64| m.min(fg)));
        }

        let x_next = map.update(&x, &g, alpha)?;
        min_coord_seen = min_coord_seen.min(x_next.min_coord());

        // Per-step contract from the strong convexity of R.
        let diff: Vec<f64> = x_next
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let step_ref = norm(&diff, map.reference_norm());
        let g_dual = norm(&g, map.dual_norm());
        let allowed = alpha * g_dual / sigma;
        assert!(
            step_ref <= allowed * (1.0 + 1e-9) + 1e-12,
            "step-length contract violated at n = {n}: {step_ref} > {allowed}"
        );
        if allowed > 0.0 {
            max_step_ratio = max_step_ratio.max(step_ref / allowed);
        }
        let allowed_gb = alpha * g_bound / sigma;
        if allowed_gb > 0.0 {
            max_step_ratio_gbound = max_step_ratio_gbound.max(step_ref / allowed_gb);
        }

        zsum.add_scaled(alpha, x.as_slice());
        zden += alpha;

        if (n - 1) % stride == 0 {
            rows.push(TrajRow {
                n,
                alpha,
                f_gap: f_gap_n,
                gap_riemann: gap_n,
                bregman_to_opt: bregman_n,
                step_len_l1: norm(&diff, crate::geometry::Norm::L1),
                state,
            });
        }
        if checkpoint_set.contains(&n) {
            let z = normalized_average(&zsum, zden)?;
            checkpoints.push(Checkpoint {
                n,
                f_z_gap: f_star.map(|fs| prob.objective(z.as_slice()) - fs),
                z,
                min_gap,
                min_f_gap,
            });
        }

        x = x_next;
        state = next_state;
        states.push(state);
        if let Some(it) = iterates.as_mut() {
            it.push(x.clone());
        }
    }

    // Final row for the post-update iterate x_{N+1}.
    let final_gap = if x.is_strictly_interior() {
        let grad = prob.mean_field_gradient(x.as_slice());
        stationarity::gap(x.as_slice(), &grad)?
    } else {
        f64::NAN
    };
    let final_f_gap = f_star.map(|fs| prob.objective(x.as_slice()) - fs);
    let final_bregman = match &x_star {
        Some(xs) => Some(diagnostic_bregman(map, xs.as_slice(), x.as_slice())?),
        None => None,
    };
    rows.push(TrajRow {
        n: n_iters + 1,
        alpha: 0.0,
        f_gap: final_f_gap,
        gap_riemann: final_gap,
        bregman_to_opt: final_bregman,
        step_len_l1: 0.0,
        state,
    });

    let final_z = normalized_average(&zsum, zden)?;
    Ok(Trajectory {
        seed,
        n_iters,
        fingerprint: String::from("none"),
        alphas,
        states,
        iterates,
        rows,
        checkpoints,
        final_x: x,
        final_z,
        initial_gap,
        final_gap,
        min_gap,
        initial_bregman,
        min_bregman,
        final_f_gap,
        min_coord_seen,
        max_step_ratio,
        max_step_ratio_gbound,
    })
}

/// `D_R(target, x)` with the second argument floored at 1e-300 before the
/// logarithm. The floor exists only here: the update itself is never
/// clamped, but a diagnostic must stay evaluable when a coordinate
/// underflows to exact zero on very long runs.
fn diagnostic_bregman(map: &MirrorMap, target: &[f64], x: &[f64]) -> Result<f64> {
    let floored: Vec<f64> = x.iter().map(|&c| c.max(1e-300)).collect();
    map.bregman(target, &floored)
}

fn normalized_average(zsum: &KahanVec, zden: f64) -> Result<SimplexPoint> {
    let mut z = zsum.value();
    for v in &mut z {
        *v /= zden;
    }
    let s: f64 = z.iter().sum();
    for v in &mut z {
        *v /= s;
    }
    SimplexPoint::new(z)
}
