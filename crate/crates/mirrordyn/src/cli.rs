//! Command implementations behind the `mirrordyn` binary.
//!
//! Exit-code contract: 0 success, 2 configuration/usage error, 3 runtime
//! domain error. Validation failures in `validate` exit 1. Configuration
//! errors are detected before any output file is created.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::analysis::{
    decompose_noise, martingale_check, sample_complexity, tail_experiment_convex,
    tail_experiment_nonconvex, TailKind,
};
use crate::config::RunConfig;
use crate::error::{MirrorError, Result};
use crate::geometry::{norm, MirrorMap, SimplexPoint};
use crate::markov::{poisson_residual, poisson_solve, stationary_distribution};
use crate::optimizer::{run_smd, RecordMode, RunOptions};
use crate::oracles;
use crate::problems::{make_convex_problem, make_nonconvex_problem, ProblemSpec};
use crate::stationarity;

/// Error with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: msg.into(),
        }
    }

    fn runtime(err: MirrorError) -> Self {
        Self {
            code: 3,
            message: err.to_string(),
        }
    }

    fn check_failure(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: msg.into(),
        }
    }
}

type CliResult = std::result::Result<(), CliError>;

fn load_config(path: &Path, seed: Option<u64>) -> std::result::Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path).map_err(|e| CliError::usage(e.to_string()))?;
    cfg.resolve_base_seed(seed)
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig, flag: &Option<PathBuf>) -> std::result::Result<PathBuf, CliError> {
    let dir = flag.clone().unwrap_or_else(|| cfg.output.directory.clone());
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| {
        CliError::runtime(MirrorError::Io(std::io::Error::other(format!(
            "writing {}: {e}",
            path.display()
        ))))
    })
}

/// `mirrordyn run`: one trajectory, CSV plus JSON summary.
pub fn cmd_run(config: &Path, seed: Option<u64>, out: &Option<PathBuf>) -> CliResult {
    let cfg = load_config(config, seed)?;
    let fp = cfg.fingerprint();
    let prob = cfg.build_problem().map_err(CliError::runtime)?;
    let map = cfg.mirror_map();
    let sched = cfg.step_schedule();

    let start = Instant::now();
    let mut traj = run_smd(
        &prob,
        &map,
        &sched,
        cfg.run.n_iters,
        &SimplexPoint::uniform(prob.d()),
        0,
        cfg.run.base_seed,
        &RunOptions {
            record: Some(RecordMode::Stride(cfg.run.checkpoint_stride)),
            checkpoints: vec![],
            oracle_order: cfg.oracle_order(),
        },
    )
    .map_err(CliError::runtime)?;
    traj.fingerprint = fp.clone();
    let wall = start.elapsed().as_secs_f64();

    let dir = out_dir(&cfg, out)?;
    let csv_path = dir.join(format!("trajectory_{fp}.csv"));
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).map_err(CliError::runtime)?;
    write_file(&csv_path, &buf)?;

    let summary = json!({
        "config_fingerprint": fp,
        "seed": cfg.run.base_seed,
        "n_iters": cfg.run.n_iters,
        "final_f_gap": traj.final_f_gap,
        "final_gap": traj.final_gap,
        "min_gap": traj.min_gap,
        "min_coord_seen": traj.min_coord_seen,
        "wall_time_s": wall,
    });
    let json_path = dir.join(format!("summary_{fp}.json"));
    write_file(
        &json_path,
        format!("{}\n", serde_json::to_string_pretty(&summary).expect("json")).as_bytes(),
    )?;

    println!(
        "run {fp}: n={} final_gap={:.6e} wrote {}",
        cfg.run.n_iters,
        traj.final_gap,
        csv_path.display()
    );
    Ok(())
}

/// `mirrordyn mc`: Monte-Carlo tail experiment with JSON verdict.
pub fn cmd_mc(config: &Path, seed: Option<u64>, out: &Option<PathBuf>) -> CliResult {
    let cfg = load_config(config, seed)?;
    if cfg.experiment.eps_grid.is_empty() {
        return Err(CliError::usage(
            "experiment.eps_grid must not be empty for mc",
        ));
    }
    let fp = cfg.fingerprint();
    let prob = cfg.build_problem().map_err(CliError::runtime)?;
    let map = cfg.mirror_map();
    let sched = cfg.step_schedule();

    let start = Instant::now();
    let mut est = if prob.is_convex_objective() {
        tail_experiment_convex(
            &prob,
            &map,
            &sched,
            cfg.run.n_iters,
            cfg.run.n_runs,
            &cfg.experiment.eps_grid,
            cfg.run.base_seed,
        )
    } else {
        tail_experiment_nonconvex(
            &prob,
            &map,
            &sched,
            cfg.run.n_iters,
            cfg.run.n_runs,
            &cfg.experiment.eps_grid,
            cfg.run.base_seed,
        )
    }
    .map_err(CliError::runtime)?;
    est.fingerprint = fp.clone();
    let wall = start.elapsed().as_secs_f64();

    let dir = out_dir(&cfg, out)?;
    let csv_path = dir.join(format!("tail_{fp}.csv"));
    let mut buf = Vec::new();
    est.write_csv(&mut buf).map_err(CliError::runtime)?;
    write_file(&csv_path, &buf)?;

    let cells_json: Vec<serde_json::Value> = est
        .cells
        .iter()
        .map(|c| {
            json!({
                "n": c.n,
                "eps": c.eps,
                "p_hat": c.p_hat,
                "half_width": c.half_width,
                "bound": c.bound,
                "precondition_ok": c.precondition_ok,
                "pass": c.dominance_ok(),
            })
        })
        .collect();
    let overall = est.dominance_violations().is_empty();
    let verdict = json!({
        "config_fingerprint": fp,
        "kind": match est.kind {
            TailKind::ConvexErgodic => "convex_ergodic",
            TailKind::NonconvexMinGap => "nonconvex_min_gap",
        },
        "m_runs": est.m_runs,
        "constants": prob.constants(),
        "cells": cells_json,
        "verdict": if overall { "pass" } else { "fail" },
        "wall_time_s": wall,
    });
    let json_path = dir.join(format!("verdict_{fp}.json"));
    write_file(
        &json_path,
        format!("{}\n", serde_json::to_string_pretty(&verdict).expect("json")).as_bytes(),
    )?;

    println!(
        "mc {fp}: {} cells, verdict {} wrote {}",
        est.cells.len(),
        if overall { "pass" } else { "fail" },
        csv_path.display()
    );
    Ok(())
}

/// `mirrordyn complexity`: iteration count from the burn-in clauses.
pub fn cmd_complexity(
    config: &Path,
    eps: Option<f64>,
    p: Option<f64>,
    seed: Option<u64>,
    out: &Option<PathBuf>,
) -> CliResult {
    let cfg = load_config(config, seed)?;
    let eps = eps.unwrap_or_else(|| {
        cfg.experiment
            .eps_grid
            .first()
            .copied()
            .unwrap_or(0.1)
    });
    let p = p.unwrap_or(cfg.experiment.p);
    let fp = cfg.fingerprint();
    let prob = cfg.build_problem().map_err(CliError::runtime)?;

    let d1 = bregman_radius_estimate(&prob, &cfg.mirror_map()).map_err(CliError::runtime)?;
    let report = sample_complexity(eps, p, prob.constants(), d1, cfg.schedule.a)
        .map_err(CliError::runtime)?;

    println!(
        "N = {} (eps = {eps}, p = {p}, a = {}, D1 = {d1:.6})",
        report.n, cfg.schedule.a
    );
    println!(
        "binding clause: {} of thresholds {:?}",
        report.binding_clause, report.clause_thresholds
    );
    println!("order-level estimate: {:.3e}", report.order_estimate);

    let dir = out_dir(&cfg, out)?;
    let payload = json!({
        "config_fingerprint": fp,
        "eps": eps,
        "p": p,
        "a": report.a,
        "d1": d1,
        "n": report.n,
        "clause_thresholds": report.clause_thresholds,
        "binding_clause": report.binding_clause,
        "order_estimate": report.order_estimate,
    });
    let json_path = dir.join(format!("complexity_{fp}.json"));
    write_file(
        &json_path,
        format!("{}\n", serde_json::to_string_pretty(&payload).expect("json")).as_bytes(),
    )?;
    Ok(())
}

/// `D1`: the Bregman radius around the optimum, the larger of the analytic
/// `ln d` bound (uniform start) and a sampled interior supremum.
fn bregman_radius_estimate(prob: &ProblemSpec, map: &MirrorMap) -> Result<f64> {
    let (x_star, _) = prob.optimum().ok_or(MirrorError::MissingOptimum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut sup: f64 = (prob.d() as f64).ln();
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..prob.d()).map(|_| 0.05 + rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let x: Vec<f64> = raw.into_iter().map(|r| r / s).collect();
        sup = sup.max(map.bregman(x_star.as_slice(), &x)?);
    }
    Ok(sup)
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// `mirrordyn validate`: the cross-module property suite.
pub fn cmd_validate(config: Option<&Path>, builtin: bool, seed: Option<u64>) -> CliResult {
    let problems: Vec<(String, ProblemSpec)> = match config {
        Some(path) if !builtin => {
            let cfg = load_config(path, seed)?;
            vec![(
                format!("config {}", cfg.fingerprint()),
                cfg.build_problem().map_err(CliError::runtime)?,
            )]
        }
        _ => vec![
            (
                "builtin convex d=5 m=4".into(),
                make_convex_problem(5, 4, 7, 2.0).map_err(CliError::runtime)?,
            ),
            (
                "builtin nonconvex d=3 m=4".into(),
                make_nonconvex_problem(3, 4, 13, 2.0).map_err(CliError::runtime)?,
            ),
        ],
    };

    let mut checks = vec![
        check_bregman(),
        check_prox_oracle(),
        check_poisson(),
        check_nu_oracle(),
    ];
    for (label, prob) in &problems {
        checks.push(check_mean_field(label, prob));
        checks.push(check_decomposition(label, prob).map_err(CliError::runtime)?);
        checks.push(check_martingale(label, prob).map_err(CliError::runtime)?);
    }

    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0) + 2;
    let mut all_pass = true;
    let mut stdout = std::io::stdout();
    for c in &checks {
        all_pass &= c.pass;
        let _ = writeln!(
            stdout,
            "{:<width$} {}  {}",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail,
        );
    }
    if all_pass {
        Ok(())
    } else {
        Err(CliError::check_failure("validation suite failed"))
    }
}

fn check_bregman() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for map in [MirrorMap::negative_entropy(), MirrorMap::squared_euclidean()] {
        for &d in &[2usize, 5, 20] {
            for _ in 0..100 {
                let x = crate::problems::random_interior(&mut rng, d);
                let y = crate::problems::random_interior(&mut rng, d);
                let dv = match map.bregman(x.as_slice(), y.as_slice()) {
                    Ok(v) => v,
                    Err(_) => {
                        pass = false;
                        continue;
                    }
                };
                let diff: Vec<f64> = x
                    .as_slice()
                    .iter()
                    .zip(y.as_slice())
                    .map(|(a, b)| a - b)
                    .collect();
                let n = norm(&diff, map.reference_norm());
                let slack = 0.5 * map.sigma_r() * n * n - dv;
                worst = worst.max(slack);
                pass &= dv >= 0.0 && slack <= 1e-12;
            }
        }
    }
    Check {
        name: "bregman nonneg + strong convexity",
        pass,
        detail: format!("max violation {worst:.2e}"),
    }
}

fn check_prox_oracle() -> Check {
    let map = MirrorMap::negative_entropy();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let d = rng.random_range(2..=12);
        let x = crate::problems::random_interior(&mut rng, d);
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let alpha = rng.random_range(0.01..2.0);
        let got = match map.update(&x, &g, alpha) {
            Ok(v) => v,
            Err(_) => {
                return Check {
                    name: "entropic prox vs KKT oracle",
                    pass: false,
                    detail: "update failed".into(),
                }
            }
        };
        let want = oracles::entropic_prox_kkt(x.as_slice(), &g, alpha);
        for (a, b) in got.as_slice().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    Check {
        name: "entropic prox vs KKT oracle",
        pass: worst <= 1e-8,
        detail: format!("max deviation {worst:.2e}"),
    }
}

fn check_poisson() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    let mut pin: f64 = 0.0;
    let mut pass = true;
    for _ in 0..100 {
        let m = rng.random_range(2..=8);
        let d = rng.random_range(2..=6);
        let mut p = nalgebra::DMatrix::from_fn(m, m, |_, _| 0.2 + rng.random::<f64>());
        for i in 0..m {
            let s: f64 = p.row(i).iter().sum();
            for j in 0..m {
                p[(i, j)] /= s;
            }
        }
        let g = nalgebra::DMatrix::from_fn(m, d, |_, _| rng.random_range(-2.0..2.0));
        match stationary_distribution(&p).and_then(|mu| {
            let gt = poisson_solve(&p, &mu, &g)?;
            Ok((poisson_residual(&p, &mu, &g, &gt), (gt.transpose() * mu).amax()))
        }) {
            Ok((res, pn)) => {
                worst = worst.max(res);
                pin = pin.max(pn);
            }
            Err(_) => pass = false,
        }
    }
    Check {
        name: "poisson residual + centering pin",
        pass: pass && worst <= 1e-10 && pin <= 1e-12,
        detail: format!("max residual {worst:.2e}, max pin {pin:.2e}"),
    }
}

fn check_nu_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst: f64 = 0.0;
    let mut worst_tan: f64 = 0.0;
    for _ in 0..2000 {
        let d = rng.random_range(2..=20);
        let x = crate::problems::random_interior(&mut rng, d);
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a = stationarity::projected_direction(x.as_slice(), &g).unwrap();
        let b = stationarity::qp_projection_oracle(x.as_slice(), &g).unwrap();
        for (ai, bi) in a.iter().zip(&b) {
            worst = worst.max((ai - bi).abs());
        }
        worst_tan = worst_tan.max(a.iter().sum::<f64>().abs());
    }
    Check {
        name: "nu closed form vs KKT QP",
        pass: worst <= 1e-10 && worst_tan <= 1e-12,
        detail: format!("max deviation {worst:.2e}, max 1'nu {worst_tan:.2e}"),
    }
}

fn check_mean_field(label: &str, prob: &ProblemSpec) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for _ in 0..200 {
        let x = crate::problems::random_interior(&mut rng, prob.d());
        match prob.oracle_at(x.as_slice()) {
            Ok(oracle) => {
                let mut avg = vec![0.0; prob.d()];
                for s in 0..prob.m() {
                    let g = prob.sample_subgradient(x.as_slice(), s).unwrap();
                    for j in 0..prob.d() {
                        avg[j] += oracle.mu[s] * g[j];
                    }
                }
                let grad = prob.mean_field_gradient(x.as_slice());
                let r = avg
                    .iter()
                    .zip(&grad)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                worst = worst.max(r);
            }
            Err(_) => pass = false,
        }
    }
    Check {
        name: "mean-field identity",
        pass: pass && worst <= 1e-10,
        detail: format!("{label}: max residual {worst:.2e}"),
    }
}

fn check_decomposition(label: &str, prob: &ProblemSpec) -> Result<Check> {
    let traj = run_smd(
        prob,
        &MirrorMap::negative_entropy(),
        &crate::optimizer::StepSchedule::InvSqrt { a: 0.5 },
        300,
        &SimplexPoint::uniform(prob.d()),
        0,
        11,
        &RunOptions {
            record: Some(RecordMode::Full),
            checkpoints: vec![],
            oracle_order: Default::default(),
        },
    )?;
    let d = decompose_noise(&traj, prob)?;
    Ok(Check {
        name: "noise decomposition identity",
        pass: d.max_residual <= 1e-9 && d.max_exact_cond_mean <= 1e-12,
        detail: format!(
            "{label}: max residual {:.2e}, max cond-mean {:.2e}",
            d.max_residual, d.max_exact_cond_mean
        ),
    })
}

fn check_martingale(label: &str, prob: &ProblemSpec) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = crate::problems::random_interior(&mut rng, prob.d());
        let s = rng.random_range(0..prob.m());
        let rep = martingale_check(prob, &x, s, 1000, rng.random())?;
        worst = worst.max(rep.exact_cond_mean);
    }
    Ok(Check {
        name: "martingale exact conditional mean",
        pass: worst <= 1e-12,
        detail: format!("{label}: max {worst:.2e}"),
    })
}

/// Used by `main` to run tail experiments on a sized worker pool.
pub fn with_pool<T>(jobs: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    if jobs == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(f)
}

