//! CLI contract tests: exit codes, file outputs, seed precedence.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_mirrordyn");

fn mirrordyn(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("MIRRORDYN_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn mirrordyn")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn small_config(extra_problem: &str, n_iters: usize, stride: usize) -> String {
    format!(
        r#"
[problem]
kind = "convex"
d = 3
m = 2
seed = 4
theta = 1.0
{extra_problem}

[schedule]
kind = "inv_sqrt"
a = 0.5

[run]
n_iters = {n_iters}
n_runs = 4
base_seed = 11
checkpoint_stride = {stride}

[experiment]
eps_grid = [0.1, 0.5]
p = 0.05
"#
    )
}

#[test]
fn missing_config_exits_2_without_output() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = mirrordyn(
        &[
            "run",
            "--config",
            dir.path().join("nope.toml").to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2, "{out:?}");
    assert!(!out_dir.exists(), "no partial output on config errors");
}

#[test]
fn malformed_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "this is not toml [[");
    let out = mirrordyn(&["run", "--config", &cfg], &[]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn trajectory_csv_row_count_contract() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", &small_config("", 1000, 10));
    let out_dir = dir.path().join("out");
    let out = mirrordyn(
        &["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let csv = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension().is_some_and(|x| x == "csv")).then_some(p)
        })
        .next()
        .expect("trajectory csv");
    let text = std::fs::read_to_string(csv).unwrap();
    let data_rows = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("n,"))
        .count();
    assert_eq!(data_rows, 1000usize.div_ceil(10) + 1);
    assert!(text.starts_with("# config_fingerprint="));
}

#[test]
fn mc_rejects_empty_eps_grid() {
    let dir = TempDir::new().unwrap();
    let body = small_config("", 64, 1).replace("eps_grid = [0.1, 0.5]", "eps_grid = []");
    let cfg = write_config(dir.path(), "exp.toml", &body);
    let out = mirrordyn(&["mc", "--config", &cfg], &[]);
    assert_eq!(exit_code(&out), 2, "{out:?}");
}

#[test]
fn mc_single_run_is_vacuous_but_succeeds() {
    let dir = TempDir::new().unwrap();
    let body = small_config("", 64, 1).replace("n_runs = 4", "n_runs = 1");
    let cfg = write_config(dir.path(), "exp.toml", &body);
    let out_dir = dir.path().join("out");
    let out = mirrordyn(
        &["mc", "--config", &cfg, "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let verdict = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with("verdict_"))
                .then_some(p)
        })
        .next()
        .expect("verdict json");
    let text = std::fs::read_to_string(verdict).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["m_runs"], 1);
    assert_eq!(v["verdict"], "pass");
}

#[test]
fn corrupted_kernel_file_exits_3() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("kernel.txt"), "0.9 0.2\n0.2 0.8\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "exp.toml",
        &small_config(r#"kernel_file = "kernel.txt""#, 64, 1),
    );
    let out = mirrordyn(&["run", "--config", &cfg], &[]);
    assert_eq!(exit_code(&out), 3, "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not stochastic"), "stderr: {stderr}");
}

#[test]
fn kernel_dimension_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    // 3x3 kernel against m = 2 in the config.
    std::fs::write(
        dir.path().join("kernel.txt"),
        "0.4 0.3 0.3\n0.2 0.5 0.3\n0.1 0.1 0.8\n",
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        "exp.toml",
        &small_config(r#"kernel_file = "kernel.txt""#, 64, 1),
    );
    let out = mirrordyn(&["run", "--config", &cfg], &[]);
    assert_eq!(exit_code(&out), 3, "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dimension mismatch"), "stderr: {stderr}");
}

#[test]
fn validate_builtin_passes() {
    let out = mirrordyn(&["validate", "--builtin"], &[]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn validate_reports_kernel_errors_as_runtime() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("kernel.txt"), "0.9 0.2\n0.2 0.8\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "exp.toml",
        &small_config(r#"kernel_file = "kernel.txt""#, 64, 1),
    );
    let out = mirrordyn(&["validate", "--config", &cfg], &[]);
    assert_eq!(exit_code(&out), 3, "{out:?}");
}

#[test]
fn complexity_monotone_in_p() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", &small_config("", 64, 1));
    let out_dir = dir.path().join("out");
    let n_at = |p: &str| -> u64 {
        let out = mirrordyn(
            &[
                "complexity",
                "--config",
                &cfg,
                "--eps",
                "0.8",
                "--p",
                p,
                "--out",
                out_dir.to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(exit_code(&out), 0, "{out:?}");
        let stdout = String::from_utf8_lossy(&out.stdout);
        let line = stdout.lines().find(|l| l.starts_with("N = ")).unwrap();
        line[4..].split_whitespace().next().unwrap().parse().unwrap()
    };
    let n_half = n_at("0.5");
    let n_small = n_at("0.05");
    assert!(n_small >= n_half, "N({n_small}) < N({n_half})");
    let json_written = std::fs::read_dir(&out_dir).unwrap().any(|e| {
        e.unwrap()
            .file_name()
            .to_string_lossy()
            .starts_with("complexity_")
    });
    assert!(json_written, "complexity JSON artifact missing");
}

#[test]
fn seed_precedence_flag_env_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "exp.toml", &small_config("", 128, 1));

    let csv_bytes = |out_name: &str, args: &[&str], envs: &[(&str, &str)]| -> Vec<u8> {
        let out_dir = dir.path().join(out_name);
        let mut full = vec!["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()];
        full.extend_from_slice(args);
        let out = mirrordyn(&full, envs);
        assert_eq!(exit_code(&out), 0, "{out:?}");
        let csv = std::fs::read_dir(&out_dir)
            .unwrap()
            .filter_map(|e| {
                let p = e.unwrap().path();
                (p.extension().is_some_and(|x| x == "csv")).then_some(p)
            })
            .next()
            .unwrap();
        std::fs::read(csv).unwrap()
    };

    // Env overrides the config value; the flag overrides the env.
    let from_config = csv_bytes("a", &[], &[]);
    let from_env = csv_bytes("b", &[], &[("MIRRORDYN_SEED", "77")]);
    let from_flag_77 = csv_bytes("c", &["--seed", "77"], &[]);
    let flag_beats_env = csv_bytes("d", &["--seed", "11"], &[("MIRRORDYN_SEED", "77")]);

    assert_ne!(from_config, from_env, "env seed must take effect");
    assert_eq!(from_env, from_flag_77, "env and flag with same seed agree");
    assert_eq!(
        from_config, flag_beats_env,
        "flag seed 11 equals config seed 11 regardless of env"
    );

    let bad_env = mirrordyn(
        &["run", "--config", &cfg],
        &[("MIRRORDYN_SEED", "not-a-number")],
    );
    assert_eq!(exit_code(&bad_env), 2);
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = mirrordyn(&["frobnicate"], &[]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn reference_configs_parse_and_run_small() {
    // The shipped reference configs must stay loadable; run a pruned copy.
    for name in ["convex_d5.toml", "nonconvex_d3.toml", "linear_d5.toml"] {
        let body = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("../../configs")
                .join(name),
        )
        .unwrap();
        let dir = TempDir::new().unwrap();
        let small = body
            .replace("n_iters = 20000", "n_iters = 200")
            .replace("n_iters = 10000", "n_iters = 200")
            .replace("n_runs = 200", "n_runs = 2");
        let cfg = write_config(dir.path(), name, &small);
        let out_dir = dir.path().join("out");
        let out = mirrordyn(
            &["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()],
            &[],
        );
        assert_eq!(exit_code(&out), 0, "{name}: {out:?}");
    }
}
