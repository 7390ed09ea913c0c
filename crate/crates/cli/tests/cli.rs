use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mmpde_cli::artifacts::LOG_COLUMNS;
use mmpde_cli::{EXIT_CHECK_FAILED, EXIT_DIVERGED, EXIT_ERROR, OUTPUT_DIR_ENV};

fn mmpde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmpde")).args(args).env_remove(OUTPUT_DIR_ENV).output().expect("spawn mmpde")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
name = "small"
wall_clock = false
checkpoint_every = 2

[problem]
name = "dirichlet_poisson"
dim = 2

[u_net]
width = 8
depth = 2

[v_net]
width = 8
depth = 2

[train]
n_interior = 64
n_boundary = 32
iters = 4
test_points = 128
seed = 5
"#;

#[test]
fn zero_iterations_write_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = mmpde(&["run", "--preset", "table1-n2500", "--iters", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log, format!("{}\n", LOG_COLUMNS.join(",")));
    assert!(out.join("solution_dump.csv").exists());
    assert!(out.join("checkpoints/u_final.ckpt").exists());
}

#[test]
fn identical_runs_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let logs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = mmpde(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            fs::read(out.join("train_log.csv")).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
    let text = String::from_utf8(logs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 5);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), LOG_COLUMNS.len());
    assert_eq!(row[0], "0");
    let mantissa = row[1].trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.len(), 18, "{}", row[1]);
    assert_eq!(row[7], "0.0000000000000000e0");
}

#[test]
fn run_writes_slices_and_periodic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("r");
    assert_eq!(code(&mmpde(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    for f in ["u_2.ckpt", "v_2.ckpt", "u_4.ckpt", "v_4.ckpt", "u_final.ckpt", "v_final.ckpt"] {
        assert!(out.join("checkpoints").join(f).exists(), "{f}");
    }
    let dump = fs::read_to_string(out.join("solution_dump.csv")).unwrap();
    let mut lines = dump.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,u,v,exact");
    assert_eq!(lines.count(), 41 * 41);
    let saved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert_eq!(mmpde_cli::config::RunConfig::parse(&saved).unwrap().train.iters, 4);
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mmpde"))
        .args(["run", "--preset", "mixed", "--iters", "0"])
        .env(OUTPUT_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("mixed/train_log.csv").exists());
}

#[test]
fn eval_reproduces_the_logged_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("r");
    assert_eq!(code(&mmpde(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let logged: f64 = log.lines().last().unwrap().split(',').nth(5).unwrap().parse().unwrap();
    let ckpt = out.join("checkpoints/u_final.ckpt");
    let o = mmpde(&["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let evaluated: f64 = stdout.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert_eq!(evaluated, logged);
}

#[test]
fn divergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("iters = 4", "iters = 200\nlr = 1e6\nlr_decay = 1.0"));
    let out = dir.path().join("r");
    let o = mmpde(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_DIVERGED, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let last: Vec<&str> = log.lines().last().unwrap().split(',').collect();
    assert_eq!(last[5], "", "diagnostic record has no error estimate");
}

#[test]
fn config_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "name = \"x\"\n[train]\niters = \"many\"\n");
    let o = mmpde(&["run", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_ERROR);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert_eq!(code(&mmpde(&["run", "--preset", "no-such-preset"])), EXIT_ERROR);
}

#[test]
fn dump_config_round_trips() {
    let o = mmpde(&["run", "--preset", "semilinear", "--seed", "9", "--dump-config"]);
    assert_eq!(code(&o), 0);
    let cfg = mmpde_cli::config::RunConfig::parse(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.train.seed, 9);
    assert_eq!(cfg.problem.dim, 5);
}

#[test]
fn gradcheck_default_passes() {
    let o = mmpde(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().contains("passed"));
}

#[test]
fn gradcheck_catches_a_corrupted_adjoint() {
    let o = mmpde(&["gradcheck", "--corrupt-adjoint", "--pairs", "5"]);
    assert_eq!(code(&o), EXIT_CHECK_FAILED);
}

#[test]
fn gradcheck_minimal_one_dimensional_net() {
    let o = mmpde(&["gradcheck", "--dim", "1", "--width", "1", "--depth", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn reference_dumps_every_l_shape_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ref.csv");
    let o = mmpde(&["reference", "--problem", "l_shape", "--h", "1/16", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,y,u");
    // 33×33 nodes minus the open upper-right quadrant's 16×16
    assert_eq!(lines.clone().count(), 33 * 33 - 16 * 16);
    assert!(lines.all(|l| l.split(',').count() == 3));
}

#[test]
fn reference_handles_mixed_conditions() {
    let o = mmpde(&["reference", "--problem", "mixed", "--h", "0.05"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1 + 21 * 21);
}

#[test]
fn reference_rejects_a_non_dividing_spacing() {
    let o = mmpde(&["reference", "--problem", "l_shape", "--h", "0.3"]);
    assert_eq!(code(&o), EXIT_ERROR);
    assert!(stderr(&o).contains("does not divide"), "{}", stderr(&o));
    assert_eq!(code(&mmpde(&["reference", "--problem", "semilinear"])), EXIT_ERROR);
}
