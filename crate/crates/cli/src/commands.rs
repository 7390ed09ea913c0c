use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mmpde::experiments::SliceSpec;
use mmpde::fd::{solve_poisson_fd, FdSolution};
use mmpde::network::architecture;
use mmpde::problems::{builtin, l_shape_poisson, mixed_poisson, OperatorSpec, PdeProblem};
use mmpde::trainer::{train_with, TestSet, TrainStatus};
use mmpde::verify::{gradcheck, GradcheckOptions, GradcheckReport};
use mmpde::{MlpNet, Scalar};

use crate::artifacts::{write_reference, write_solution_dump, TrainLog};
use crate::config::{Precision, RunConfig};

/// `explicit`, then the config's `output_dir`, then `$MMPDE_OUTPUT_DIR/<name>`,
/// then `./runs/<name>`.
pub fn resolve_output_dir(cfg: &RunConfig, explicit: Option<&Path>, env: Option<&str>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    match env.filter(|s| !s.is_empty()) {
        Some(root) => Path::new(root).join(&cfg.name),
        None => Path::new("runs").join(&cfg.name),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub iterations: usize,
    pub status: TrainStatus,
    pub final_rel_l2: Option<f64>,
    pub final_loss: Option<f64>,
}

/// Trains per `cfg` and writes `config.toml`, `train_log.csv`,
/// `solution_dump.csv` and `checkpoints/` into `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<RunSummary> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F64 => run_typed::<f64>(cfg, out_dir),
        Precision::F32 => run_typed::<f32>(cfg, out_dir),
    }
}

fn run_typed<T: Scalar>(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<RunSummary> {
    let experiment = cfg.experiment()?;
    let problem = experiment.problem.build()?;
    let slice = match &cfg.slice.base {
        Some(base) => SliceSpec { axes: cfg.slice.axes, base: base.clone(), points: cfg.slice.points },
        None => experiment.slice(&problem),
    };
    let grid = slice.grid(&problem)?;
    let (u, v) = experiment.networks::<T>()?;

    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    let mut log = TrainLog::create(&out_dir.join("train_log.csv"), cfg.wall_clock)?;

    let every = cfg.checkpoint_every;
    let mut log_err = None;
    let outcome = train_with(&problem, u, v, &experiment.train, |rec, u, v| {
        if let Err(e) = log.append(rec) {
            log_err = Some(e);
            return Err(mmpde::Error::Io(std::io::Error::other("writing train_log.csv")));
        }
        let done = rec.iter + 1;
        if every > 0 && done % every == 0 {
            u.save(ckpt_dir.join(format!("u_{done}.ckpt")))?;
            v.save(ckpt_dir.join(format!("v_{done}.ckpt")))?;
        }
        Ok(())
    });
    if let Some(e) = log_err {
        return Err(e);
    }
    let outcome = outcome?;
    log.flush()?;

    outcome.u.save(ckpt_dir.join("u_final.ckpt"))?;
    outcome.v.save(ckpt_dir.join("v_final.ckpt"))?;
    write_solution_dump(&out_dir.join("solution_dump.csv"), &problem, &grid, &outcome.u, &outcome.v)?;

    let last = outcome.records.last();
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        iterations: outcome.records.len(),
        status: outcome.status,
        final_rel_l2: last.and_then(|r| r.rel_l2_error),
        final_loss: last.map(|r| r.loss.total),
    })
}

/// Problems checked by `gradcheck` for a given name: the named one, or for
/// `all` every problem defined in `dim` dimensions.
pub fn gradcheck_problems(name: &str, dim: usize, m: i32) -> anyhow::Result<Vec<PdeProblem>> {
    if name == "all" {
        return Ok(vec![builtin("dirichlet_poisson", dim, 0)?, builtin("semilinear", dim, 0)?, builtin("nonlinear", dim, m)?]);
    }
    let p = match name {
        // the finite-difference reference is irrelevant to derivative checks
        "l_shape" => l_shape_poisson()?,
        "mixed" => mixed_poisson()?,
        other => builtin(other, dim, m)?,
    };
    if p.dim() != dim {
        bail!("problem '{name}' is {}-dimensional, --dim is {dim}", p.dim());
    }
    Ok(vec![p])
}

pub fn run_gradcheck(problems: &[PdeProblem], width: usize, depth: usize, opts: GradcheckOptions) -> anyhow::Result<GradcheckReport> {
    let Some(p) = problems.first() else { bail!("no problems to check") };
    let opts = GradcheckOptions { sizes: architecture(p.dim(), width, depth), ..opts };
    Ok(gradcheck(problems, &opts)?)
}

/// Accepts a decimal (`0.0078125`) or a unit fraction (`1/128`).
pub fn parse_spacing(text: &str) -> anyhow::Result<f64> {
    let t = text.trim();
    let h = match t.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse()?, b.trim().parse()?);
            a / b
        }
        None => t.parse()?,
    };
    if !(h.is_finite() && h > 0.0) {
        bail!("grid spacing must be positive, got '{text}'");
    }
    Ok(h)
}

/// Finite-difference solution of a two-dimensional Laplace-operator problem.
pub fn reference_solution(name: &str, h: f64) -> anyhow::Result<FdSolution> {
    let p = match name {
        "l_shape" => l_shape_poisson()?,
        "mixed" => mixed_poisson()?,
        other => builtin(other, 2, 0)?,
    };
    if !matches!(p.operator, OperatorSpec::Laplace) {
        bail!("problem '{name}' is not a Poisson problem; references exist for the Laplacian only");
    }
    Ok(solve_poisson_fd(&p.domain, &p.source, &p.bcs, h)?)
}

pub fn write_reference_to(sol: &FdSolution, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_reference(std::io::BufWriter::new(file), sol)
        }
        None => write_reference(std::io::stdout().lock(), sol),
    }
}

/// Relative L2 error of a saved trial network on the test set of `cfg`.
pub fn eval_checkpoint(cfg: &RunConfig, checkpoint: &Path, test_points: usize, seed: u64) -> anyhow::Result<f64> {
    let problem = cfg.experiment()?.problem.build()?;
    let u = MlpNet::<f64>::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if u.input_dim() != problem.dim() {
        bail!("checkpoint takes {} inputs, problem '{}' is {}-dimensional", u.input_dim(), problem.name, problem.dim());
    }
    let Some(test) = TestSet::for_problem(&problem, test_points, seed)? else {
        bail!("problem '{}' has no reference solution", problem.name);
    };
    Ok(test.rel_l2(&u)?)
}
