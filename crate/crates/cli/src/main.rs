use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmpde::experiments::preset;
use mmpde::trainer::TrainStatus;
use mmpde::verify::{GradcheckOptions, ADJOINT_TOL, GRAD_TOL, LAP_TOL};
use mmpde_cli::commands::{
    eval_checkpoint, gradcheck_problems, parse_spacing, reference_solution, resolve_output_dir, run, run_gradcheck,
    write_reference_to,
};
use mmpde_cli::config::RunConfig;
use mmpde_cli::{EXIT_CHECK_FAILED, EXIT_DIVERGED, EXIT_ERROR, OUTPUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "mmpde", version, about = "Minimax neural solver for elliptic boundary-value problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a trial/multiplier pair and write logs, a solution slice and checkpoints.
    Run(RunArgs),
    /// Compare jet derivatives and parameter adjoints against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a finite-difference reference solution of a planar Poisson problem as CSV.
    Reference(ReferenceArgs),
    /// Report the relative L2 error of a saved trial network.
    Eval(EvalArgs),
    /// List the built-in experiment presets.
    Presets,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment preset (see `mmpde presets`).
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> anyhow::Result<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path),
            (None, Some(name)) => Ok(RunConfig::from_experiment(&preset(name)?)),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Override the iteration count.
    #[arg(long)]
    iters: Option<usize>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the interior sample count.
    #[arg(long)]
    n: Option<usize>,
    /// Override the boundary sample count.
    #[arg(long)]
    nb: Option<usize>,
    /// Run directory (takes precedence over the config and the environment).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Problem name, or `all` for the Poisson, semilinear and nonlinear problems.
    #[arg(long, default_value = "dirichlet_poisson")]
    problem: String,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Conductivity exponent of the nonlinear problem.
    #[arg(long, default_value_t = 2)]
    m: i32,
    #[arg(long, default_value_t = 20)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Interior and boundary samples in the loss whose adjoint is checked.
    #[arg(long, default_value_t = 10)]
    batch: usize,
    /// Perturb the computed adjoint; the check must then fail.
    #[arg(long, hide = true)]
    corrupt_adjoint: bool,
}

#[derive(Args)]
struct ReferenceArgs {
    #[arg(long, default_value = "l_shape")]
    problem: String,
    /// Grid spacing, e.g. `1/128` or `0.01`.
    #[arg(long, default_value = "1/128")]
    h: String,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: Source,
    /// Trial network checkpoint (`u_*.ckpt`).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test set size; the configuration's when absent.
    #[arg(long)]
    test_points: Option<usize>,
    /// Test set seed; the configuration's when absent.
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_run(args: RunArgs) -> anyhow::Result<u8> {
    let mut cfg = args.source.load()?;
    if let Some(v) = args.iters {
        cfg.train.iters = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.n {
        cfg.train.n_interior = v;
    }
    if let Some(v) = args.nb {
        cfg.train.n_boundary = v;
    }
    cfg.validate()?;
    if args.dump_config {
        print!("{}", cfg.to_toml()?);
        return Ok(0);
    }
    let env = std::env::var(OUTPUT_DIR_ENV).ok();
    let out = resolve_output_dir(&cfg, args.out.as_deref(), env.as_deref());
    let summary = run(&cfg, &out)?;
    println!("run directory: {}", summary.out_dir.display());
    println!("iterations:    {}", summary.iterations);
    if let Some(l) = summary.final_loss {
        println!("final loss:    {l:.6e}");
    }
    if let Some(e) = summary.final_rel_l2 {
        println!("final rel-L2:  {e:.6e}");
    }
    match summary.status {
        TrainStatus::Completed => Ok(0),
        TrainStatus::Diverged { iter } => {
            eprintln!("error: training diverged at iteration {iter}");
            Ok(EXIT_DIVERGED as u8)
        }
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<u8> {
    let problems = gradcheck_problems(&args.problem, args.dim, args.m)?;
    let opts = GradcheckOptions {
        pairs: args.pairs,
        seed: args.seed,
        batch: args.batch,
        corrupt_adjoint: args.corrupt_adjoint,
        ..GradcheckOptions::new(Vec::new())
    };
    let report = run_gradcheck(&problems, args.width, args.depth, opts)?;
    println!("pairs:               {}", report.pairs);
    println!("input gradient:      {:.3e} (tolerance {GRAD_TOL:.0e})", report.max_grad_dev);
    println!("input Laplacian:     {:.3e} (tolerance {LAP_TOL:.0e})", report.max_lap_dev);
    println!("parameter adjoint:   {:.3e} (tolerance {ADJOINT_TOL:.0e})", report.max_adjoint_dev);
    if report.passed() {
        println!("gradcheck passed");
        Ok(0)
    } else {
        eprintln!("error: gradcheck tolerance exceeded");
        Ok(EXIT_CHECK_FAILED as u8)
    }
}

fn cmd_reference(args: ReferenceArgs) -> anyhow::Result<u8> {
    let sol = reference_solution(&args.problem, parse_spacing(&args.h)?)?;
    write_reference_to(&sol, args.out.as_deref())?;
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<u8> {
    let cfg = args.source.load()?;
    let n = args.test_points.unwrap_or(cfg.train.test_points);
    let seed = args.seed.unwrap_or(cfg.train.seed);
    let err = eval_checkpoint(&cfg, &args.checkpoint, n, seed)?;
    println!("rel-L2 error: {err:.16e}");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Reference(a) => cmd_reference(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Presets => {
            for e in mmpde::experiments::presets() {
                println!("{:<22} {}", e.name, e.summary);
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
