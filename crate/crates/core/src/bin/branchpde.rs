use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use branchpde::config::{resolve, RunConfig};
use branchpde::harness::{compare_dirs, execute, run_convergence, run_dir_name, ConvergenceConfig, RunKind};
use branchpde::metrics::metrics_csv;
use branchpde::record::RunStatus;
use branchpde::Error;

#[derive(Parser)]
#[command(name = "branchpde", version, about = "Stochastic branching particle solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Particle solver for the scalar equation.
    RunScalar(RunArgs),
    /// Particle solver for the Keller-Segel system.
    RunKs(RunArgs),
    /// Finite-difference reference solver.
    RunFd(RunArgs),
    /// Monte Carlo convergence sweep against a reference run.
    Convergence(ConvergenceArgs),
    /// Per-snapshot errors between two run directories (the second is the reference).
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_u: Option<usize>,
    #[arg(long)]
    n_v: Option<usize>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    recenter_plots: bool,
}

impl RunArgs {
    fn overrides(&self) -> RunConfig {
        RunConfig {
            preset: self.preset.clone(),
            seed: self.seed,
            tau: self.tau,
            t_end: self.t_end,
            n: self.n,
            n_u: self.n_u,
            n_v: self.n_v,
            modes: self.modes,
            grid: self.grid,
            threads: self.threads,
            recenter_plots: self.recenter_plots.then_some(true),
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    run_a: PathBuf,
    run_b: PathBuf,
    /// Also report the H^{-s} distance with this `s`.
    #[arg(long)]
    sobolev: Option<f64>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set_threads(threads: Option<usize>) -> Result<(), Error> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn cmd_run(kind: RunKind, args: &RunArgs) -> Result<i32, Error> {
    let file = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let resolved = resolve(&file.merged(&args.overrides()))?;
    set_threads(resolved.threads)?;
    let record = execute(kind, &resolved)?;
    let dir = args.out.join(run_dir_name(kind, resolved.solver.seed));
    record.write_dir(&dir, resolved.solver.grid, resolved.recenter_plots)?;
    println!("{}", dir.display());
    match &record.status {
        RunStatus::Completed => Ok(0),
        RunStatus::Failed {
            step,
            reason,
            exit_code,
        } => {
            eprintln!("run failed at step {step}: {reason}");
            Ok(*exit_code)
        }
    }
}

fn cmd_convergence(args: &ConvergenceArgs) -> Result<i32, Error> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::Io {
        path: args.config.display().to_string(),
        source: e,
    })?;
    let cfg: ConvergenceConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    set_threads(args.threads.or(cfg.base.threads))?;
    let report = run_convergence(&cfg, Some(&args.out.join("cache")))?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    let seed = cfg.base.seed.unwrap_or(0);
    let path = args.out.join(format!(
        "convergence-{}-seed{seed}.csv",
        chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ")
    ));
    write_file(&path, &report.to_csv())?;
    println!("{}", path.display());
    println!("slope {:.4}", report.fit.slope);
    Ok(0)
}

fn cmd_compare(args: &CompareArgs) -> Result<i32, Error> {
    let rows = compare_dirs(&args.run_a, &args.run_b, args.sobolev)?;
    let csv = metrics_csv(&rows);
    match &args.out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RunScalar(a) => cmd_run(RunKind::Scalar, a),
        Command::RunKs(a) => cmd_run(RunKind::Ks, a),
        Command::RunFd(a) => cmd_run(RunKind::Fd, a),
        Command::Convergence(a) => cmd_convergence(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
