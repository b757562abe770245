//! `cusp-torsion`: heat kernels, regularized traces, torsion and Quillen-norm
//! functionals of cusped surfaces from the command line.
//!
//! Exit codes: 0 success, 2 input error, 3 tolerance failure, 1 output failure.
//! `CUSP_TORSION_THREADS` caps the worker threads.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cusp_torsion::Error;

use commands::{parse_list, parse_tol, read_config, RunConfig, TimeGrid};

#[derive(Debug, Parser)]
#[command(
    name = "cusp-torsion",
    version,
    about = "Heat kernels, regularized traces and analytic torsion of cusped surfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON input for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tolerance for the command's own checks (psi-check, selberg, anomaly cusp-limit) or kernel truncation.
    #[arg(long, global = true, value_parser = parse_tol)]
    tol: Option<f64>,
    /// Comma-separated θ values, e.g. 1e-3,1e-4.
    #[arg(long, global = true, value_parser = parse_list)]
    theta: Option<commands::ThetaList>,
    /// Geometric time grid t_min:t_max:points.
    #[arg(long = "t-grid", global = true, value_parser = TimeGrid::parse)]
    t_grid: Option<TimeGrid>,
    /// Also report the Mellin constant term with its literal printed signs.
    #[arg(long = "paper-constants", global = true)]
    paper_constants: bool,
    /// Print column names as the first CSV line.
    #[arg(long, global = true)]
    header: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// ζ'(−1), γ, c_0..c_4 and ln Z'_P(1) as JSON.
    Constants,
    /// The cutoff integrals over [1/2, 1] against their exact values.
    PsiCheck,
    /// Model-cusp heat kernel. Config: {"t", "u1": [re, im], "u2": [re, im], "n", "eps"}.
    /// With --t-grid, CSV columns are t, kernel, trunc_err.
    Kernel,
    /// Regularized heat trace as CSV with columns t, trace.
    /// Config: {"provider": object | "reference_sphere" | "reference_triplicate" | "flat_torus", "reference", "eta", "log_scale"}.
    Trace,
    /// ζ'(0), analytic torsion and its ingredients as JSON; same config as trace.
    Torsion,
    /// Truncated Selberg product. Config: {"lengths", "multiplicities", "s", "k_max"}.
    Selberg,
    /// Anomaly and compact-perturbation functionals. Config "mode": cusp_limit | cusp | bgs | compact.
    Anomaly,
    /// Flattening families with bands, profiles and (tight family) sandwich checks.
    /// Config: {"kind": "anomaly" | "tight", "theta", "n", "samples"}.
    Flatten,
    /// Run the acceptance battery; JSON report on stdout, one line per criterion on stderr.
    Verify,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Tolerance(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Tolerance { .. } => Failure::Tolerance(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

fn cap_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("CUSP_TORSION_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Input(format!(
            "CUSP_TORSION_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Internal(e.to_string()))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    cap_threads()?;
    let cfg = RunConfig {
        config: cli.config.as_deref().map(read_config).transpose()?,
        tol: cli.tol,
        theta: cli.theta.map(|t| t.0),
        t_grid: cli.t_grid,
        paper_constants: cli.paper_constants,
        header: cli.header,
    };
    let emitted = match cli.command {
        Command::Constants => commands::constants(&cfg),
        Command::PsiCheck => commands::psi_check(&cfg),
        Command::Kernel => commands::kernel(&cfg),
        Command::Trace => commands::trace(&cfg),
        Command::Torsion => commands::torsion(&cfg),
        Command::Selberg => commands::selberg(&cfg),
        Command::Anomaly => commands::anomaly(&cfg),
        Command::Flatten => commands::flatten(&cfg),
        Command::Verify => commands::verify(&cfg),
    }?;
    match &cli.out {
        Some(path) => std::fs::write(path, &emitted.text)
            .map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{}", emitted.text),
    }
    Ok(emitted.ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("tolerance check failed");
            ExitCode::from(3)
        }
        Err(Failure::Input(m)) => {
            eprintln!("input error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Tolerance(m)) => {
            eprintln!("tolerance failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
