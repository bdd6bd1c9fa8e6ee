use clap::{Parser, Subcommand, ValueEnum};
use jeans_cli::commands::{cmd_fuchsian, cmd_ode, cmd_params, cmd_pde, cmd_verify, CliError};
use jeans_cli::config::{ConfigError, RunConfig};
use jeans_core::acceptance::{format_line, Fault};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "jeans", version, about = "Reference blowup, perturbation and compactified-time runs")]
struct Cli {
    /// JSON run configuration; defaults apply to omitted sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Derived constants, admissible k interval and eigenvalues.
    Params {
        /// Also write the eigenvalues over the admissible k interval.
        #[arg(long)]
        k_scan: bool,
    },
    /// Reference trajectory, bound report and blowup estimate.
    Ode,
    /// Perturbation run: norm records, snapshots and summary.
    Pde,
    /// Compactified-time run with condition V and energy diagnostics.
    Fuchsian,
    /// Run the acceptance checks and print a pass/fail table.
    Verify {
        /// Reduced thresholds and grids.
        #[arg(long)]
        quick: bool,
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Constants,
}

/// Writes a line to stdout; a closed pipe is not an error.
fn emit(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("JEANS_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(ConfigError::Invalid(format!("JEANS_THREADS must be a positive integer, got {v:?}"))))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    init_threads()?;
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let print = |v: &serde_json::Value| emit(&serde_json::to_string_pretty(v).unwrap_or_default());
    match cli.cmd {
        Cmd::Params { k_scan } => print(&cmd_params(&cfg, &out, k_scan)?),
        Cmd::Ode => print(&cmd_ode(&cfg, &out)?),
        Cmd::Pde => print(&cmd_pde(&cfg, &out)?),
        Cmd::Fuchsian => print(&cmd_fuchsian(&cfg, &out)?),
        Cmd::Verify { quick, inject_fault } => {
            let fault = inject_fault.map(|f| match f {
                FaultArg::Constants => Fault::Constants,
            });
            let (results, all) = cmd_verify(&cfg, &out, quick, fault)?;
            for o in &results {
                emit(&format_line(o));
            }
            let failed = results.iter().filter(|o| !o.pass).count();
            emit(&format!("{} of {} criteria passed", results.len() - failed, results.len()));
            if !all {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
