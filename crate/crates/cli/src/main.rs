//! Command-line driver: problem generation, controller synthesis by
//! horizon continuation, verification suites, and trace export.
//!
//! Exit codes: 0 success/stabilizing, 1 verification check failed,
//! 2 bad input (dimensions, parse errors, unknown columns), 3 marginal
//! endpoint, 4 continuation did not stabilize (diverged or step failure).
//! Logging is controlled by `CQLQG_LOG={error,info,debug}`.

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{cmd_export, cmd_gen, cmd_synth, cmd_verify, exit_code};
use cqlqg_core::model::ProblemDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Parser)]
#[command(
    name = "cqlqg",
    version,
    about = "Coherent quantum LQG controller synthesis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded random problem file.
    Gen {
        /// Output problem file.
        #[arg(long)]
        out: PathBuf,
        /// Plant/controller state dimension (even).
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Plant external field channels (even).
        #[arg(long, default_value_t = 4)]
        m1: usize,
        /// Controller external field channels (even).
        #[arg(long, default_value_t = 4)]
        m2: usize,
        /// Plant output field channels (even, at most m1).
        #[arg(long, default_value_t = 2)]
        p1: usize,
        /// Controller output field channels (even, at most m2).
        #[arg(long, default_value_t = 2)]
        p2: usize,
        /// Number of penalized output rows.
        #[arg(long, default_value_t = 2)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Magnitude of the random physical parameters.
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        /// Plant-controller block correlation of the initial covariance in
        /// (0, 1]; zero keeps the identity covariance, which leaves the
        /// zero-horizon output map trivial.
        #[arg(long, default_value_t = 0.0)]
        sigma_coupling: f64,
    },
    /// Synthesize a controller by horizon continuation.
    Synth {
        /// Problem file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory for trace, controller and summary files.
        #[arg(long)]
        out: PathBuf,
        /// Anchor horizon (defaults to an abscissa-scaled value near 1e-3).
        #[arg(long)]
        t0: Option<f64>,
        /// Final horizon of the sweep.
        #[arg(long, default_value_t = 1e4)]
        tmax: f64,
        /// Initial step in ln T.
        #[arg(long, default_value_t = 0.25)]
        h0: f64,
        /// Corrector tolerance on the gradient norm.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long, default_value_t = 400)]
        max_steps: usize,
    },
    /// Check structural identities of a problem and optionally a controller.
    Verify {
        /// Problem file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Controller file; omitting it verifies the plant data only.
        #[arg(long)]
        controller: Option<PathBuf>,
        /// Horizon for the discounted-cost checks.
        #[arg(long)]
        t: Option<f64>,
        /// Report destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
        format: OutputFormat,
    },
    /// Export selected trace columns as CSV (or JSON rows).
    Export {
        /// Trace file produced by synth.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated column list.
        #[arg(long, default_value = "T,cost")]
        columns: String,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
}

fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen {
            out,
            n,
            m1,
            m2,
            p1,
            p2,
            r,
            seed,
            scale,
            sigma_coupling,
        } => cmd_gen(&commands::GenArgs {
            out,
            dims: ProblemDims {
                n,
                m1,
                m2,
                p1,
                p2,
                r,
            },
            seed,
            scale,
            sigma_coupling,
        }),
        Command::Synth {
            input,
            out,
            t0,
            tmax,
            h0,
            tol,
            max_steps,
        } => cmd_synth(&commands::SynthArgs {
            input,
            out_dir: out,
            t0,
            t_max: tmax,
            h0,
            tol_corrector: tol,
            max_steps,
        }),
        Command::Verify {
            input,
            controller,
            t,
            out,
            format,
        } => cmd_verify(&commands::VerifyArgs {
            input,
            controller,
            t,
            out,
            format,
        }),
        Command::Export {
            input,
            out,
            columns,
            format,
        } => cmd_export(&commands::ExportArgs {
            input,
            out,
            columns,
            format,
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code::BAD_INPUT
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CQLQG_LOG", "error"))
        .format_timestamp(None)
        .init();
    ExitCode::from(run() as u8)
}
