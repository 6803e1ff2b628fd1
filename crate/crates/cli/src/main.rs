use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use numeraire_cli::{execute, Format, Overrides};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

/// Prices exchange options and runs the parity and bubble checks described
/// by a JSON config. Exit status: 0 all checks pass, 1 some check failed,
/// 2 the run could not complete.
#[derive(Debug, Parser)]
#[command(name = "numeraire", version)]
struct Args {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output file; overrides the config. Standard output when neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Master seed; overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides {
        out: args.out,
        format: args.format.map(|f| match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }),
        seed: args.seed,
        workers: args.workers,
    };
    match execute(&args.config, &overrides) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
