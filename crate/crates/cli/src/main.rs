use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pwdpd::postweight::Ratio;
use pwdpd_cli::{
    cmd_acpr, cmd_optimize, cmd_sweep, cmd_train, counts_table, parse_schemes_arg, CliResult, Exit,
};

/// Beam-oriented DPD with post-weighting under crosstalk.
///
/// Exit codes: 0 success, 1 input error, 2 non-convergence, 3 solver
/// disagreement under --verify. Set RUST_LOG for log verbosity.
#[derive(Parser)]
#[command(name = "pwdpd", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate crosstalk and train the predistorter of every subarray.
    Train {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve for the post-weighting coefficients of one or all layouts.
    Optimize {
        scenario: PathBuf,
        /// Layout name from the scenario; all layouts when omitted.
        #[arg(long)]
        layout: Vec<String>,
        /// Cross-check against an independent null-space solve.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Nonlinear radiation versus angle as CSV.
    Sweep {
        scenario: PathBuf,
        #[arg(long, default_value = "dnr,dpd,ff,lc")]
        schemes: String,
        /// Directory for sweep.csv; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coefficient, adder and RF-chain counts of FF and LC layouts.
    Counts {
        #[arg(short = 'S', long = "S", default_value_t = 4)]
        s: usize,
        #[arg(short = 'Q', long = "Q", default_value_t = 3)]
        q: usize,
        #[arg(long, default_value = "1/2")]
        r: Ratio,
        #[arg(long, default_value_t = 1)]
        nu: u32,
        /// Tabulate a grid of (S, Q, r, nu) and check every cell.
        #[arg(long)]
        grid: bool,
    },
    /// Average adjacent channel power ratio of one scheme as CSV.
    Acpr {
        scenario: PathBuf,
        #[arg(long, default_value = "ff")]
        scheme: String,
        /// Use the spectrum averaged over the sweep grid instead of the
        /// steering direction.
        #[arg(long)]
        averaged: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<Exit> {
    match cli.cmd {
        Cmd::Train { scenario, out } => cmd_train(&scenario, &out),
        Cmd::Optimize {
            scenario,
            layout,
            verify,
            out,
        } => cmd_optimize(&scenario, &layout, verify, &out),
        Cmd::Sweep { scenario, schemes, out } => cmd_sweep(&scenario, &parse_schemes_arg(&schemes), out.as_deref()),
        Cmd::Counts { s, q, r, nu, grid } => {
            print!("{}", counts_table(s, q, r, nu, grid)?);
            Ok(Exit::Ok)
        }
        Cmd::Acpr {
            scenario,
            scheme,
            averaged,
            out,
        } => cmd_acpr(&scenario, &scheme, averaged, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = match run(Cli::parse()) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit
        }
    };
    ExitCode::from(code as u8)
}
