use std::path::PathBuf;

use clap::{Parser, Subcommand};

use lagmc::cli;

#[derive(Parser)]
#[command(
    name = "lagmc",
    about = "Second boundary value problem of the Lagrangian mean curvature equation: solver and verifier",
    version
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and emit fields, logs and certificates.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the operator identity and structure-condition suite.
    VerifyOperator {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Primal solve, independent dual solve, duality certificates.
    DualCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Independent solves for each tau in the list (parallel).
    SweepTau {
        #[arg(long)]
        config: PathBuf,
        /// Comma- or space-separated tau values.
        #[arg(long = "tau-list", num_args = 0..)]
        tau_list: Vec<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solves at doubling resolutions and prints convergence orders.
    RefineStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        levels: u32,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() {
    let args = Args::parse();
    let code = match args.command {
        Command::Solve { config, out, seed } => cli::cmd_solve(&config, out.as_deref(), seed),
        Command::VerifyOperator { config, seed } => cli::cmd_verify_operator(&config, seed),
        Command::DualCheck { config, out, seed } => {
            cli::cmd_dual_check(&config, out.as_deref(), seed)
        }
        Command::SweepTau {
            config,
            tau_list,
            out,
            seed,
        } => cli::cmd_sweep_tau(&config, &tau_list, out.as_deref(), seed),
        Command::RefineStudy {
            config,
            levels,
            out,
            seed,
        } => cli::cmd_refine_study(&config, levels, out.as_deref(), seed),
    };
    std::process::exit(code);
}
