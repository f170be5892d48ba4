use std::path::PathBuf;
use std::process::ExitCode;

use acil_cli::commands;
use acil_core::acquisition::{BalancingAf, ClassicalAf};
use clap::{Parser, Subcommand};

/// Active class-incremental learning simulator.
#[derive(Parser)]
#[command(name = "acil", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: $ACIL_OUT_ROOT/<label>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a config key, e.g. --set plan.balancing=poor. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Replace base_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every budget x classical x balancing combination.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated budget fractions, e.g. 0.2,0.1,0.05.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
        /// Comma-separated classical AFs: rand,core,ent,marg.
        #[arg(long, value_delimiter = ',')]
        classical: Option<Vec<ClassicalAf>>,
        /// Comma-separated balancing AFs: same,rand,poor,b-core.
        #[arg(long, value_delimiter = ',')]
        balancing: Option<Vec<BalancingAf>>,
        /// Worker pool size for sweep cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Export the configured stream as train.csv / test.csv.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Regenerate plots and a digest from an existing run directory.
    ExportReport {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            set,
            seed,
        } => commands::run(&config, out, &set, seed).map(|_| ()),
        Command::Sweep {
            config,
            out,
            set,
            seed,
            budgets,
            classical,
            balancing,
            jobs,
        } => commands::sweep(&config, out, &set, seed, budgets, classical, balancing, jobs)
            .map(|_| ()),
        Command::GenData { config, out, set } => commands::gen_data(&config, out, &set),
        Command::ExportReport { run, out } => commands::export_report(&run, out),
        Command::ValidateConfig { config, set } => commands::validate_config(&config, &set),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
