mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::Flags;

#[derive(Debug, Parser)]
#[command(name = "gnnflow", version, about = "GNN layers as dataflow pipelines: run, simulate, model, characterize")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum SchedulerArg {
    #[default]
    Threaded,
    RoundRobin,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic edge list.
    Gen {
        #[command(flatten)]
        flags: Flags,
    },
    /// Run the reference layer and write its outputs.
    Run {
        #[command(flatten)]
        flags: Flags,
        /// Also write the parameters used as a tensor manifest.
        #[arg(long)]
        save_params: bool,
    },
    /// Run the streaming pipeline and check it against the reference.
    Pipeline {
        #[command(flatten)]
        flags: Flags,
        #[arg(long, value_enum, default_value_t)]
        scheduler: SchedulerArg,
        /// FIFO capacity in items.
        #[arg(long)]
        capacity: Option<usize>,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Cycle-level simulation of the pipeline over a graph's degrees.
    Sim {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        capacity: Option<usize>,
        /// Ignore FIFO capacities.
        #[arg(long)]
        unbounded: bool,
        /// Fail unless the total lies within the bottleneck bound plus
        /// stage latencies (requires --unbounded).
        #[arg(long)]
        check_bounds: bool,
    },
    /// Closed-form cycle estimate from node and edge counts.
    Model {
        #[command(flatten)]
        flags: Flags,
    },
    /// Instruction mix and locality scores of traced kernels.
    Characterize {
        #[command(flatten)]
        flags: Flags,
        /// Number of sampled target nodes.
        #[arg(long, default_value_t = gnnflow::characterize::DEFAULT_SAMPLE)]
        sample: usize,
        #[arg(long, default_value_t = gnnflow::characterize::DEFAULT_SAMPLE_SEED)]
        sample_seed: u64,
        /// Write each trace as `<model>.gnnt` into the output directory.
        #[arg(long)]
        dump_traces: bool,
    },
    /// Speedup and energy-reduction tables against the CPU/GPU baselines.
    Compare {
        #[command(flatten)]
        flags: Flags,
        /// Baselines CSV; the shipped tables by default.
        #[arg(long)]
        baselines: Option<std::path::PathBuf>,
        /// `model` reports whose seconds replace the HLS times.
        #[arg(long = "report")]
        reports: Vec<std::path::PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { flags } => commands::gen(&flags),
        Command::Run { flags, save_params } => commands::run(&flags, save_params),
        Command::Pipeline {
            flags,
            scheduler,
            capacity,
            tolerance,
        } => commands::pipeline(&flags, scheduler, capacity, tolerance),
        Command::Sim {
            flags,
            capacity,
            unbounded,
            check_bounds,
        } => commands::sim(&flags, capacity, unbounded, check_bounds),
        Command::Model { flags } => commands::model(&flags),
        Command::Characterize {
            flags,
            sample,
            sample_seed,
            dump_traces,
        } => commands::characterize(&flags, sample, sample_seed, dump_traces),
        Command::Compare {
            flags,
            baselines,
            reports,
        } => commands::compare(&flags, baselines.as_deref(), &reports),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
