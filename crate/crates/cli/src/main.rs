//! `svs`: sphere-based view synthesis pipeline.
//!
//! Subcommands cover dataset generation, novel-view rendering, the full
//! render + texture-transfer + fusion pipeline, radius fitting, evaluation,
//! the depth-sparsity sweep, and performance benchmarking. All randomness
//! flows from `--seed`; outputs are byte-identical for fixed seed and thread
//! count (timing columns excepted, they measure wall clock).

use clap::{Parser, Subcommand};
use std::process::ExitCode;


mod commands;
mod common;



#[derive(Parser)]
#[command(name = "svs", version, about = "Sphere-based view synthesis from sparse RGB-D")]
struct Cli {
    /// Worker threads for parallel sections (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic fixture directories (views + cameras + scene).
    DatasetGen(commands::dataset_gen::Args),
    /// Render a novel view from one RGB-D input.
    Render(commands::render::Args),
    /// Full pipeline: render, IUV texture transfer, fusion, completion.
    Pipeline(commands::pipeline::Args),
    /// Optimize sphere radii (and optionally features/positions) against
    /// target views.
    FitRadii(commands::fit_radii::Args),
    /// Compare a prediction against ground truth and report metrics.
    Evaluate(commands::evaluate::Args),
    /// Run the {5, 10, 25, 100}% depth sparsity protocol on a fixture.
    SparsitySweep(commands::sparsity_sweep::Args),
    /// Measure forward/backward rendering speed.
    Bench(commands::bench::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some() {
        eprintln!("note: built without the parallel feature; --threads ignored");
    }

    let result = match cli.command {
        Command::DatasetGen(args) => commands::dataset_gen::run(args),
        Command::Render(args) => commands::render::run(args),
        Command::Pipeline(args) => commands::pipeline::run(args),
        Command::FitRadii(args) => commands::fit_radii::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::SparsitySweep(args) => commands::sparsity_sweep::run(args),
        Command::Bench(args) => commands::bench::run(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
