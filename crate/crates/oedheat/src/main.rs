use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use oedheat::config::RunConfig;
use oedheat::pipeline::Pipeline;

/// Binary sensor placement for reconstructing a heat source from
/// final-time point measurements.
#[derive(Parser)]
#[command(name = "oedheat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the noise level and build (or reuse) the low-rank
    /// factorization of the forward map.
    Factorize(CommonArgs),
    /// Optimize binary designs for every budget up to `design.m0_max` and
    /// compare them against random designs.
    Sweep(CommonArgs),
    /// Reconstruct the reference source from synthetic data with the
    /// optimized design and the best random design of one budget.
    Reconstruct(CommonArgs),
    /// Write pointwise prior and posterior variances for one budget.
    Variance(CommonArgs),
    /// Run factorize, sweep, reconstruct and variance in order.
    All(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Sensor budget for reconstruct/variance (default: min(10, m0_max)).
    #[arg(long)]
    m0: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "oedheat-out")]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Factorize(a)
        | Command::Sweep(a)
        | Command::Reconstruct(a)
        | Command::Variance(a)
        | Command::All(a) => a,
    };

    let mut cfg = RunConfig::from_path(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let pipeline = Pipeline::new(cfg).context("building the pipeline")?;
    let budget = args.m0.unwrap_or_else(|| pipeline.default_budget());
    let out = args.out.as_path();

    match cli.command {
        Command::Factorize(_) => {
            pipeline.factorize(out)?;
        }
        Command::Sweep(_) => {
            let factor = pipeline.factor(out)?;
            pipeline.sweep(&factor, out)?;
        }
        Command::Reconstruct(_) => {
            let factor = pipeline.factor(out)?;
            pipeline.reconstruct(&factor, out, budget)?;
        }
        Command::Variance(_) => {
            let factor = pipeline.factor(out)?;
            pipeline.variance(&factor, out, budget)?;
        }
        Command::All(_) => {
            pipeline.run_all(out)?;
        }
    }
    Ok(())
}
