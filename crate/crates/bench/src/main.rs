use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use revdiff_bench::commands;
use revdiff_bench::config::{self, ExperimentConfig, PRESETS};
use revdiff_bench::error::{BenchError, EXIT_OTHER};

/// Worker-thread cap for the sampler pool.
const THREADS_ENV: &str = "REVDIFF_THREADS";

#[derive(Parser)]
#[command(
    name = "revdiff-bench",
    version,
    about = "Run reverse-diffusion sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples with the configured method; writes samples.csv and meta.json.
    Sample(CommonArgs),
    /// W2 error against exact samples over a sweep of mode radii; writes results.csv.
    SweepW2 {
        #[command(flatten)]
        common: CommonArgs,
        /// Run sweep points concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Structural checks of a mixture target; writes report.json.
    Check(CommonArgs),
    /// Score-estimator MSE against the exact score; writes mse.csv.
    ScoreMse(CommonArgs),
    /// List the shipped presets.
    Presets,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a shipped preset.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory [default: the config's `output`, else `out`].
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf), BenchError> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => config::load(path)?,
            (None, Some(name)) => config::preset(name)?,
            (None, None) => {
                return Err(BenchError::Config(
                    "pass --config <path> or --preset <name>".into(),
                ))
            }
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let out = self
            .output
            .clone()
            .or_else(|| config.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((config, out))
    }
}

fn init_threads() -> Result<(), BenchError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| {
            BenchError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BenchError::Config(format!("{THREADS_ENV}: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), BenchError> {
    init_threads()?;
    match cli.command {
        Command::Sample(args) => {
            let (config, out) = args.resolve()?;
            let meta = commands::cmd_sample(&config, &out)?;
            println!(
                "{} chains with {} in {:.2}s: {} potential, {} gradient queries -> {}",
                meta.num_chains,
                meta.method,
                meta.wall_seconds,
                meta.potential_queries,
                meta.gradient_queries,
                out.display()
            );
        }
        Command::SweepW2 { common, parallel } => {
            let (config, out) = common.resolve()?;
            for row in commands::cmd_sweep_w2(&config, &out, parallel)? {
                println!(
                    "R={:<6} {:<5} W2={:.4} queries/chain={}",
                    row.radius, row.method, row.w2, row.queries
                );
            }
        }
        Command::Check(args) => {
            let (config, out) = args.resolve()?;
            commands::cmd_check(&config, &out)?;
        }
        Command::ScoreMse(args) => {
            let (config, out) = args.resolve()?;
            for row in commands::cmd_score_mse(&config, &out)? {
                println!(
                    "n={:<7} {:<20} mse={:.4e} ± {:.1e}",
                    row.n, row.estimator, row.mse, row.stderr
                );
            }
        }
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            ExitCode::from(u8::try_from(code).unwrap_or(EXIT_OTHER as u8))
        }
    }
}
