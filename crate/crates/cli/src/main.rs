use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use synthsurv::workflows::{
    cmd_calibrate, cmd_decompose, cmd_probe, cmd_profile, cmd_regress, cmd_run, cmd_scan,
    cmd_synth_data, ExperimentConfig, RunContext, WorkflowError,
};

#[derive(Parser)]
#[command(name = "synthsurv", version, about = "Synthetic survey experiments on chat models")]
struct Cli {
    /// Experiment config file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Response cache file (JSONL, append-only)
    #[arg(long, global = true)]
    cache: Option<PathBuf>,

    /// Never touch the network: mock backend plus cache replay only
    #[arg(long, global = true)]
    offline: bool,

    /// Output directory for tables and series
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Temperature calibration table against the human benchmark
    Calibrate,
    /// Raw survey runs for every configured horizon
    Run,
    /// Horizon profile with treatment effects and cross-horizon matrix
    Profile,
    /// Naive and Shapley decompositions of the scenario effect
    Decompose,
    /// Marginal sensitivity curves per component group
    Scan,
    /// Demographic regressions, hypothesis verdicts, and similarity
    Regress,
    /// Knowledge probes and the unconditioned trend experiment
    Probe,
    /// Generate a synthetic sample file
    SynthData {
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
        /// Number of respondents
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// RNG seed
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), WorkflowError> {
    if let Command::SynthData { out, n, seed } = &cli.command {
        return cmd_synth_data(out, *n, *seed);
    }
    let config_path = cli
        .config
        .ok_or_else(|| WorkflowError::Config("--config is required for this command".into()))?;
    let config = ExperimentConfig::load(&config_path)?;
    let ctx = RunContext {
        config,
        out_dir: cli.out_dir,
        offline: cli.offline,
        cache_path: cli.cache,
    };
    match cli.command {
        Command::Calibrate => {
            let rows = cmd_calibrate(&ctx)?;
            println!("calibrate: {} temperature rows -> {}", rows.len(), ctx.out_dir.display());
        }
        Command::Run => {
            let outcomes = cmd_run(&ctx)?;
            for (h, o) in &outcomes {
                println!("run: horizon {h}: {} records, {} missing", o.records.len(), o.n_miss());
            }
        }
        Command::Profile => {
            let report = cmd_profile(&ctx)?;
            for row in &report.rows {
                println!(
                    "profile: horizon {}: effect_MN {:.2}",
                    row.horizon, row.effect_mean
                );
            }
        }
        Command::Decompose => {
            let report = cmd_decompose(&ctx)?;
            for (name, tau) in &report.shapley.attributions {
                println!("decompose: {name}: {tau:.3}");
            }
            println!(
                "decompose: baseline {:.3}, total {:.3}",
                report.shapley.baseline, report.shapley.total
            );
        }
        Command::Scan => {
            let reports = cmd_scan(&ctx)?;
            for r in &reports {
                match r.summary {
                    Some(s) => println!(
                        "scan: {}: slope {:.3}, weight {:.3}, ratio {:.2}",
                        r.target, s.slope, s.weight, s.ratio
                    ),
                    None => println!("scan: {}: no slope (too few points in range)", r.target),
                }
            }
        }
        Command::Regress => {
            let report = cmd_regress(&ctx)?;
            println!(
                "regress: {} coefficients, adj R2 {:.3}, n {}",
                report.benchmark.names.len(),
                report.benchmark.r2_adj,
                report.benchmark.n_obs
            );
        }
        Command::Probe => {
            let report = cmd_probe(&ctx)?;
            println!("probe: {} prompts, {} trend points", report.entries.len(), report.trend.len());
        }
        Command::SynthData { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
