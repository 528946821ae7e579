use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use flowcast_cli::{
    cmd_compare, cmd_evaluate, cmd_gen_data, cmd_sample, cmd_train, exit_code, load_config,
    samples_path, RunConfig, SampleMode,
};

#[derive(Parser)]
#[command(
    name = "flowcast",
    about = "Train a GRU-conditioned normalizing flow on keypoint trajectories and compare plain \
             vs MCMC-refined sampling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply for anything unset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; substream seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override a config key, e.g. --set data.modes=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Evaluation horizon as M,N (input frames, forecast frames).
    #[arg(long, value_parser = parse_horizon)]
    horizon: Option<[usize; 2]>,
}

fn parse_horizon(raw: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 2 {
        return Err("expected M,N".into());
    }
    let m = parts[0].trim().parse().map_err(|_| "bad M")?;
    let n = parts[1].trim().parse().map_err(|_| "bad N")?;
    Ok([m, n])
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Plain,
    Refined,
}

impl From<ModeArg> for SampleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plain => SampleMode::Plain,
            ModeArg::Refined => SampleMode::Refined,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic forked-trajectory dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the model on the generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Sample future trajectories for every test window.
    Sample {
        #[command(flatten)]
        common: Common,
        /// plain (inverse flow) or refined (MH-interleaved).
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Checkpoint path; defaults to <out_dir>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score plain vs refined sample files against the ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Plain sample file; defaults to <out_dir>/samples_plain.jsonl.
        #[arg(long)]
        plain: Option<PathBuf>,
        /// Refined sample file; defaults to <out_dir>/samples_refined.jsonl.
        #[arg(long)]
        refined: Option<PathBuf>,
    },
    /// Run the whole benchmark: gen-data, train, sample both modes, evaluate.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common) -> flowcast::Result<RunConfig> {
    load_config(
        common.config.as_deref(),
        &common.sets,
        common.seed,
        common.out_dir.clone(),
        common.horizon,
    )
}

fn run(cli: Cli) -> flowcast::Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = resolve(&common)?;
            let split = cmd_gen_data(&cfg)?;
            println!(
                "wrote {} train / {} val / {} test sequences to {}",
                split.train.len(),
                split.val.len(),
                split.test.len(),
                cfg.out_dir.join("data").display()
            );
        }
        Command::Train { common } => {
            let cfg = resolve(&common)?;
            let run = cmd_train(&cfg)?;
            let first = run.curve.first().map(|s| s.val_nll).unwrap_or(f64::NAN);
            let last = run.curve.last().map(|s| s.val_nll).unwrap_or(f64::NAN);
            println!(
                "trained {} epochs: val NLL {:.4} -> {:.4}; checkpoint at {}",
                run.curve.len().saturating_sub(1),
                first,
                last,
                cfg.out_dir.join("checkpoint.bin").display()
            );
        }
        Command::Sample { common, mode, checkpoint } => {
            let cfg = resolve(&common)?;
            let mode: SampleMode = mode.into();
            let sets = cmd_sample(&cfg, checkpoint.as_deref(), mode)?;
            println!(
                "sampled {} windows x {} trajectories ({}) -> {}",
                sets.len(),
                cfg.eval.samples,
                mode.tag(),
                samples_path(&cfg, mode).display()
            );
        }
        Command::Evaluate { common, plain, refined } => {
            let cfg = resolve(&common)?;
            let plain = plain.unwrap_or_else(|| samples_path(&cfg, SampleMode::Plain));
            let refined = refined.unwrap_or_else(|| samples_path(&cfg, SampleMode::Refined));
            let summary = cmd_evaluate(&cfg, &plain, &refined)?;
            print_summary(&summary);
        }
        Command::Compare { common } => {
            let cfg = resolve(&common)?;
            let summary = cmd_compare(&cfg)?;
            print_summary(&summary);
        }
    }
    Ok(())
}

fn print_summary(summary: &flowcast_cli::EvalSummary) {
    println!(
        "horizon {}-{} over {} windows (D={}, C={})",
        summary.horizon[0],
        summary.horizon[1],
        summary.windows,
        summary.samples_per_window,
        summary.keep
    );
    println!(
        "  energy distance: plain {:.4}  refined {:.4}  ({:+.2}%)",
        summary.plain.mean_energy_distance,
        summary.refined.mean_energy_distance,
        summary.improvement.energy_distance_pct
    );
    println!(
        "  APD-to-MAE ratio: plain {:.4}  refined {:.4}  ({:+.2}%)",
        summary.plain.mean_ratio, summary.refined.mean_ratio, summary.improvement.apd_mae_ratio_pct
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
