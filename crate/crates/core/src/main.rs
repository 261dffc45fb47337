use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use focal_lab::expcli::{self, ExperimentConfig, RunKey, RunStatus};
use focal_lab::Result;

#[derive(Parser)]
#[command(
    name = "focal-lab",
    version,
    about = "Focal loss versus shortcut features: corpus, training and report runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML); built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overrides experiment.output_dir
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Focusing parameter; for `sweep` it replaces the gamma grid
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// Challenge-pool samples added to training; for `sweep` it replaces the injection grid
    #[arg(long, global = true)]
    inject: Option<usize>,

    /// Run seed; for `sweep` it replaces the seed list
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Return final-epoch parameters instead of the lowest-validation-loss ones
    #[arg(long, global = true)]
    no_early_stopping: bool,

    #[arg(long, global = true, value_enum)]
    loss: Option<LossArg>,

    /// Parallel runs during `sweep`
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus and its hardness labels
    Generate,
    /// Train and evaluate a single (gamma, inject, seed) triple
    Run,
    /// Run the full grid and write the aggregate tables
    Sweep,
    /// Rebuild the aggregate tables from existing runs
    Report,
    /// Write SVG plots for the loss family and every completed run
    Plot,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ce,
    Focal,
    Dfl,
    Poe,
}

impl LossArg {
    fn short_name(self) -> &'static str {
        match self {
            LossArg::Ce => "ce",
            LossArg::Focal => "focal",
            LossArg::Dfl => "dfl",
            LossArg::Poe => "poe",
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let e = &mut cfg.experiment;
    if let Some(out) = &cli.out {
        e.output_dir = out.clone();
    }
    if let Some(w) = cli.workers {
        e.workers = w;
    }
    if !matches!(cli.command, Command::Run) {
        if let Some(g) = cli.gamma {
            e.gamma_grid = vec![g];
        }
        if let Some(n) = cli.inject {
            e.injection_grid = vec![n];
        }
        if let Some(s) = cli.seed {
            e.seeds = vec![s];
        }
    }
    if cli.no_early_stopping {
        cfg.train.early_stopping = false;
    }
    if let Some(loss) = cli.loss {
        cfg.train.loss = loss.short_name().into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Generate => {
            let dir = expcli::cmd_generate(&cfg)?;
            println!("corpus written to {}", dir.display());
        }
        Command::Run => {
            let key = RunKey {
                gamma: cli.gamma.unwrap_or(0.0),
                n_inject: cli.inject.unwrap_or(0),
                seed: cli.seed.unwrap_or(cfg.experiment.seeds[0]),
            };
            let result = expcli::cmd_run(&cfg, key)?;
            if let RunStatus::Completed(report) = &result.status {
                println!(
                    "{}: test_accuracy={:.4} challenge_accuracy={:.4} -> {}",
                    key.dir_name(),
                    report.test_accuracy,
                    report.challenge.overall,
                    cfg.run_dir(&key).display()
                );
            }
        }
        Command::Sweep | Command::Report => {
            let summary = if matches!(cli.command, Command::Sweep) {
                expcli::cmd_sweep(&cfg)?
            } else {
                expcli::cmd_report(&cfg)?
            };
            println!("{} completed, {} failed", summary.completed, summary.failed);
            for t in summary.tables {
                println!("{}", t.display());
            }
        }
        Command::Plot => {
            for p in expcli::cmd_plot(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::from(2)
        }
    }
}
