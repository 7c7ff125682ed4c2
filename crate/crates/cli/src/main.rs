use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use cfnoma::harness::{self, ExperimentConfig, Method, Summary};
use cfnoma::Result;

#[derive(Parser)]
#[command(
    name = "cfnoma",
    version,
    about = "Multi-cell cluster-free NOMA scheduling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Method for train/evaluate; for compare/sweep, repeat to pick the
    /// methods to run.
    #[arg(long, global = true)]
    method: Vec<Method>,
    /// `key=value` with a dotted key into the config, e.g. `net.snr_db=15`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the train/validation/test sets into `<out>/data`.
    Generate,
    /// Train a GNN, save `<out>/checkpoint.json` and evaluate it.
    Train,
    /// Evaluate a checkpoint or run an optimization method on the test set.
    Evaluate,
    /// Run every configured method on the same data.
    Compare,
    /// Repeat `compare` for every data-channel correlation in `sweep_corr`.
    Sweep,
    /// Write `<out>/plotdata/*.tsv` from `<out>/summary.json`.
    ExportPlots,
    /// Apply a checkpoint to the configured network and compare with a
    /// retrained model.
    Generalize {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn config(c: &Common, command: &Command) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &c.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if !c.method.is_empty() {
        match command {
            Command::Compare | Command::Sweep => cfg.methods = c.method.clone(),
            _ => cfg.method = c.method[0],
        }
    }
    Ok(cfg)
}

fn finish(summary: &Summary, dir: &Path) -> Result<()> {
    harness::write_outputs(summary, dir)?;
    print!("{}", harness::summary_csv(summary));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common, &cli.command)?;
    let out = cfg.out_dir.clone();
    if !matches!(cli.command, Command::ExportPlots) {
        fs::create_dir_all(&out)?;
        cfg.save(&out.join("config.json"))?;
    }
    match cli.command {
        Command::Generate => {
            cfg.validate_method(cfg.method)?;
            for p in harness::generate(&cfg, &out.join("data"))? {
                println!("{}", p.display());
            }
        }
        Command::Train => {
            let (model, summary) = harness::train(&cfg)?;
            let ck = out.join("checkpoint.json");
            model.save(&ck)?;
            model.log.write_csv(&out.join("train_log.csv"))?;
            model.log.write_json(&out.join("train_log.json"))?;
            info!("checkpoint written to {}", ck.display());
            finish(&summary, &out)?;
        }
        Command::Evaluate => finish(&harness::evaluate(&cfg)?, &out)?,
        Command::Compare => finish(&harness::compare(&cfg)?, &out)?,
        Command::Sweep => finish(&harness::sweep(&cfg)?, &out)?,
        Command::ExportPlots => {
            for p in harness::export_plots(&out)? {
                println!("{}", p.display());
            }
        }
        Command::Generalize { checkpoint } => {
            let g = harness::generalization_run(&checkpoint, &cfg)?;
            fs::write(
                out.join("generalization.json"),
                serde_json::to_vec_pretty(&g)?,
            )?;
            println!(
                "generalized {:.4} bps/Hz, retrained {:.4} bps/Hz, ratio {:.4}",
                g.generalized.sum_rate, g.retrained.sum_rate, g.ratio
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
