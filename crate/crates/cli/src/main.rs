use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use tljd_cli::config::RunConfig;
use tljd_cli::{run_ablate, run_evaluate, run_generate, run_predict, run_train, run_weights};

#[derive(Parser)]
#[command(
    name = "tljd",
    about = "Tabular regressor for city-level FDI prediction from judicial indicators",
    version
)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.csv, schema.csv, metadata.txt).
    Generate,
    /// Train a model and write checkpoint, log, and manifest.
    Train,
    /// Evaluate a checkpoint on a data file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Write per-sample predictions for a data file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Export per-sample expert weights with an FDI-quartile summary.
    Weights {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Train full, wo_moe, and wo_ce with one shared seed and compare.
    Ablate,
}

fn required_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .context("--config <path> is required for this command")?;
    RunConfig::load(path)
}

fn required_out(cli: &Cli) -> Result<PathBuf> {
    cli.out
        .clone()
        .context("--out <dir> is required for this command")
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate => {
            let config = required_config(&cli)?;
            let out = required_out(&cli)?;
            let summary = run_generate(&config, &out, cli.force)?;
            println!(
                "wrote {} rows x {} columns to {}",
                summary.rows,
                summary.csv_columns,
                summary.data_path.display()
            );
            println!("schema: {}", summary.schema_path.display());
            println!("metadata: {}", summary.metadata_path.display());
        }
        Command::Train => {
            let config = required_config(&cli)?;
            let out = required_out(&cli)?;
            let manifest = run_train(&config, &out, cli.force)?;
            println!(
                "best epoch {} | val mae {} | test r2 {} rmse {} mae {}",
                manifest.best_epoch,
                manifest.metrics.val.mae,
                manifest.metrics.test.r2_text(),
                manifest.metrics.test.rmse,
                manifest.metrics.test.mae
            );
            println!("manifest: {}", out.join("manifest.json").display());
        }
        Command::Evaluate {
            checkpoint,
            model,
            data,
            schema,
        } => {
            let metrics = run_evaluate(checkpoint, model.as_deref(), data, schema, "evaluate")?;
            println!(
                "n {} | r2 {} | rmse {} | mae {}",
                metrics.n,
                metrics.r2_text(),
                metrics.rmse,
                metrics.mae
            );
        }
        Command::Predict {
            checkpoint,
            model,
            data,
            schema,
        } => {
            let out = required_out(&cli)?;
            let (path, metrics) =
                run_predict(checkpoint, model.as_deref(), data, schema, &out, cli.force)?;
            println!(
                "wrote {} | n {} | r2 {} | rmse {} | mae {}",
                path.display(),
                metrics.n,
                metrics.r2_text(),
                metrics.rmse,
                metrics.mae
            );
        }
        Command::Weights {
            checkpoint,
            model,
            data,
            schema,
        } => {
            let out = required_out(&cli)?;
            let path = run_weights(checkpoint, model.as_deref(), data, schema, &out, cli.force)?;
            println!("wrote {}", path.display());
        }
        Command::Ablate => {
            let config = required_config(&cli)?;
            let out = required_out(&cli)?;
            let rows = run_ablate(&config, &out, cli.force)?;
            println!("comparison table: {}", out.join("ablation.csv").display());
            for (name, m) in rows {
                println!("{name}\t{}\t{}\t{}", m.r2_text(), m.rmse, m.mae);
            }
        }
    }
    Ok(())
}
