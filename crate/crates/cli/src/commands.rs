//! Subcommand implementations, callable as a library.

use crate::config::RunConfig;
use crate::manifest::{write_timing, RunManifest, SplitMetrics, MANIFEST_VERSION};
use anyhow::{bail, Context, Result};
use std::path::{Path, PathBuf};
use std::time::Instant;
use tljd_core::dataset::{load_table, make_split, write_schema, write_table};
use tljd_core::model::{Ablation, TljdModel};
use tljd_core::report::{predictions_for, write_predictions_csv, write_weights_csv};
use tljd_core::train::{evaluate, format_log, train};
use tljd_core::{MetricsReport, ParamStore};

pub struct GenerateSummary {
    pub rows: usize,
    pub csv_columns: usize,
    pub data_path: PathBuf,
    pub schema_path: PathBuf,
    pub metadata_path: PathBuf,
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(
            "{} already exists; pass --force to overwrite",
            path.display()
        );
    }
    Ok(())
}

/// Write data.csv, schema.csv, and metadata.txt for the config's
/// synthetic block.
pub fn run_generate(config: &RunConfig, out: &Path, force: bool) -> Result<GenerateSummary> {
    let synth = config
        .synthetic
        .as_ref()
        .context("config error: generate needs a 'synthetic' block")?;
    std::fs::create_dir_all(out)?;
    let data_path = out.join("data.csv");
    let schema_path = out.join("schema.csv");
    let metadata_path = out.join("metadata.txt");
    for p in [&data_path, &schema_path, &metadata_path] {
        refuse_existing(p, force)?;
    }
    let (table, metadata) = tljd_core::dataset::generate_synthetic(synth)?;
    write_table(&data_path, &table)?;
    write_schema(&schema_path, table.schema())?;
    metadata.write(&metadata_path)?;
    Ok(GenerateSummary {
        rows: table.len(),
        csv_columns: table.k() + 3,
        data_path,
        schema_path,
        metadata_path,
    })
}

/// Train per the config, save the best-validation checkpoint, and write
/// the manifest last. Returns the manifest that was written.
pub fn run_train(config: &RunConfig, out: &Path, force: bool) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let manifest_path = out.join("manifest.json");
    refuse_existing(&manifest_path, force)?;

    let started = Instant::now();
    let table = config.resolve_table()?;
    let split = make_split(&table, config.protocol, config.seed)?;
    let outcome = train(&table, &split, &config.train_config())?;

    let metrics = SplitMetrics {
        train: evaluate(&outcome.model, &outcome.params, &table, &split.train, "train")?,
        val: evaluate(&outcome.model, &outcome.params, &table, &split.val, "val")?,
        test: evaluate(&outcome.model, &outcome.params, &table, &split.test, "test")?,
    };

    let ckpt_path = out.join("checkpoint.bin");
    let model_json = out.join("model.json");
    outcome.model.save(&ckpt_path, &model_json, &outcome.params)?;
    std::fs::write(out.join("train.log"), format_log(&outcome.log))?;

    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        seed: config.seed,
        config: config.clone(),
        checkpoint: "checkpoint.bin".into(),
        model_descriptor: "model.json".into(),
        training_log: "train.log".into(),
        best_epoch: outcome.best_epoch,
        metrics,
    };
    manifest.write(&manifest_path)?;
    write_timing(out, started.elapsed().as_secs_f64())?;
    Ok(manifest)
}

/// Load a checkpoint plus its JSON descriptor (sibling `model.json`
/// unless overridden).
pub fn load_model(ckpt: &Path, model_json: Option<&Path>) -> Result<(TljdModel, ParamStore)> {
    let default_json = ckpt
        .parent()
        .map(|d| d.join("model.json"))
        .unwrap_or_else(|| PathBuf::from("model.json"));
    let json = model_json.map(Path::to_path_buf).unwrap_or(default_json);
    Ok(TljdModel::load(ckpt, &json)?)
}

fn load_checked_table(
    model: &TljdModel,
    data: &Path,
    schema: &Path,
) -> Result<tljd_core::dataset::IndicatorTable> {
    let table = load_table(data, schema)?;
    model.descriptor().check_schema(table.schema())?;
    Ok(table)
}

/// Metrics of a checkpoint over every row of a data file.
pub fn run_evaluate(
    ckpt: &Path,
    model_json: Option<&Path>,
    data: &Path,
    schema: &Path,
    label: &str,
) -> Result<MetricsReport> {
    let (model, params) = load_model(ckpt, model_json)?;
    let table = load_checked_table(&model, data, schema)?;
    let all: Vec<usize> = (0..table.len()).collect();
    Ok(evaluate(&model, &params, &table, &all, label)?)
}

/// Write per-sample predictions and report metrics over the file.
pub fn run_predict(
    ckpt: &Path,
    model_json: Option<&Path>,
    data: &Path,
    schema: &Path,
    out: &Path,
    force: bool,
) -> Result<(PathBuf, MetricsReport)> {
    let (model, params) = load_model(ckpt, model_json)?;
    let table = load_checked_table(&model, data, schema)?;
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("predictions.csv");
    refuse_existing(&csv_path, force)?;
    let all: Vec<usize> = (0..table.len()).collect();
    let preds = predictions_for(&model, &params, &table, &all)?;
    write_predictions_csv(&csv_path, &preds)?;
    let y_true: Vec<f64> = preds.iter().map(|p| p.y_true).collect();
    let y_hat: Vec<f64> = preds.iter().map(|p| p.y_hat).collect();
    let metrics = tljd_core::compute_metrics(&y_true, &y_hat, "predict")?;
    Ok((csv_path, metrics))
}

/// Write per-sample expert weights with the FDI-quartile summary rows.
pub fn run_weights(
    ckpt: &Path,
    model_json: Option<&Path>,
    data: &Path,
    schema: &Path,
    out: &Path,
    force: bool,
) -> Result<PathBuf> {
    let (model, params) = load_model(ckpt, model_json)?;
    let table = load_checked_table(&model, data, schema)?;
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("weights.csv");
    refuse_existing(&csv_path, force)?;
    let all: Vec<usize> = (0..table.len()).collect();
    let preds = predictions_for(&model, &params, &table, &all)?;
    write_weights_csv(&csv_path, &preds)?;
    Ok(csv_path)
}

/// Train the full model and both ablations with one shared seed; write a
/// three-row comparison table.
pub fn run_ablate(config: &RunConfig, out: &Path, force: bool) -> Result<Vec<(String, MetricsReport)>> {
    std::fs::create_dir_all(out)?;
    let table_path = out.join("ablation.csv");
    refuse_existing(&table_path, force)?;

    let mut rows = Vec::new();
    for ablation in [Ablation::Full, Ablation::WoMoe, Ablation::WoCe] {
        let mut variant_config = config.clone();
        variant_config.ablation = ablation;
        let variant_out = out.join(ablation.label());
        let manifest = run_train(&variant_config, &variant_out, force)?;
        println!(
            "{}: test r2 {} rmse {} mae {}",
            ablation.label(),
            manifest.metrics.test.r2_text(),
            manifest.metrics.test.rmse,
            manifest.metrics.test.mae
        );
        rows.push((ablation.label().to_string(), manifest.metrics.test));
    }

    let mut csv = String::from("variant,r2,rmse,mae\n");
    for (name, m) in &rows {
        let r2 = m.r2.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
        csv.push_str(&format!("{name},{r2},{},{}\n", m.rmse, m.mae));
    }
    std::fs::write(&table_path, csv)?;
    Ok(rows)
}
