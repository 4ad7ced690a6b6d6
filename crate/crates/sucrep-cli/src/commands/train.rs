use crate::error::CliError;
use crate::manifest::{sha256_hex, RunManifest};
use clap::Args;
use std::path::{Path, PathBuf};
use sucrep::grid::Dataset;
use sucrep::nn::save_checkpoint;
use sucrep::trainer::{metrics_to_csv, train, TrainConfig, TrainError};

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset JSONL produced by `gen`
    #[arg(long)]
    pub dataset: PathBuf,
    /// Flat key = value config file; defaults apply to missing keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoint.bin, metrics.csv, manifest.json
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Shared by `train` and `sweep`: one full run into `out_dir`.
pub fn run_training(
    dataset_bytes: &str,
    dataset: &Dataset,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let outcome = train(dataset, cfg).map_err(|e| match e {
        TrainError::Numeric { step } => {
            CliError::Numeric(format!("non-finite loss, aborted at step {step}"))
        }
        other => other.into(),
    })?;
    let checkpoint_path = out_dir.join("checkpoint.bin");
    let metrics_path = out_dir.join("metrics.csv");
    save_checkpoint(&checkpoint_path, &outcome.model.to_checkpoint(cfg, outcome.feature_dim))?;
    std::fs::write(&metrics_path, metrics_to_csv(&outcome.metrics))?;
    let mut manifest = RunManifest::new("train", cfg.seed)
        .with_dataset_hash(sha256_hex(dataset_bytes.as_bytes()))
        .artifact("checkpoint.bin")
        .artifact("metrics.csv");
    for (k, v) in cfg.to_map() {
        manifest = manifest.with(&k, v);
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(())
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let bytes = std::fs::read_to_string(&args.dataset)?;
    let dataset = Dataset::from_jsonl(&bytes)?;
    let cfg = match &args.config {
        Some(path) => TrainConfig::from_text(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    run_training(&bytes, &dataset, &cfg, &args.out_dir)?;
    println!(
        "trained {} for {} steps; artifacts in {}",
        cfg.method,
        cfg.steps,
        args.out_dir.display()
    );
    Ok(())
}
