//! The training loop: Adam over BC + alpha * auxiliary, EMA target updates,
//! metrics stream. Deterministic given (dataset bytes, config): every
//! stochastic component draws from its own named stream.

use super::batch::{sample_batch, SampleSource};
use super::config::{Method, TrainConfig};
use super::losses::build_step;
use super::model::ModelParams;
use super::TrainError;
use crate::grid::{Dataset, Featurizer};
use crate::nn::{adam_step, AdamConfig, AdamState};
use crate::rngstream::stream;
use rand::seq::SliceRandom;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub bc_loss: f64,
    pub aux_loss: f64,
    pub total_loss: f64,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

/// CSV with the canonical column set. `wall_ms` is wall-clock and is the
/// one column excluded from bitwise reproducibility comparisons.
pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("step,bc_loss,aux_loss,total_loss,grad_norm,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
            r.step, r.bc_loss, r.aux_loss, r.total_loss, r.grad_norm, r.wall_ms
        ));
    }
    out
}

/// Strips the wall-clock column; this is the deterministic view compared in
/// reproducibility checks.
pub fn metrics_csv_without_wall(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rfind(',') {
            Some(pos) => &line[..pos],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct TrainOutcome {
    pub model: ModelParams,
    pub metrics: Vec<MetricsRow>,
    pub feature_dim: usize,
}

/// Trains a goal-conditioned policy on the dataset per the configuration.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let maze = dataset.maze()?;
    let featurizer = Featurizer::new(&maze, cfg.features);
    let source = SampleSource::new(dataset, &maze, featurizer)?;
    let feature_dim = source.feature_dim();

    let mut model = ModelParams::init(cfg, feature_dim)?;
    let shapes: Vec<(usize, usize)> = model.tensors().iter().map(|t| t.shape()).collect();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &shapes);

    let mut batch_rng = stream(cfg.seed, "batch");
    let mut fb_rng = stream(cfg.seed, "loss.fb");
    // byol draws its targets one step ahead regardless of the discount
    let sample_gamma = if cfg.method == Method::Byol { 0.0 } else { cfg.gamma };
    let use_aux = cfg.alpha > 0.0 && cfg.method != Method::None;

    let started = Instant::now();
    let mut metrics = Vec::new();
    for step in 1..=cfg.steps as u64 {
        let batch = sample_batch(&source, sample_gamma, cfg.batch_size, &mut batch_rng)?;
        let shuffle: Option<Vec<usize>> = if use_aux && cfg.method == Method::Fb {
            let mut perm: Vec<usize> = (0..cfg.batch_size).collect();
            perm.shuffle(&mut fb_rng);
            Some(perm)
        } else {
            None
        };
        let graph = build_step(&model, cfg, &batch, shuffle.as_deref())?;
        let total = graph.total_value();
        if !total.is_finite() {
            return Err(TrainError::Numeric { step });
        }
        let bc = graph.bc_value();
        let aux = graph.aux_value();
        let grads = graph.backward();
        let grad_norm = grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        adam_step(&mut adam, &mut model.tensors_mut(), &grads)
            .map_err(|_| TrainError::Numeric { step })?;
        model.update_targets()?;

        if step == 1 || step % cfg.record_every as u64 == 0 || step == cfg.steps as u64 {
            metrics.push(MetricsRow {
                step,
                bc_loss: bc,
                aux_loss: aux,
                total_loss: total,
                grad_norm,
                wall_ms: started.elapsed().as_millis() as u64,
            });
        }
    }
    Ok(TrainOutcome {
        model,
        metrics,
        feature_dim,
    })
}
