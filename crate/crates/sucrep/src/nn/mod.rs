//! Minimal differentiable-network toolkit: feedforward MLPs with exact
//! reverse-mode gradients, Adam, EMA target copies, stop-gradient, and the
//! prediction losses used by the representation objectives.
//!
//! Batches are stored column-wise (`dim x batch`). Composite losses are
//! built on a small tape ([`Graph`]) whose leaves are parameter matrices;
//! the tape is what makes stop-gradient and target-network discipline
//! checkable rather than implicit.

mod checkpoint;
mod graph;
mod loss;
mod mlp;
mod opt;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use graph::{Graph, Gradients, MlpVars, Var};
pub use loss::{f_ce, f_l2, zero_norm_warning_count};
pub use mlp::{backward, forward, infer, Activation, MlpCache, MlpGrads, MlpParams, MlpSpec};
pub use opt::{adam_step, ema_update, AdamConfig, AdamState, EmaTarget};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("tau must lie in [0, 1], got {0}")]
    Tau(f64),
    #[error("missing forward cache")]
    MissingCache,
}

/// Central finite-difference gradient of `f` at `x`, one coordinate at a
/// time. Test utility backing the gradient-fidelity checks.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest relative deviation between an analytic gradient and its
/// finite-difference estimate, with an absolute floor for near-zero entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
