//! Goal-conditioned behavioral cloning with auxiliary representation
//! objectives: configuration, model state, batch sampling, loss graphs, and
//! the training loop.

mod batch;
mod config;
mod losses;
mod model;
mod run;

pub use batch::{sample_batch, BatchSample, SampleSource};
pub use config::{GoalEmbed, LossF, Method, TrainConfig};
pub use losses::{bc_loss, build_step, byol_gamma_aux, fb_aux, tra_aux, LossAndGrads, StepGraph};
pub use model::{policy_goal_input, ModelParams, ModelSpecs};
pub use run::{metrics_csv_without_wall, metrics_to_csv, train, MetricsRow, TrainOutcome};

use crate::grid::GridError;
use crate::mdp::MdpError;
use crate::nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("artifact mismatch: {0}")]
    Artifact(String),
    #[error("non-finite loss at step {step}")]
    Numeric { step: u64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_stitch_dataset, parse_maze, Dataset, Featurizer, Maze};
    use crate::nn::{central_difference, max_relative_error};
    use crate::rngstream::stream;
    use nalgebra::DMatrix;

    fn small_world() -> (Maze, Dataset) {
        let maze = parse_maze("......\n......").unwrap();
        let mut rng = stream(700, "trainer-test");
        let ds = generate_stitch_dataset(&maze, 3, 80, 700, &mut rng).unwrap();
        (maze, ds)
    }

    fn small_cfg(method: Method) -> TrainConfig {
        let mut cfg = TrainConfig::for_method(method);
        cfg.encoder_hidden = vec![8];
        cfg.encoder_out = 4;
        cfg.actor_hidden = vec![8];
        cfg.batch_size = 6;
        cfg.steps = 5;
        cfg.record_every = 1;
        cfg.seed = 17;
        cfg
    }

    fn small_batch(maze: &Maze, ds: &Dataset, cfg: &TrainConfig, label: &str) -> BatchSample {
        let f = Featurizer::new(maze, cfg.features);
        let source = SampleSource::new(ds, maze, f).unwrap();
        let mut rng = stream(41, label);
        sample_batch(&source, cfg.gamma, cfg.batch_size, &mut rng).unwrap()
    }

    fn with_flat_params<T>(model: &ModelParams, f: impl Fn(&ModelParams) -> T, flat: &[f64]) -> T {
        let mut m = model.clone();
        let mut k = 0;
        for tensor in m.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        f(&m)
    }

    fn flat_params(model: &ModelParams) -> Vec<f64> {
        model.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    fn flat_grads(model: &ModelParams, grads: &[Option<DMatrix<f64>>]) -> Vec<f64> {
        model
            .tensors()
            .iter()
            .zip(grads)
            .flat_map(|(t, g)| match g {
                Some(g) => g.iter().copied().collect::<Vec<_>>(),
                None => vec![0.0; t.nrows() * t.ncols()],
            })
            .collect()
    }

    #[test]
    fn bc_loss_uniform_actor_is_log_actions() {
        let (maze, ds) = small_world();
        let mut cfg = small_cfg(Method::None);
        cfg.alpha = 0.0;
        let mut model = ModelParams::init(&cfg, 12).unwrap();
        // zero actor head -> uniform logits over the 5 actions
        for (w, b) in model.actor.layers.iter_mut() {
            w.fill(0.0);
            b.fill(0.0);
        }
        let batch = small_batch(&maze, &ds, &cfg, "bc-uniform");
        let (loss, _) = bc_loss(&model, &cfg, &batch).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bc_loss_matches_scalar_enumeration() {
        let (maze, ds) = small_world();
        let cfg = small_cfg(Method::None);
        let model = ModelParams::init(&cfg, 12).unwrap();
        let batch = small_batch(&maze, &ds, &cfg, "bc-enum");
        let (loss, _) = bc_loss(&model, &cfg, &batch).unwrap();

        // oracle: recompute sample by sample with straight-line math
        let mut total = 0.0;
        for b in 0..batch.actions.len() {
            let feats = DMatrix::from_column_slice(12, 1, batch.states.column(b).as_slice());
            let goal_feats = DMatrix::from_column_slice(12, 1, batch.goals.column(b).as_slice());
            let z = model.embed_state(&feats).unwrap();
            let zg = model.embed_state(&goal_feats).unwrap();
            let logits = model
                .actor_logits(
                    &nalgebra::DVector::from_column_slice(z.column(0).as_slice()),
                    &nalgebra::DVector::from_column_slice(zg.column(0).as_slice()),
                )
                .unwrap();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total -= logits[batch.actions[b]] - lse;
        }
        assert!((loss - total / batch.actions.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn byol_aux_zero_when_prediction_equals_target() {
        let (maze, ds) = small_world();
        let mut cfg = small_cfg(Method::ByolGamma);
        cfg.loss_f = LossF::L2;
        cfg.action_conditioned = false;
        cfg.bidirectional = false;
        cfg.ensemble_size = 1;
        let mut model = ModelParams::init(&cfg, 12).unwrap();
        // constant encoder, predictor reproducing the constant exactly
        for (w, b) in model.encoders[0].layers.iter_mut() {
            w.fill(0.0);
            b.fill(0.1);
        }
        model.target_encoders[0].params = model.encoders[0].clone();
        for (w, b) in model.forward_predictors[0].layers.iter_mut() {
            w.fill(0.0);
            b.fill(0.0);
        }
        let last = model.forward_predictors[0].layers.len() - 1;
        model.forward_predictors[0].layers[last].1.fill(0.1);
        let batch = small_batch(&maze, &ds, &cfg, "aux-zero");
        let (loss, _) = byol_gamma_aux(&model, &cfg, &batch).unwrap();
        assert!(loss < 1e-24, "loss {loss}");
    }

    #[test]
    fn byol_gamma_at_zero_discount_matches_base_byol_bitwise() {
        let (maze, ds) = small_world();
        let mut cfg_g = small_cfg(Method::ByolGamma);
        cfg_g.gamma = 0.0;
        cfg_g.action_conditioned = false;
        cfg_g.bidirectional = false;
        let mut cfg_b = cfg_g.clone();
        cfg_b.method = Method::Byol;

        let model = ModelParams::init(&cfg_g, 12).unwrap();
        // identical batches: gamma 0 forces k = 1 through the same draws
        let batch_g = small_batch(&maze, &ds, &cfg_g, "reduction");
        let batch_b = small_batch(&maze, &ds, &cfg_b, "reduction");
        assert_eq!(batch_g.goals, batch_b.goals);

        for loss_f in [LossF::Ce, LossF::L2] {
            let mut a = cfg_g.clone();
            a.loss_f = loss_f;
            let mut b = cfg_b.clone();
            b.loss_f = loss_f;
            let (la, _) = byol_gamma_aux(&model, &a, &batch_g).unwrap();
            let (lb, _) = byol_gamma_aux(&model, &b, &batch_b).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
        }
    }

    #[test]
    fn tra_equal_reps_hit_log_batch() {
        let (maze, ds) = small_world();
        let mut cfg = small_cfg(Method::Tra);
        cfg.ensemble_size = 1;
        let mut model = ModelParams::init(&cfg, 12).unwrap();
        // collapse both streams to constants -> all logits equal
        for (w, b) in model.encoders[0].layers.iter_mut() {
            w.fill(0.0);
            b.fill(0.2);
        }
        for (w, b) in model.forward_predictors[0].layers.iter_mut() {
            w.fill(0.0);
            b.fill(0.2);
        }
        let batch = small_batch(&maze, &ds, &cfg, "tra-logn");
        let (loss, _) = tra_aux(&model, &cfg, &batch).unwrap();
        let n = batch.actions.len() as f64;
        let d = model.specs.repr_dim() as f64;
        let reg = 1e-6 * (2.0 * 0.2 * 0.2 * d) / d;
        assert!((loss - (n.ln() + reg)).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn fb_gamma_zero_has_no_bootstrap_contribution() {
        let (maze, ds) = small_world();
        let mut cfg = small_cfg(Method::Fb);
        cfg.gamma = 0.0;
        let model = ModelParams::init(&cfg, 12).unwrap();
        let batch = small_batch(&maze, &ds, &cfg, "fb-zero");
        let shuffle: Vec<usize> = (0..cfg.batch_size).rev().collect();
        let (loss, _) = fb_aux(&model, &cfg, &batch, &shuffle).unwrap();

        // oracle: with gamma 0 the loss is mean(score^2) - 2 mean(attract)
        let mut expected = 0.0;
        for i in 0..model.ensemble_size() {
            let z = crate::nn::infer(&model.specs.encoder, &model.encoders[i], &batch.states).unwrap();
            let zin = {
                let mut m = DMatrix::zeros(z.nrows() + 5, z.ncols());
                m.rows_mut(0, z.nrows()).copy_from(&z);
                m.rows_mut(z.nrows(), 5).copy_from(&batch.action_onehot);
                m
            };
            let psi =
                crate::nn::infer(&model.specs.forward_predictor, &model.forward_predictors[i], &zin)
                    .unwrap();
            let znext =
                crate::nn::infer(&model.specs.encoder, &model.encoders[i], &batch.next_states).unwrap();
            let nb = batch.actions.len();
            let mut bellman = 0.0;
            let mut attract = 0.0;
            for b in 0..nb {
                let score = psi.column(b).dot(&z.column(shuffle[b]));
                bellman += score * score;
                attract += psi.column(b).dot(&znext.column(b));
            }
            expected += bellman / nb as f64 - 2.0 * attract / nb as f64;
        }
        expected /= model.ensemble_size() as f64;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_fidelity_for_every_loss() {
        let (maze, ds) = small_world();
        for (name, cfg) in [
            ("bc", {
                let mut c = small_cfg(Method::None);
                c.alpha = 0.0;
                c
            }),
            ("byol_gamma_ce", small_cfg(Method::ByolGamma)),
            ("byol_gamma_l2", {
                let mut c = small_cfg(Method::ByolGamma);
                c.loss_f = LossF::L2;
                c
            }),
            ("byol_base", small_cfg(Method::Byol)),
            ("tra", small_cfg(Method::Tra)),
            ("fb", small_cfg(Method::Fb)),
        ] {
            let model = ModelParams::init(&cfg, 12).unwrap();
            let batch = small_batch(&maze, &ds, &cfg, name);
            let shuffle: Vec<usize> = (0..cfg.batch_size).rev().collect();
            let value_of = |m: &ModelParams| -> f64 {
                match cfg.method {
                    Method::None => bc_loss(m, &cfg, &batch).unwrap().0,
                    Method::Byol | Method::ByolGamma => byol_gamma_aux(m, &cfg, &batch).unwrap().0,
                    Method::Tra => tra_aux(m, &cfg, &batch).unwrap().0,
                    Method::Fb => fb_aux(m, &cfg, &batch, &shuffle).unwrap().0,
                }
            };
            let grads = match cfg.method {
                Method::None => bc_loss(&model, &cfg, &batch).unwrap().1,
                Method::Byol | Method::ByolGamma => byol_gamma_aux(&model, &cfg, &batch).unwrap().1,
                Method::Tra => tra_aux(&model, &cfg, &batch).unwrap().1,
                Method::Fb => fb_aux(&model, &cfg, &batch, &shuffle).unwrap().1,
            };
            let analytic = flat_grads(&model, &grads);
            let flat = flat_params(&model);
            let numeric =
                central_difference(|xs| with_flat_params(&model, &value_of, xs), &flat, 1e-5);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= 1e-4, "{name}: max relative error {err}");
        }
    }

    #[test]
    fn target_networks_receive_zero_gradient() {
        let (maze, ds) = small_world();
        for method in [Method::ByolGamma, Method::Fb] {
            let cfg = small_cfg(method);
            let model = ModelParams::init(&cfg, 12).unwrap();
            let batch = small_batch(&maze, &ds, &cfg, "probe");
            let shuffle: Vec<usize> = (0..cfg.batch_size).collect();
            let step = build_step(&model, &cfg, &batch, Some(&shuffle)).unwrap();
            let grads = step.graph.backward(step.total);
            for vars in step
                .reg
                .target_encoders
                .iter()
                .chain(step.reg.target_forward_predictors.iter())
            {
                for &(w, b) in &vars.layers {
                    assert!(grads.get(w).is_none());
                    assert!(grads.get(b).is_none());
                }
            }
        }
    }

    #[test]
    fn ensemble_members_train_independently_on_aux() {
        let (maze, ds) = small_world();
        let cfg = small_cfg(Method::ByolGamma);
        let model = ModelParams::init(&cfg, 12).unwrap();
        let batch = small_batch(&maze, &ds, &cfg, "independence");
        let (_, grads) = byol_gamma_aux(&model, &cfg, &batch).unwrap();
        // perturbing member 1 must leave member 0's aux gradients unchanged
        let mut other = model.clone();
        for (w, _) in other.encoders[1].layers.iter_mut() {
            w.add_scalar_mut(0.25);
        }
        for (w, _) in other.forward_predictors[1].layers.iter_mut() {
            w.add_scalar_mut(0.25);
        }
        other.target_encoders[1].params = other.encoders[1].clone();
        let (_, grads_b) = byol_gamma_aux(&other, &cfg, &batch).unwrap();
        let names = model.tensor_names();
        for (i, name) in names.iter().enumerate() {
            if name.starts_with("encoder0") || name.starts_with("forward_predictor0") {
                match (&grads[i], &grads_b[i]) {
                    (Some(a), Some(b)) => assert_eq!(a, b, "{name} gradient changed"),
                    (None, None) => {}
                    _ => panic!("{name} gradient presence changed"),
                }
            }
        }
    }

    #[test]
    fn alpha_zero_training_is_bitwise_method_free() {
        let (_, ds) = small_world();
        let mut with_aux = small_cfg(Method::ByolGamma);
        with_aux.alpha = 0.0;
        with_aux.steps = 8;
        let mut without = with_aux.clone();
        without.method = Method::None;

        let a = train(&ds, &with_aux).unwrap();
        let b = train(&ds, &without).unwrap();
        assert_eq!(a.model.actor, b.model.actor);
        for (x, y) in a.model.encoders.iter().zip(b.model.encoders.iter()) {
            assert_eq!(x, y);
        }
        for (ra, rb) in a.metrics.iter().zip(b.metrics.iter()) {
            assert_eq!(ra.bc_loss.to_bits(), rb.bc_loss.to_bits());
        }
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let (_, ds) = small_world();
        let mut cfg = small_cfg(Method::Fb);
        cfg.steps = 6;
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        for (x, y) in a.model.tensors().iter().zip(b.model.tensors().iter()) {
            assert_eq!(x, y);
        }
        let csv_a = metrics_csv_without_wall(&metrics_to_csv(&a.metrics));
        let csv_b = metrics_csv_without_wall(&metrics_to_csv(&b.metrics));
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn smoke_run_reduces_bc_loss() {
        let (_, ds) = small_world();
        let mut cfg = small_cfg(Method::ByolGamma);
        cfg.steps = 400;
        cfg.batch_size = 32;
        cfg.lr = 3e-3;
        cfg.record_every = 50;
        let outcome = train(&ds, &cfg).unwrap();
        let first = outcome.metrics.first().unwrap().bc_loss;
        let last = outcome.metrics.last().unwrap().bc_loss;
        assert!(
            last < first * 0.5,
            "bc loss went {first} -> {last}, expected at least a halving"
        );
    }
}
