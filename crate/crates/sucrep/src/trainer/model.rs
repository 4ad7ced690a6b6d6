//! Trainable state of a GCBC-plus-auxiliary run: encoder ensemble, forward
//! and backward predictors, actor head, and EMA target copies.

use super::config::{GoalEmbed, TrainConfig};
#[cfg(test)]
use super::config::Method;
use super::TrainError;
use crate::grid::N_ACTIONS;
use crate::nn::{
    ema_update, infer, Activation, Checkpoint, EmaTarget, MlpParams, MlpSpec,
};
use crate::rngstream::stream;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

/// Architectures of the four network roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpecs {
    pub encoder: MlpSpec,
    pub forward_predictor: MlpSpec,
    pub backward_predictor: MlpSpec,
    pub actor: MlpSpec,
}

impl ModelSpecs {
    pub fn from_config(cfg: &TrainConfig, feature_dim: usize) -> Self {
        let repr = if cfg.encoder_out == 0 { feature_dim } else { cfg.encoder_out };
        let fwd_in = repr + if cfg.action_conditioned { N_ACTIONS } else { 0 };
        Self {
            encoder: MlpSpec::new(feature_dim, cfg.encoder_hidden.clone(), repr, Activation::Gelu),
            forward_predictor: MlpSpec::new(fwd_in, cfg.encoder_hidden.clone(), repr, Activation::Gelu),
            backward_predictor: MlpSpec::new(repr, cfg.encoder_hidden.clone(), repr, Activation::Gelu),
            actor: MlpSpec::new(2 * repr, cfg.actor_hidden.clone(), N_ACTIONS, Activation::Gelu),
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.encoder.output_dim
    }
}

/// All parameters of one run. Target copies are EMA shadows of the online
/// encoder and forward predictor; they are never optimized directly.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub specs: ModelSpecs,
    pub encoders: Vec<MlpParams>,
    pub forward_predictors: Vec<MlpParams>,
    pub backward_predictors: Vec<MlpParams>,
    pub actor: MlpParams,
    pub target_encoders: Vec<EmaTarget>,
    pub target_forward_predictors: Vec<EmaTarget>,
}

impl ModelParams {
    /// Initializes every network from its own named rng stream, so
    /// structural changes to one network never shift another's draws.
    pub fn init(cfg: &TrainConfig, feature_dim: usize) -> Result<Self, TrainError> {
        cfg.validate()?;
        let specs = ModelSpecs::from_config(cfg, feature_dim);
        let e = cfg.ensemble_size;
        let mlp = |label: String, spec: &MlpSpec| {
            let mut rng = stream(cfg.seed, &label);
            MlpParams::init(spec, &mut rng)
        };
        let encoders: Vec<MlpParams> =
            (0..e).map(|i| mlp(format!("init.encoder{i}"), &specs.encoder)).collect();
        let forward_predictors: Vec<MlpParams> = (0..e)
            .map(|i| mlp(format!("init.forward_predictor{i}"), &specs.forward_predictor))
            .collect();
        let backward_predictors: Vec<MlpParams> = (0..e)
            .map(|i| mlp(format!("init.backward_predictor{i}"), &specs.backward_predictor))
            .collect();
        let actor = mlp("init.actor".into(), &specs.actor);
        let target_encoders = encoders
            .iter()
            .map(|p| EmaTarget::new(p, cfg.tau))
            .collect::<Result<_, _>>()?;
        let target_forward_predictors = forward_predictors
            .iter()
            .map(|p| EmaTarget::new(p, cfg.tau))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            specs,
            encoders,
            forward_predictors,
            backward_predictors,
            actor,
            target_encoders,
            target_forward_predictors,
        })
    }

    pub fn ensemble_size(&self) -> usize {
        self.encoders.len()
    }

    /// Names of the trainable tensors, in optimizer order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut mlp_names = |prefix: String, params: &MlpParams| {
            for l in 0..params.layers.len() {
                names.push(format!("{prefix}.w{l}"));
                names.push(format!("{prefix}.b{l}"));
            }
        };
        for (i, p) in self.encoders.iter().enumerate() {
            mlp_names(format!("encoder{i}"), p);
        }
        for (i, p) in self.forward_predictors.iter().enumerate() {
            mlp_names(format!("forward_predictor{i}"), p);
        }
        for (i, p) in self.backward_predictors.iter().enumerate() {
            mlp_names(format!("backward_predictor{i}"), p);
        }
        mlp_names("actor".into(), &self.actor);
        names
    }

    /// Trainable tensors in the same order as [`ModelParams::tensor_names`].
    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = Vec::new();
        for p in &mut self.encoders {
            out.extend(p.tensors_mut());
        }
        for p in &mut self.forward_predictors {
            out.extend(p.tensors_mut());
        }
        for p in &mut self.backward_predictors {
            out.extend(p.tensors_mut());
        }
        out.extend(self.actor.tensors_mut());
        out
    }

    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        let mut out = Vec::new();
        for p in &self.encoders {
            out.extend(p.tensors());
        }
        for p in &self.forward_predictors {
            out.extend(p.tensors());
        }
        for p in &self.backward_predictors {
            out.extend(p.tensors());
        }
        out.extend(self.actor.tensors());
        out
    }

    /// EMA update of every target copy toward its online network.
    pub fn update_targets(&mut self) -> Result<(), TrainError> {
        for (target, online) in self.target_encoders.iter_mut().zip(&self.encoders) {
            ema_update(target, online)?;
        }
        for (target, online) in self.target_forward_predictors.iter_mut().zip(&self.forward_predictors) {
            ema_update(target, online)?;
        }
        Ok(())
    }

    /// Ensemble-mean encoder embedding of a feature batch.
    pub fn embed_state(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>, TrainError> {
        let mut acc: Option<DMatrix<f64>> = None;
        for enc in &self.encoders {
            let z = infer(&self.specs.encoder, enc, features)?;
            acc = Some(match acc {
                Some(a) => a + z,
                None => z,
            });
        }
        Ok(acc.expect("ensemble is non-empty") / self.ensemble_size() as f64)
    }

    /// Goal-side embedding for the actor: the ensemble-mean encoder output,
    /// or the forward-predictor output when configured (action-free only).
    pub fn embed_goal(&self, features: &DMatrix<f64>, cfg: &TrainConfig) -> Result<DMatrix<f64>, TrainError> {
        let encoded = self.embed_state(features)?;
        match cfg.goal_embed {
            GoalEmbed::Phi => Ok(encoded),
            GoalEmbed::Psi => {
                if cfg.action_conditioned {
                    return Err(TrainError::Config(
                        "goal_embed = psi requires action_conditioned = false".into(),
                    ));
                }
                let mut acc: Option<DMatrix<f64>> = None;
                for (enc, pred) in self.encoders.iter().zip(&self.forward_predictors) {
                    let z = infer(&self.specs.encoder, enc, features)?;
                    let p = infer(&self.specs.forward_predictor, pred, &z)?;
                    acc = Some(match acc {
                        Some(a) => a + p,
                        None => p,
                    });
                }
                Ok(acc.expect("ensemble is non-empty") / self.ensemble_size() as f64)
            }
        }
    }

    /// Actor logits for one state/goal embedding pair.
    pub fn actor_logits(
        &self,
        state_embed: &DVector<f64>,
        goal_embed: &DVector<f64>,
    ) -> Result<DVector<f64>, TrainError> {
        let repr = self.specs.repr_dim();
        let mut input = DMatrix::zeros(2 * repr, 1);
        input.rows_mut(0, repr).copy_from(state_embed);
        input.rows_mut(repr, repr).copy_from(goal_embed);
        let out = infer(&self.specs.actor, &self.actor, &input)?;
        Ok(DVector::from_column_slice(out.column(0).as_slice()))
    }

    /// Serializes config plus every tensor (targets included) into a
    /// checkpoint container.
    pub fn to_checkpoint(&self, cfg: &TrainConfig, feature_dim: usize) -> Checkpoint {
        let mut config: BTreeMap<String, String> = cfg.to_map();
        config.insert("feature_dim".into(), feature_dim.to_string());
        let mut tensors = Vec::new();
        let mut push_mlp = |prefix: String, params: &MlpParams| {
            for (l, (w, b)) in params.layers.iter().enumerate() {
                tensors.push((format!("{prefix}.w{l}"), w.clone()));
                tensors.push((format!("{prefix}.b{l}"), b.clone()));
            }
        };
        for (i, p) in self.encoders.iter().enumerate() {
            push_mlp(format!("encoder{i}"), p);
        }
        for (i, p) in self.forward_predictors.iter().enumerate() {
            push_mlp(format!("forward_predictor{i}"), p);
        }
        for (i, p) in self.backward_predictors.iter().enumerate() {
            push_mlp(format!("backward_predictor{i}"), p);
        }
        push_mlp("actor".into(), &self.actor);
        for (i, t) in self.target_encoders.iter().enumerate() {
            push_mlp(format!("target_encoder{i}"), &t.params);
        }
        for (i, t) in self.target_forward_predictors.iter().enumerate() {
            push_mlp(format!("target_forward_predictor{i}"), &t.params);
        }
        Checkpoint {
            config,
            tensors,
        }
    }

    /// Rebuilds a model from a checkpoint, validating shapes against the
    /// embedded config.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, TrainConfig, usize), TrainError> {
        let cfg_text: String = ck
            .config
            .iter()
            .filter(|(k, _)| k.as_str() != "feature_dim")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let cfg = TrainConfig::from_text(&cfg_text)?;
        let feature_dim: usize = ck
            .config
            .get("feature_dim")
            .ok_or_else(|| TrainError::Config("checkpoint lacks feature_dim".into()))?
            .parse()
            .map_err(|_| TrainError::Config("bad feature_dim in checkpoint".into()))?;
        let mut model = Self::init(&cfg, feature_dim)?;
        let lookup: BTreeMap<&str, &DMatrix<f64>> =
            ck.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let load_mlp = |prefix: String, params: &mut MlpParams| -> Result<(), TrainError> {
            for (l, (w, b)) in params.layers.iter_mut().enumerate() {
                for (name, slot) in [(format!("{prefix}.w{l}"), w), (format!("{prefix}.b{l}"), b)] {
                    let tensor = lookup
                        .get(name.as_str())
                        .ok_or_else(|| TrainError::Artifact(format!("checkpoint missing tensor {name}")))?;
                    if tensor.shape() != slot.shape() {
                        return Err(TrainError::Artifact(format!(
                            "tensor {name} has shape {:?}, model expects {:?}",
                            tensor.shape(),
                            slot.shape()
                        )));
                    }
                    slot.copy_from(*tensor);
                }
            }
            Ok(())
        };
        for i in 0..model.encoders.len() {
            load_mlp(format!("encoder{i}"), &mut model.encoders[i])?;
        }
        for i in 0..model.forward_predictors.len() {
            load_mlp(format!("forward_predictor{i}"), &mut model.forward_predictors[i])?;
        }
        for i in 0..model.backward_predictors.len() {
            load_mlp(format!("backward_predictor{i}"), &mut model.backward_predictors[i])?;
        }
        load_mlp("actor".into(), &mut model.actor)?;
        for i in 0..model.target_encoders.len() {
            load_mlp(format!("target_encoder{i}"), &mut model.target_encoders[i].params)?;
        }
        for i in 0..model.target_forward_predictors.len() {
            load_mlp(
                format!("target_forward_predictor{i}"),
                &mut model.target_forward_predictors[i].params,
            )?;
        }
        Ok((model, cfg, feature_dim))
    }
}

/// Goal pathway selector used at evaluation time; mirrors the policy-input
/// convention: action-conditioned training feeds the actor the encoded goal,
/// action-free variants may feed the predictor output instead.
pub fn policy_goal_input(
    model: &ModelParams,
    goal_features: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<DMatrix<f64>, TrainError> {
    if cfg.action_conditioned {
        model.embed_state(goal_features)
    } else {
        model.embed_goal(goal_features, cfg)
    }
}
