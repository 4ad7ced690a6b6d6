//! Loss graphs for one training step: behavioral cloning plus the selected
//! auxiliary representation objective. Everything is built on the [`Graph`]
//! tape, so target networks are frozen leaves and every gradient is exact.

use super::batch::BatchSample;
use super::config::{GoalEmbed, LossF, Method, TrainConfig};
use super::model::ModelParams;
use super::TrainError;
use crate::nn::{Gradients, Graph, MlpVars, Var};
use nalgebra::DMatrix;

/// A loss value with per-tensor gradients in [`ModelParams::tensor_names`]
/// order; `None` where no gradient flowed.
pub type LossAndGrads = (f64, Vec<Option<DMatrix<f64>>>);

/// Tape handles for every network of the model.
pub struct RegisteredModel {
    pub encoders: Vec<MlpVars>,
    pub forward_predictors: Vec<MlpVars>,
    pub backward_predictors: Vec<MlpVars>,
    pub actor: MlpVars,
    pub target_encoders: Vec<MlpVars>,
    pub target_forward_predictors: Vec<MlpVars>,
}

impl RegisteredModel {
    /// Handles of the trainable tensors in [`ModelParams::tensor_names`]
    /// order.
    fn trainable_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        let push = |out: &mut Vec<Var>, vars: &MlpVars| {
            for &(w, b) in &vars.layers {
                out.push(w);
                out.push(b);
            }
        };
        for v in &self.encoders {
            push(&mut out, v);
        }
        for v in &self.forward_predictors {
            push(&mut out, v);
        }
        for v in &self.backward_predictors {
            push(&mut out, v);
        }
        push(&mut out, &self.actor);
        out
    }
}

pub fn register_model(g: &mut Graph, model: &ModelParams) -> RegisteredModel {
    RegisteredModel {
        encoders: model.encoders.iter().map(|p| g.register_mlp(p, true)).collect(),
        forward_predictors: model
            .forward_predictors
            .iter()
            .map(|p| g.register_mlp(p, true))
            .collect(),
        backward_predictors: model
            .backward_predictors
            .iter()
            .map(|p| g.register_mlp(p, true))
            .collect(),
        actor: g.register_mlp(&model.actor, true),
        target_encoders: model
            .target_encoders
            .iter()
            .map(|t| g.register_mlp(&t.params, false))
            .collect(),
        target_forward_predictors: model
            .target_forward_predictors
            .iter()
            .map(|t| g.register_mlp(&t.params, false))
            .collect(),
    }
}

/// Frozen input leaves for one batch.
pub struct BatchVars {
    pub states: Var,
    pub goals: Var,
    pub next_states: Var,
    pub action_onehot: Var,
    pub next_action_onehot: Var,
}

pub fn register_batch(g: &mut Graph, batch: &BatchSample) -> BatchVars {
    BatchVars {
        states: g.frozen(batch.states.clone()),
        goals: g.frozen(batch.goals.clone()),
        next_states: g.frozen(batch.next_states.clone()),
        action_onehot: g.frozen(batch.action_onehot.clone()),
        next_action_onehot: g.frozen(batch.next_action_onehot.clone()),
    }
}

fn ensemble_mean(g: &mut Graph, members: &[Var]) -> Var {
    let mut acc = members[0];
    for &m in &members[1..] {
        acc = g.add(acc, m);
    }
    g.scale(acc, 1.0 / members.len() as f64)
}

fn loss_pair(g: &mut Graph, loss_f: LossF, a: Var, b: Var) -> Var {
    match loss_f {
        LossF::Ce => g.softmax_ce_mean(a, b),
        LossF::L2 => g.norm_l2_mean(a, b),
    }
}

/// The full per-step loss graph.
pub struct StepGraph {
    pub graph: Graph,
    pub reg: RegisteredModel,
    pub bc: Var,
    pub aux: Option<Var>,
    pub total: Var,
}

impl StepGraph {
    pub fn bc_value(&self) -> f64 {
        self.graph.scalar(self.bc)
    }

    pub fn aux_value(&self) -> f64 {
        self.aux.map(|v| self.graph.scalar(v)).unwrap_or(0.0)
    }

    pub fn total_value(&self) -> f64 {
        self.graph.scalar(self.total)
    }

    /// Runs the backward pass and returns per-tensor gradients in
    /// [`ModelParams::tensor_names`] order (`None` where no flow).
    pub fn backward(&self) -> Vec<Option<DMatrix<f64>>> {
        let grads: Gradients = self.graph.backward(self.total);
        self.reg
            .trainable_vars()
            .iter()
            .map(|&v| grads.get(v).cloned())
            .collect()
    }
}

/// Builds BC + alpha * auxiliary on one tape. `fb_shuffle` supplies the
/// in-batch negative permutation and is required only for the FB method.
pub fn build_step(
    model: &ModelParams,
    cfg: &TrainConfig,
    batch: &BatchSample,
    fb_shuffle: Option<&[usize]>,
) -> Result<StepGraph, TrainError> {
    let mut g = Graph::new();
    let reg = register_model(&mut g, model);
    let inputs = register_batch(&mut g, batch);
    let specs = &model.specs;

    // online encoder outputs, shared by every loss
    let z_states: Vec<Var> = reg
        .encoders
        .iter()
        .map(|vars| g.apply_mlp(&specs.encoder, vars, inputs.states))
        .collect();
    let z_goals: Vec<Var> = reg
        .encoders
        .iter()
        .map(|vars| g.apply_mlp(&specs.encoder, vars, inputs.goals))
        .collect();

    // behavioral cloning: actor sees the ensemble-mean state embedding and
    // the configured goal pathway; gradients flow through every encoder
    let state_embed = ensemble_mean(&mut g, &z_states);
    let goal_members: Vec<Var> = match (cfg.action_conditioned, cfg.goal_embed) {
        (_, GoalEmbed::Phi) => z_goals.clone(),
        (false, GoalEmbed::Psi) => reg
            .forward_predictors
            .iter()
            .zip(&z_goals)
            .map(|(pred, &zg)| g.apply_mlp(&specs.forward_predictor, pred, zg))
            .collect(),
        (true, GoalEmbed::Psi) => {
            return Err(TrainError::Config(
                "goal_embed = psi requires action_conditioned = false".into(),
            ))
        }
    };
    let goal_embed = ensemble_mean(&mut g, &goal_members);
    let actor_in = g.concat_rows(state_embed, goal_embed);
    let logits = g.apply_mlp(&specs.actor, &reg.actor, actor_in);
    let bc = g.cat_nll_mean(logits, batch.actions.clone());

    let use_aux = cfg.alpha > 0.0 && cfg.method != Method::None;
    let aux = if use_aux {
        Some(build_aux(&mut g, model, cfg, &reg, &inputs, &z_states, &z_goals, fb_shuffle)?)
    } else {
        None
    };

    let total = match aux {
        Some(a) => {
            let scaled = g.scale(a, cfg.alpha);
            g.add(bc, scaled)
        }
        None => bc,
    };
    Ok(StepGraph {
        graph: g,
        reg,
        bc,
        aux,
        total,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_aux(
    g: &mut Graph,
    model: &ModelParams,
    cfg: &TrainConfig,
    reg: &RegisteredModel,
    inputs: &BatchVars,
    z_states: &[Var],
    z_goals: &[Var],
    fb_shuffle: Option<&[usize]>,
) -> Result<Var, TrainError> {
    let specs = &model.specs;
    let ensemble = reg.encoders.len();
    let mut member_losses = Vec::with_capacity(ensemble);
    match cfg.method {
        Method::None => unreachable!("no auxiliary for method none"),
        Method::Byol | Method::ByolGamma => {
            // base byol forces forward-only, action-free prediction
            let forward_only = cfg.method == Method::Byol || !cfg.bidirectional;
            let with_action = cfg.method == Method::ByolGamma && cfg.action_conditioned;
            for i in 0..ensemble {
                let pred_in = if with_action {
                    g.concat_rows(z_states[i], inputs.action_onehot)
                } else {
                    z_states[i]
                };
                let prediction =
                    g.apply_mlp(&specs.forward_predictor, &reg.forward_predictors[i], pred_in);
                let target_goal =
                    g.apply_mlp(&specs.encoder, &reg.target_encoders[i], inputs.goals);
                let mut member = loss_pair(g, cfg.loss_f, prediction, target_goal);
                if !forward_only {
                    // backwards predictor reconstructs the past embedding;
                    // the prediction goes in the log-softmax slot, the
                    // frozen embedding is the target
                    let target_past =
                        g.apply_mlp(&specs.encoder, &reg.target_encoders[i], inputs.states);
                    let back_pred = g.apply_mlp(
                        &specs.backward_predictor,
                        &reg.backward_predictors[i],
                        z_goals[i],
                    );
                    let back = loss_pair(g, cfg.loss_f, back_pred, target_past);
                    member = g.add(member, back);
                }
                member_losses.push(member);
            }
        }
        Method::Tra => {
            const TRA_NORM_WEIGHT: f64 = 1e-6;
            let d = specs.repr_dim() as f64;
            for i in 0..ensemble {
                let pred_in = if cfg.action_conditioned {
                    g.concat_rows(z_states[i], inputs.action_onehot)
                } else {
                    z_states[i]
                };
                let psi_out =
                    g.apply_mlp(&specs.forward_predictor, &reg.forward_predictors[i], pred_in);
                let logits = g.matmul_tn(psi_out, z_goals[i]);
                let nce = g.infonce(logits, true);
                // squared-norm regularizer on both representation streams
                let psi_sq = g.col_dot(psi_out, psi_out);
                let phi_sq = g.col_dot(z_goals[i], z_goals[i]);
                let norms = g.add(psi_sq, phi_sq);
                let mean_norm = g.mean_all(norms);
                let reg_term = g.scale(mean_norm, TRA_NORM_WEIGHT / d);
                member_losses.push(g.add(nce, reg_term));
            }
        }
        Method::Fb => {
            let perm = fb_shuffle
                .ok_or_else(|| TrainError::Config("fb requires a shuffle permutation".into()))?
                .to_vec();
            for i in 0..ensemble {
                let pred_in = if cfg.action_conditioned {
                    g.concat_rows(z_states[i], inputs.action_onehot)
                } else {
                    z_states[i]
                };
                let psi_out =
                    g.apply_mlp(&specs.forward_predictor, &reg.forward_predictors[i], pred_in);
                // negatives: the batch's own states, shuffled
                let phi_rand = g.permute_cols(z_states[i], perm.clone());
                let online_score = g.col_dot(psi_out, phi_rand);

                // bootstrap through the target copies, no gradient
                let target_next =
                    g.apply_mlp(&specs.encoder, &reg.target_encoders[i], inputs.next_states);
                let target_pred_in = if cfg.action_conditioned {
                    g.concat_rows(target_next, inputs.next_action_onehot)
                } else {
                    target_next
                };
                let psi_bar = g.apply_mlp(
                    &specs.forward_predictor,
                    &reg.target_forward_predictors[i],
                    target_pred_in,
                );
                let target_states =
                    g.apply_mlp(&specs.encoder, &reg.target_encoders[i], inputs.states);
                let phi_bar_rand = g.permute_cols(target_states, perm.clone());
                let boot_score = g.col_dot(psi_bar, phi_bar_rand);

                let scaled_boot = g.scale(boot_score, cfg.gamma);
                let residual = g.sub(online_score, scaled_boot);
                let squared = g.elem_mul(residual, residual);
                let bellman = g.mean_all(squared);

                let z_next = g.apply_mlp(&specs.encoder, &reg.encoders[i], inputs.next_states);
                let attract_scores = g.col_dot(psi_out, z_next);
                let attract = g.mean_all(attract_scores);
                let neg_attract = g.scale(attract, -2.0);
                member_losses.push(g.add(bellman, neg_attract));
            }
        }
    }
    Ok(ensemble_mean(g, &member_losses))
}

/// Behavioral-cloning loss and gradients alone (auxiliary disabled).
pub fn bc_loss(
    model: &ModelParams,
    cfg: &TrainConfig,
    batch: &BatchSample,
) -> Result<LossAndGrads, TrainError> {
    let mut cfg_only = cfg.clone();
    cfg_only.alpha = 0.0;
    let step = build_step(model, &cfg_only, batch, None)?;
    Ok((step.bc_value(), step.backward()))
}

fn aux_only(
    model: &ModelParams,
    cfg: &TrainConfig,
    batch: &BatchSample,
    fb_shuffle: Option<&[usize]>,
) -> Result<LossAndGrads, TrainError> {
    let mut g = Graph::new();
    let reg = register_model(&mut g, model);
    let inputs = register_batch(&mut g, batch);
    let z_states: Vec<Var> = reg
        .encoders
        .iter()
        .map(|vars| g.apply_mlp(&model.specs.encoder, vars, inputs.states))
        .collect();
    let z_goals: Vec<Var> = reg
        .encoders
        .iter()
        .map(|vars| g.apply_mlp(&model.specs.encoder, vars, inputs.goals))
        .collect();
    let aux = build_aux(&mut g, model, cfg, &reg, &inputs, &z_states, &z_goals, fb_shuffle)?;
    let value = g.scalar(aux);
    let grads: Gradients = g.backward(aux);
    let out = reg.trainable_vars().iter().map(|&v| grads.get(v).cloned()).collect();
    Ok((value, out))
}

/// Self-predictive auxiliary loss (value + gradients); spans the base and
/// discounted variants via `cfg.method`.
pub fn byol_gamma_aux(
    model: &ModelParams,
    cfg: &TrainConfig,
    batch: &BatchSample,
) -> Result<LossAndGrads, TrainError> {
    if !matches!(cfg.method, Method::Byol | Method::ByolGamma) {
        return Err(TrainError::Config(format!(
            "byol_gamma_aux misconfigured for method {}",
            cfg.method
        )));
    }
    aux_only(model, cfg, batch, None)
}

/// Symmetric InfoNCE auxiliary with the squared-norm regularizer.
pub fn tra_aux(
    model: &ModelParams,
    cfg: &TrainConfig,
    batch: &BatchSample,
) -> Result<LossAndGrads, TrainError> {
    if cfg.method != Method::Tra {
        return Err(TrainError::Config(format!(
            "tra_aux misconfigured for method {}",
            cfg.method
        )));
    }
    if batch.actions.len() < 2 {
        return Err(TrainError::Config("tra requires batch_size >= 2".into()));
    }
    aux_only(model, cfg, batch, None)
}

/// Forward-backward TD auxiliary over in-batch negatives.
pub fn fb_aux(
    model: &ModelParams,
    cfg: &TrainConfig,
    batch: &BatchSample,
    shuffle: &[usize],
) -> Result<LossAndGrads, TrainError> {
    if cfg.method != Method::Fb {
        return Err(TrainError::Config(format!(
            "fb_aux misconfigured for method {}",
            cfg.method
        )));
    }
    if batch.actions.len() < 2 {
        return Err(TrainError::Config("fb requires batch_size >= 2".into()));
    }
    aux_only(model, cfg, batch, Some(shuffle))
}
