//! Adam with bias correction, and EMA target copies.

use super::mlp::MlpParams;
use super::NnError;
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second-moment accumulators for a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    first: Vec<DMatrix<f64>>,
    second: Vec<DMatrix<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            cfg,
            step: 0,
            first: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over a flat tensor list. Tensors with a
/// `None` gradient are left untouched, moments included.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut DMatrix<f64>],
    grads: &[Option<DMatrix<f64>>],
) -> Result<(), NnError> {
    if params.len() != state.first.len() || grads.len() != params.len() {
        return Err(NnError::Shape(format!(
            "adam has {} slots, got {} params and {} grads",
            state.first.len(),
            params.len(),
            grads.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!("gradient for tensor {i}")));
            }
            if g.shape() != params[i].shape() {
                return Err(NnError::Shape(format!(
                    "tensor {i}: grad {:?} vs param {:?}",
                    g.shape(),
                    params[i].shape()
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c = state.cfg;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (i, grad) in grads.iter().enumerate() {
        let Some(g) = grad else { continue };
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for ((mv, vv), (p, gv)) in m
            .iter_mut()
            .zip(v.iter_mut())
            .zip(params[i].iter_mut().zip(g.iter()))
        {
            *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
            *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(())
}

/// Target-network copy of a set of online parameters.
#[derive(Debug, Clone)]
pub struct EmaTarget {
    pub params: MlpParams,
    pub tau: f64,
}

impl EmaTarget {
    /// Starts as an exact copy of the online parameters.
    pub fn new(online: &MlpParams, tau: f64) -> Result<Self, NnError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(NnError::Tau(tau));
        }
        Ok(Self {
            params: online.clone(),
            tau,
        })
    }
}

/// `target = tau * online + (1 - tau) * target`: `tau = 1` copies the online
/// network, `tau = 0` freezes the target.
pub fn ema_update(target: &mut EmaTarget, online: &MlpParams) -> Result<(), NnError> {
    if !(0.0..=1.0).contains(&target.tau) {
        return Err(NnError::Tau(target.tau));
    }
    if target.params.layers.len() != online.layers.len() {
        return Err(NnError::Shape("target/online layer counts differ".into()));
    }
    let tau = target.tau;
    for ((tw, tb), (ow, ob)) in target.params.layers.iter_mut().zip(&online.layers) {
        if tw.shape() != ow.shape() || tb.shape() != ob.shape() {
            return Err(NnError::Shape("target/online tensor shapes differ".into()));
        }
        tw.zip_apply(ow, |t, o| *t = tau * o + (1.0 - tau) * *t);
        tb.zip_apply(ob, |t, o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec};
    use crate::rngstream::stream;

    #[test]
    fn first_step_moves_by_roughly_lr_sign() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut state = AdamState::new(cfg, &[(1, 1)]);
        let mut p = DMatrix::from_element(1, 1, 0.0);
        let g = DMatrix::from_element(1, 1, 3.0);
        adam_step(&mut state, &mut [&mut p], &[Some(g)]).unwrap();
        // bias-corrected first step: lr * g/|g| up to eps
        assert!((p[(0, 0)] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(cfg, &[(2, 2)]);
        let mut p = DMatrix::from_element(2, 2, 1.5);
        for _ in 0..50 {
            let g = DMatrix::zeros(2, 2);
            adam_step(&mut state, &mut [&mut p], &[Some(g)]).unwrap();
        }
        assert_eq!(p, DMatrix::from_element(2, 2, 1.5));
    }

    #[test]
    fn none_gradient_skips_tensor_entirely() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(cfg, &[(1, 1), (1, 1)]);
        let mut a = DMatrix::from_element(1, 1, 1.0);
        let mut b = DMatrix::from_element(1, 1, 1.0);
        adam_step(
            &mut state,
            &mut [&mut a, &mut b],
            &[Some(DMatrix::from_element(1, 1, 1.0)), None],
        )
        .unwrap();
        assert_ne!(a[(0, 0)], 1.0);
        assert_eq!(b[(0, 0)], 1.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(cfg, &[(1, 1)]);
        let mut p = DMatrix::from_element(1, 1, 0.0);
        let g = DMatrix::from_element(1, 1, f64::NAN);
        assert!(matches!(
            adam_step(&mut state, &mut [&mut p], &[Some(g)]),
            Err(NnError::NonFinite(_))
        ));
    }

    #[test]
    fn deterministic_replay_is_bitwise() {
        let spec = MlpSpec::new(3, vec![4], 2, Activation::Gelu);
        let run = || {
            let mut rng = stream(41, "adam-replay");
            let mut params = MlpParams::init(&spec, &mut rng);
            let shapes: Vec<(usize, usize)> =
                params.tensors().iter().map(|t| t.shape()).collect();
            let mut state = AdamState::new(AdamConfig::default(), &shapes);
            for step in 0..100 {
                let grads: Vec<Option<DMatrix<f64>>> = params
                    .tensors()
                    .iter()
                    .map(|t| {
                        Some(DMatrix::from_fn(t.nrows(), t.ncols(), |i, j| {
                            ((i + 2 * j + step) as f64 * 0.01).sin()
                        }))
                    })
                    .collect();
                adam_step(&mut state, &mut params.tensors_mut(), &grads).unwrap();
            }
            params
        };
        let a = run();
        let b = run();
        for (x, y) in a.tensors().iter().zip(b.tensors().iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn ema_tau_one_copies_online() {
        let spec = MlpSpec::new(2, vec![3], 2, Activation::Relu);
        let mut rng = stream(42, "ema");
        let online = MlpParams::init(&spec, &mut rng);
        let other = MlpParams::init(&spec, &mut rng);
        let mut target = EmaTarget::new(&other, 1.0).unwrap();
        ema_update(&mut target, &online).unwrap();
        assert_eq!(target.params, online);
    }

    #[test]
    fn ema_tau_zero_freezes_target() {
        let spec = MlpSpec::new(2, vec![], 2, Activation::Relu);
        let mut rng = stream(43, "ema");
        let online = MlpParams::init(&spec, &mut rng);
        let frozen = MlpParams::init(&spec, &mut rng);
        let mut target = EmaTarget::new(&frozen, 0.0).unwrap();
        ema_update(&mut target, &online).unwrap();
        assert_eq!(target.params, frozen);
    }

    #[test]
    fn ema_midpoint() {
        let spec = MlpSpec::new(1, vec![], 1, Activation::Relu);
        let zero = MlpParams::zeros_like(&spec);
        let mut online = MlpParams::zeros_like(&spec);
        online.layers[0].0[(0, 0)] = 2.0;
        let mut target = EmaTarget::new(&zero, 0.5).unwrap();
        ema_update(&mut target, &online).unwrap();
        assert_eq!(target.params.layers[0].0[(0, 0)], 1.0);
    }

    #[test]
    fn ema_rejects_bad_tau() {
        let spec = MlpSpec::new(1, vec![], 1, Activation::Relu);
        let p = MlpParams::zeros_like(&spec);
        assert!(matches!(EmaTarget::new(&p, 1.5), Err(NnError::Tau(_))));
    }
}
