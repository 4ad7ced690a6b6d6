//! Feedforward MLPs: specification, parameter container, initialization,
//! and the cache-based forward/backward pair.

use super::NnError;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Relu,
}

/// Architecture of one MLP: hidden widths plus the activation applied
/// between layers (the final layer is linear).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, activation: Activation) -> Self {
        assert!(input_dim >= 1 && output_dim >= 1 && hidden.iter().all(|&w| w >= 1));
        Self {
            input_dim,
            output_dim,
            hidden,
            activation,
        }
    }

    /// `(fan_in, fan_out)` of each linear layer, in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }
}

/// Per-layer weight matrices and bias columns. Doubles as a gradient
/// container, since gradients have the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// `(weight, bias)` per layer; weight is `out x in`, bias is `out x 1`.
    pub layers: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

pub type MlpGrads = MlpParams;

impl MlpParams {
    /// Fan-in-scaled uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let layers = spec
            .layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
                let b = DMatrix::zeros(fan_out, 1);
                (w, b)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| (DMatrix::zeros(fan_out, fan_in), DMatrix::zeros(fan_out, 1)))
            .collect();
        Self { layers }
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        let dims = spec.layer_dims();
        self.layers.len() == dims.len()
            && self
                .layers
                .iter()
                .zip(dims)
                .all(|((w, b), (fan_in, fan_out))| {
                    w.nrows() == fan_out && w.ncols() == fan_in && b.nrows() == fan_out && b.ncols() == 1
                })
    }

    /// Flat views over all tensors, weights before biases within a layer.
    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn apply_activation(activation: Activation, z: &DMatrix<f64>) -> DMatrix<f64> {
    match activation {
        Activation::Gelu => z.map(gelu),
        Activation::Relu => z.map(|v| v.max(0.0)),
    }
}

pub(crate) fn activation_grad(
    activation: Activation,
    z: &DMatrix<f64>,
    upstream: &DMatrix<f64>,
) -> DMatrix<f64> {
    match activation {
        Activation::Gelu => z.zip_map(upstream, |zv, g| gelu_prime(zv) * g),
        Activation::Relu => z.zip_map(upstream, |zv, g| if zv > 0.0 { g } else { 0.0 }),
    }
}

/// Cached activations from one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (first entry is the network input).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation output of each layer.
    pre_activations: Vec<DMatrix<f64>>,
}

/// Forward pass over a column batch, returning the output and the cache
/// needed by [`backward`].
pub fn forward(
    spec: &MlpSpec,
    params: &MlpParams,
    input: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, MlpCache), NnError> {
    if input.nrows() != spec.input_dim {
        return Err(NnError::Shape(format!(
            "input has {} rows, spec expects {}",
            input.nrows(),
            spec.input_dim
        )));
    }
    if !params.matches(spec) {
        return Err(NnError::Shape("parameters do not match spec".into()));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("network input".into()));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut x = input.clone();
    for (l, (w, b)) in params.layers.iter().enumerate() {
        let mut z = w * &x;
        for mut col in z.column_iter_mut() {
            col += b.column(0);
        }
        inputs.push(x);
        x = if l + 1 < n_layers {
            apply_activation(spec.activation, &z)
        } else {
            z.clone()
        };
        pre_activations.push(z);
    }
    Ok((
        x,
        MlpCache {
            inputs,
            pre_activations,
        },
    ))
}

/// Forward pass without caching, for inference-only callers.
pub fn infer(spec: &MlpSpec, params: &MlpParams, input: &DMatrix<f64>) -> Result<DMatrix<f64>, NnError> {
    forward(spec, params, input).map(|(out, _)| out)
}

/// Exact reverse-mode gradients for one forward pass. Returns the parameter
/// gradients and the gradient with respect to the network input.
pub fn backward(
    spec: &MlpSpec,
    params: &MlpParams,
    cache: &MlpCache,
    output_grad: &DMatrix<f64>,
) -> Result<(MlpGrads, DMatrix<f64>), NnError> {
    if cache.inputs.len() != params.layers.len() {
        return Err(NnError::MissingCache);
    }
    let n_layers = params.layers.len();
    let mut grads = MlpParams {
        layers: Vec::with_capacity(n_layers),
    };
    let mut upstream = output_grad.clone();
    let mut layer_grads = vec![(DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)); n_layers];
    for l in (0..n_layers).rev() {
        let dz = if l + 1 < n_layers {
            activation_grad(spec.activation, &cache.pre_activations[l], &upstream)
        } else {
            upstream
        };
        let (w, _) = &params.layers[l];
        let dw = &dz * cache.inputs[l].transpose();
        let db = DMatrix::from_column_slice(dz.nrows(), 1, dz.column_sum().as_slice());
        upstream = w.transpose() * &dz;
        layer_grads[l] = (dw, db);
    }
    grads.layers = layer_grads;
    Ok((grads, upstream))
}
