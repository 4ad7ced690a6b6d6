//! A small reverse-mode tape over `f64` matrices.
//!
//! Nodes hold forward values; `backward` walks the tape once and accumulates
//! gradients into per-node buffers. Leaves registered as frozen (targets,
//! constants) and anything behind [`Graph::stopgrad`] receive no gradient,
//! which is how target-network and stop-gradient discipline is enforced
//! structurally.

use super::loss::{log_softmax, note_zero_norm, softmax, NORM_EPS};
use super::mlp::{activation_grad, apply_activation, MlpParams, MlpSpec};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// A * B
    MatMul(Var, Var),
    /// A^T * B
    MatMulTn(Var, Var),
    /// matrix + bias column, broadcast over columns
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Activation(super::Activation, Var),
    /// vertical stack: rows of `a` above rows of `b`
    ConcatRows(Var, Var),
    /// column shuffle: output column j is input column perm[j]
    PermuteCols(Var, Vec<usize>),
    StopGrad(#[allow(dead_code)] Var),
    ElemMul(Var, Var),
    /// per-column dot products, yielding a 1 x batch row
    ColDot(Var, Var),
    MeanAll(Var),
    SumAll(Var),
    /// mean over columns of the normalized-l2 loss (pred, target)
    NormL2Mean(Var, Var),
    /// mean over columns of softmax cross-entropy (pred, target)
    SoftmaxCeMean(Var, Var),
    /// mean categorical negative log-likelihood of per-column labels
    CatNllMean(Var, Vec<usize>),
    /// diagonal-positive InfoNCE over a square logits matrix
    InfoNce { logits: Var, symmetric: bool },
}

struct Node {
    op: Op,
    value: DMatrix<f64>,
    needs_grad: bool,
}

/// Gradient buffers from one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<DMatrix<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node, if any flowed there.
    pub fn get(&self, var: Var) -> Option<&DMatrix<f64>> {
        self.grads[var.0].as_ref()
    }
}

/// Tape of matrix operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Tape handles for one registered MLP: `(weight, bias)` per layer.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, var: Var) -> &DMatrix<f64> {
        &self.nodes[var.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, var: Var) -> f64 {
        debug_assert_eq!(self.nodes[var.0].value.shape(), (1, 1));
        self.nodes[var.0].value[(0, 0)]
    }

    fn push(&mut self, op: Op, value: DMatrix<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// A trainable leaf; gradients accumulate here.
    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A frozen leaf: constants, targets, labels-as-features.
    pub fn frozen(&mut self, value: DMatrix<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Identity in value, barrier in gradient.
    pub fn stopgrad(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push(Op::StopGrad(a), value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, needs)
    }

    /// `a^T * b`; used for batched inner-product logits.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.transpose() * &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMulTn(a, b), value, needs)
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        let b = &self.nodes[bias.0].value;
        for mut col in value.column_iter_mut() {
            col += b.column(0);
        }
        let needs = self.needs(a) || self.needs(bias);
        self.push(Op::AddBias(a, bias), value, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), value, needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value * c;
        let needs = self.needs(a);
        self.push(Op::Scale(a, c), value, needs)
    }

    pub fn activation(&mut self, kind: super::Activation, a: Var) -> Var {
        let value = apply_activation(kind, &self.nodes[a.0].value);
        let needs = self.needs(a);
        self.push(Op::Activation(kind, a), value, needs)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        debug_assert_eq!(va.ncols(), vb.ncols());
        let mut value = DMatrix::zeros(va.nrows() + vb.nrows(), va.ncols());
        value.rows_mut(0, va.nrows()).copy_from(va);
        value.rows_mut(va.nrows(), vb.nrows()).copy_from(vb);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::ConcatRows(a, b), value, needs)
    }

    pub fn permute_cols(&mut self, a: Var, perm: Vec<usize>) -> Var {
        let v = &self.nodes[a.0].value;
        debug_assert_eq!(v.ncols(), perm.len());
        let mut value = DMatrix::zeros(v.nrows(), v.ncols());
        for (j, &src) in perm.iter().enumerate() {
            value.set_column(j, &v.column(src));
        }
        let needs = self.needs(a);
        self.push(Op::PermuteCols(a, perm), value, needs)
    }

    pub fn elem_mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.component_mul(&self.nodes[b.0].value);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::ElemMul(a, b), value, needs)
    }

    pub fn col_dot(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        debug_assert_eq!(va.shape(), vb.shape());
        let value = DMatrix::from_fn(1, va.ncols(), |_, j| va.column(j).dot(&vb.column(j)));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::ColDot(a, b), value, needs)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let value = DMatrix::from_element(1, 1, v.sum() / (v.nrows() * v.ncols()) as f64);
        let needs = self.needs(a);
        self.push(Op::MeanAll(a), value, needs)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = DMatrix::from_element(1, 1, self.nodes[a.0].value.sum());
        let needs = self.needs(a);
        self.push(Op::SumAll(a), value, needs)
    }

    /// Mean normalized-l2 loss over column pairs; see [`super::f_l2`].
    pub fn norm_l2_mean(&mut self, pred: Var, target: Var) -> Var {
        let p = &self.nodes[pred.0].value;
        let t = &self.nodes[target.0].value;
        debug_assert_eq!(p.shape(), t.shape());
        let mut acc = 0.0;
        for j in 0..p.ncols() {
            let na = p.column(j).norm();
            let nb = t.column(j).norm();
            if na < NORM_EPS && nb < NORM_EPS {
                note_zero_norm();
                continue;
            }
            for i in 0..p.nrows() {
                let av = if na < NORM_EPS { 0.0 } else { p[(i, j)] / na };
                let bv = if nb < NORM_EPS { 0.0 } else { t[(i, j)] / nb };
                acc += (av - bv) * (av - bv);
            }
        }
        let value = DMatrix::from_element(1, 1, acc / p.ncols() as f64);
        let needs = self.needs(pred) || self.needs(target);
        self.push(Op::NormL2Mean(pred, target), value, needs)
    }

    /// Mean softmax cross-entropy over column pairs; see [`super::f_ce`].
    pub fn softmax_ce_mean(&mut self, pred: Var, target: Var) -> Var {
        let p = &self.nodes[pred.0].value;
        let t = &self.nodes[target.0].value;
        debug_assert_eq!(p.shape(), t.shape());
        let mut acc = 0.0;
        for j in 0..p.ncols() {
            let lp = log_softmax(DVector::from_column_slice(p.column(j).as_slice()).as_view());
            let q = softmax(DVector::from_column_slice(t.column(j).as_slice()).as_view());
            acc -= q.dot(&lp);
        }
        let value = DMatrix::from_element(1, 1, acc / p.ncols() as f64);
        let needs = self.needs(pred) || self.needs(target);
        self.push(Op::SoftmaxCeMean(pred, target), value, needs)
    }

    /// Mean categorical negative log-likelihood of `labels` under the
    /// per-column softmax of `logits`.
    pub fn cat_nll_mean(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let l = &self.nodes[logits.0].value;
        debug_assert_eq!(l.ncols(), labels.len());
        let mut acc = 0.0;
        for (j, &y) in labels.iter().enumerate() {
            let lp = log_softmax(DVector::from_column_slice(l.column(j).as_slice()).as_view());
            acc -= lp[y];
        }
        let value = DMatrix::from_element(1, 1, acc / labels.len() as f64);
        let needs = self.needs(logits);
        self.push(Op::CatNllMean(logits, labels), value, needs)
    }

    /// InfoNCE with in-batch negatives over a square logits matrix whose
    /// diagonal holds the positive pairs. Row-wise term only, or the mean
    /// of the row-wise and column-wise terms when `symmetric`.
    pub fn infonce(&mut self, logits: Var, symmetric: bool) -> Var {
        let l = &self.nodes[logits.0].value;
        debug_assert_eq!(l.nrows(), l.ncols());
        let n = l.nrows();
        let row_term: f64 = (0..n)
            .map(|i| {
                let lp = log_softmax(DVector::from_row_slice(l.row(i).transpose().as_slice()).as_view());
                -lp[i]
            })
            .sum::<f64>()
            / n as f64;
        let value = if symmetric {
            let col_term: f64 = (0..n)
                .map(|j| {
                    let lp = log_softmax(DVector::from_column_slice(l.column(j).as_slice()).as_view());
                    -lp[j]
                })
                .sum::<f64>()
                / n as f64;
            (row_term + col_term) / 2.0
        } else {
            row_term
        };
        let value = DMatrix::from_element(1, 1, value);
        let needs = self.needs(logits);
        self.push(Op::InfoNce { logits, symmetric }, value, needs)
    }

    /// Registers every tensor of an MLP as leaves (trainable or frozen).
    pub fn register_mlp(&mut self, params: &MlpParams, trainable: bool) -> MlpVars {
        let layers = params
            .layers
            .iter()
            .map(|(w, b)| {
                let wv = if trainable { self.leaf(w.clone()) } else { self.frozen(w.clone()) };
                let bv = if trainable { self.leaf(b.clone()) } else { self.frozen(b.clone()) };
                (wv, bv)
            })
            .collect();
        MlpVars { layers }
    }

    /// Applies a registered MLP to a column batch.
    pub fn apply_mlp(&mut self, spec: &MlpSpec, vars: &MlpVars, input: Var) -> Var {
        let n_layers = vars.layers.len();
        let mut x = input;
        for (l, &(w, b)) in vars.layers.iter().enumerate() {
            let z = self.matmul(w, x);
            let z = self.add_bias(z, b);
            x = if l + 1 < n_layers {
                self.activation(spec.activation, z)
            } else {
                z
            };
        }
        x
    }

    /// Reverse pass from a scalar root. Returns per-node gradients;
    /// frozen leaves and stop-gradient branches hold `None`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        debug_assert_eq!(self.nodes[root.0].value.shape(), (1, 1));
        grads[root.0] = Some(DMatrix::from_element(1, 1, 1.0));

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.accumulate(idx, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Gradients { grads }
    }

    fn add_grad(&self, grads: &mut [Option<DMatrix<f64>>], var: Var, delta: DMatrix<f64>) {
        if !self.needs(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => *existing += delta,
            slot => *slot = Some(delta),
        }
    }

    fn accumulate(&self, idx: usize, upstream: &DMatrix<f64>, grads: &mut [Option<DMatrix<f64>>]) {
        let g = upstream;
        match &self.nodes[idx].op {
            Op::Leaf | Op::StopGrad(_) => {}
            Op::MatMul(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                if self.needs(*a) {
                    self.add_grad(grads, *a, g * vb.transpose());
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, va.transpose() * g);
                }
            }
            Op::MatMulTn(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                if self.needs(*a) {
                    self.add_grad(grads, *a, vb * g.transpose());
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, va * g);
                }
            }
            Op::AddBias(a, bias) => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, g.clone());
                }
                if self.needs(*bias) {
                    let col = g.column_sum();
                    self.add_grad(grads, *bias, DMatrix::from_column_slice(col.len(), 1, col.as_slice()));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, -g);
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, g * *c);
                }
            }
            Op::Activation(kind, a) => {
                if self.needs(*a) {
                    let z = &self.nodes[a.0].value;
                    self.add_grad(grads, *a, activation_grad(*kind, z, g));
                }
            }
            Op::ConcatRows(a, b) => {
                let ra = self.nodes[a.0].value.nrows();
                let rb = self.nodes[b.0].value.nrows();
                if self.needs(*a) {
                    self.add_grad(grads, *a, g.rows(0, ra).into());
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, g.rows(ra, rb).into());
                }
            }
            Op::PermuteCols(a, perm) => {
                if self.needs(*a) {
                    let mut d = DMatrix::zeros(g.nrows(), g.ncols());
                    for (j, &src) in perm.iter().enumerate() {
                        let mut col = d.column_mut(src);
                        col += g.column(j);
                    }
                    self.add_grad(grads, *a, d);
                }
            }
            Op::ElemMul(a, b) => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, g.component_mul(&self.nodes[b.0].value));
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, g.component_mul(&self.nodes[a.0].value));
                }
            }
            Op::ColDot(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                if self.needs(*a) {
                    let mut da = vb.clone();
                    for (j, mut col) in da.column_iter_mut().enumerate() {
                        col *= g[(0, j)];
                    }
                    self.add_grad(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = va.clone();
                    for (j, mut col) in db.column_iter_mut().enumerate() {
                        col *= g[(0, j)];
                    }
                    self.add_grad(grads, *b, db);
                }
            }
            Op::MeanAll(a) => {
                if self.needs(*a) {
                    let v = &self.nodes[a.0].value;
                    let scale = g[(0, 0)] / (v.nrows() * v.ncols()) as f64;
                    self.add_grad(grads, *a, DMatrix::from_element(v.nrows(), v.ncols(), scale));
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    let v = &self.nodes[a.0].value;
                    self.add_grad(
                        grads,
                        *a,
                        DMatrix::from_element(v.nrows(), v.ncols(), g[(0, 0)]),
                    );
                }
            }
            Op::NormL2Mean(pred, target) => {
                let scale = g[(0, 0)] / self.nodes[pred.0].value.ncols() as f64;
                if self.needs(*pred) {
                    self.add_grad(grads, *pred, norm_l2_grad(&self.nodes[pred.0].value, &self.nodes[target.0].value, scale));
                }
                if self.needs(*target) {
                    self.add_grad(grads, *target, norm_l2_grad(&self.nodes[target.0].value, &self.nodes[pred.0].value, scale));
                }
            }
            Op::SoftmaxCeMean(pred, target) => {
                let p = &self.nodes[pred.0].value;
                let t = &self.nodes[target.0].value;
                let scale = g[(0, 0)] / p.ncols() as f64;
                if self.needs(*pred) {
                    let mut d = DMatrix::zeros(p.nrows(), p.ncols());
                    for j in 0..p.ncols() {
                        let sp = softmax(DVector::from_column_slice(p.column(j).as_slice()).as_view());
                        let q = softmax(DVector::from_column_slice(t.column(j).as_slice()).as_view());
                        for i in 0..p.nrows() {
                            d[(i, j)] = (sp[i] - q[i]) * scale;
                        }
                    }
                    self.add_grad(grads, *pred, d);
                }
                if self.needs(*target) {
                    let mut d = DMatrix::zeros(t.nrows(), t.ncols());
                    for j in 0..t.ncols() {
                        let lp = log_softmax(DVector::from_column_slice(p.column(j).as_slice()).as_view());
                        let q = softmax(DVector::from_column_slice(t.column(j).as_slice()).as_view());
                        let c = -&lp;
                        let qc = q.dot(&c);
                        for i in 0..t.nrows() {
                            d[(i, j)] = q[i] * (c[i] - qc) * scale;
                        }
                    }
                    self.add_grad(grads, *target, d);
                }
            }
            Op::CatNllMean(logits, labels) => {
                if self.needs(*logits) {
                    let l = &self.nodes[logits.0].value;
                    let scale = g[(0, 0)] / labels.len() as f64;
                    let mut d = DMatrix::zeros(l.nrows(), l.ncols());
                    for (j, &y) in labels.iter().enumerate() {
                        let sp = softmax(DVector::from_column_slice(l.column(j).as_slice()).as_view());
                        for i in 0..l.nrows() {
                            d[(i, j)] = (sp[i] - if i == y { 1.0 } else { 0.0 }) * scale;
                        }
                    }
                    self.add_grad(grads, *logits, d);
                }
            }
            Op::InfoNce { logits, symmetric } => {
                if self.needs(*logits) {
                    let l = &self.nodes[logits.0].value;
                    let n = l.nrows();
                    let mut d = DMatrix::zeros(n, n);
                    let row_weight = if *symmetric { 0.5 } else { 1.0 };
                    let scale = g[(0, 0)] / n as f64;
                    for i in 0..n {
                        let sp = softmax(DVector::from_row_slice(l.row(i).transpose().as_slice()).as_view());
                        for j in 0..n {
                            d[(i, j)] += row_weight * scale * (sp[j] - if i == j { 1.0 } else { 0.0 });
                        }
                    }
                    if *symmetric {
                        for j in 0..n {
                            let sp = softmax(DVector::from_column_slice(l.column(j).as_slice()).as_view());
                            for i in 0..n {
                                d[(i, j)] += 0.5 * scale * (sp[i] - if i == j { 1.0 } else { 0.0 });
                            }
                        }
                    }
                    self.add_grad(grads, *logits, d);
                }
            }
        }
    }
}

fn norm_l2_grad(own: &DMatrix<f64>, other: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    // d/da mean_j || a_j/||a_j|| - b_j/||b_j|| ||^2 for the `own` side
    let mut d = DMatrix::zeros(own.nrows(), own.ncols());
    for j in 0..own.ncols() {
        let na = own.column(j).norm();
        if na < NORM_EPS {
            continue;
        }
        let nb = other.column(j).norm();
        let ahat = own.column(j) / na;
        let bhat = if nb < NORM_EPS {
            DVector::zeros(other.nrows())
        } else {
            DVector::from_column_slice((other.column(j) / nb).as_slice())
        };
        let diff = &ahat - &bhat;
        let along = ahat.dot(&diff);
        for i in 0..own.nrows() {
            d[(i, j)] = scale * 2.0 / na * (diff[i] - ahat[i] * along);
        }
    }
    d
}

/// Extracts the gradients of a registered MLP in parameter order; layers
/// with no flow come back as zeros.
#[cfg(test)]
pub(crate) fn mlp_grads(graph: &Graph, grads: &Gradients, vars: &MlpVars) -> MlpParams {
    let layers = vars
        .layers
        .iter()
        .map(|&(w, b)| {
            let wv = graph.value(w);
            let bv = graph.value(b);
            let gw = grads
                .get(w)
                .cloned()
                .unwrap_or_else(|| DMatrix::zeros(wv.nrows(), wv.ncols()));
            let gb = grads
                .get(b)
                .cloned()
                .unwrap_or_else(|| DMatrix::zeros(bv.nrows(), bv.ncols()));
            (gw, gb)
        })
        .collect();
    MlpParams { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{central_difference, max_relative_error, Activation};
    use crate::rngstream::stream;
    use rand::Rng;

    fn rand_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// FD check for a scalar-valued builder over one leaf matrix.
    fn check_leaf_grad<F>(build: F, leaf_value: DMatrix<f64>)
    where
        F: Fn(&mut Graph, Var) -> Var,
    {
        let mut g = Graph::new();
        let x = g.leaf(leaf_value.clone());
        let loss = build(&mut g, x);
        let grads = g.backward(loss);
        let analytic: Vec<f64> = grads.get(x).unwrap().iter().copied().collect();

        let flat: Vec<f64> = leaf_value.iter().copied().collect();
        let numeric = central_difference(
            |xs| {
                let mut g = Graph::new();
                let m = DMatrix::from_iterator(leaf_value.nrows(), leaf_value.ncols(), xs.iter().copied());
                let x = g.leaf(m);
                let loss = build(&mut g, x);
                g.scalar(loss)
            },
            &flat,
            1e-5,
        );
        let err = max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-6, "max rel err {err}");
    }

    #[test]
    fn stopgrad_is_identity_in_value() {
        let mut g = Graph::new();
        let x = g.leaf(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let s = g.stopgrad(x);
        assert_eq!(g.value(s), g.value(x));
    }

    #[test]
    fn stopgrad_product_has_linear_gradient() {
        // loss = sum(stopgrad(x) .* x) must have gradient x, not 2x
        let mut g = Graph::new();
        let value = DMatrix::from_row_slice(1, 3, &[2.0, -1.0, 0.5]);
        let x = g.leaf(value.clone());
        let sg = g.stopgrad(x);
        let prod = g.elem_mul(sg, x);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        assert_eq!(grads.get(x).unwrap(), &value);
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(DMatrix::from_element(2, 2, 1.0));
        let t = g.frozen(DMatrix::from_element(2, 2, 3.0));
        let prod = g.elem_mul(x, t);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        assert!(grads.get(x).is_some());
        assert!(grads.get(t).is_none());
    }

    #[test]
    fn matmul_gradients_match_fd() {
        let mut rng = stream(31, "graph-fd");
        let b = rand_matrix(3, 4, &mut rng);
        check_leaf_grad(
            move |g, x| {
                let bv = g.frozen(b.clone());
                let prod = g.matmul(x, bv);
                g.mean_all(prod)
            },
            rand_matrix(2, 3, &mut rng),
        );
    }

    #[test]
    fn matmul_tn_gradients_match_fd() {
        let mut rng = stream(32, "graph-fd");
        let b = rand_matrix(3, 4, &mut rng);
        check_leaf_grad(
            move |g, x| {
                let bv = g.frozen(b.clone());
                let prod = g.matmul_tn(x, bv);
                g.mean_all(prod)
            },
            rand_matrix(3, 5, &mut rng),
        );
    }

    #[test]
    fn concat_and_coldot_gradients_match_fd() {
        let mut rng = stream(33, "graph-fd");
        let other = rand_matrix(4, 4, &mut rng);
        check_leaf_grad(
            move |g, x| {
                let o = g.frozen(other.clone());
                let top = g.scale(x, 1.5);
                let cat = g.concat_rows(top, x);
                let dot = g.col_dot(cat, o);
                g.mean_all(dot)
            },
            rand_matrix(2, 4, &mut rng),
        );
    }

    #[test]
    fn norm_l2_mean_gradients_match_fd_both_sides() {
        let mut rng = stream(34, "graph-fd");
        let t = rand_matrix(4, 3, &mut rng);
        check_leaf_grad(
            {
                let t = t.clone();
                move |g, x| {
                    let tv = g.frozen(t.clone());
                    g.norm_l2_mean(x, tv)
                }
            },
            rand_matrix(4, 3, &mut rng),
        );
        // target side
        let p = rand_matrix(4, 3, &mut rng);
        check_leaf_grad(
            move |g, x| {
                let pv = g.frozen(p.clone());
                g.norm_l2_mean(pv, x)
            },
            rand_matrix(4, 3, &mut rng),
        );
    }

    #[test]
    fn softmax_ce_mean_gradients_match_fd_both_sides() {
        let mut rng = stream(35, "graph-fd");
        let t = rand_matrix(4, 3, &mut rng);
        check_leaf_grad(
            {
                let t = t.clone();
                move |g, x| {
                    let tv = g.frozen(t.clone());
                    g.softmax_ce_mean(x, tv)
                }
            },
            rand_matrix(4, 3, &mut rng),
        );
        let p = rand_matrix(4, 3, &mut rng);
        check_leaf_grad(
            move |g, x| {
                let pv = g.frozen(p.clone());
                g.softmax_ce_mean(pv, x)
            },
            rand_matrix(4, 3, &mut rng),
        );
    }

    #[test]
    fn cat_nll_gradients_match_fd() {
        let mut rng = stream(36, "graph-fd");
        check_leaf_grad(
            move |g, x| g.cat_nll_mean(x, vec![2, 0, 4, 1]),
            rand_matrix(5, 4, &mut rng),
        );
    }

    #[test]
    fn permute_cols_gradients_match_fd() {
        let mut rng = stream(39, "graph-fd");
        let other = rand_matrix(3, 4, &mut rng);
        check_leaf_grad(
            move |g, x| {
                let p = g.permute_cols(x, vec![2, 0, 3, 1]);
                let o = g.frozen(other.clone());
                let dot = g.col_dot(p, o);
                g.mean_all(dot)
            },
            rand_matrix(3, 4, &mut rng),
        );
    }

    #[test]
    fn infonce_gradients_match_fd() {
        let mut rng = stream(37, "graph-fd");
        for symmetric in [false, true] {
            check_leaf_grad(
                move |g, x| g.infonce(x, symmetric),
                rand_matrix(4, 4, &mut rng),
            );
        }
    }

    #[test]
    fn mlp_through_graph_matches_fd() {
        let mut rng = stream(38, "graph-fd");
        let spec = MlpSpec {
            input_dim: 3,
            output_dim: 2,
            hidden: vec![4],
            activation: Activation::Gelu,
        };
        let params = MlpParams::init(&spec, &mut rng);
        let input = rand_matrix(3, 4, &mut rng);
        let target = rand_matrix(2, 4, &mut rng);

        let mut g = Graph::new();
        let vars = g.register_mlp(&params, true);
        let x = g.frozen(input.clone());
        let t = g.frozen(target.clone());
        let out = g.apply_mlp(&spec, &vars, x);
        let loss = g.norm_l2_mean(out, t);
        let grads = g.backward(loss);
        let mg = mlp_grads(&g, &grads, &vars);
        let analytic: Vec<f64> = mg.tensors().iter().flat_map(|m| m.iter().copied()).collect();

        let flat: Vec<f64> = params.tensors().iter().flat_map(|m| m.iter().copied()).collect();
        let numeric = central_difference(
            |xs| {
                let mut p = params.clone();
                let mut k = 0;
                for tensor in p.tensors_mut() {
                    for v in tensor.iter_mut() {
                        *v = xs[k];
                        k += 1;
                    }
                }
                let mut g = Graph::new();
                let vars = g.register_mlp(&p, true);
                let x = g.frozen(input.clone());
                let t = g.frozen(target.clone());
                let out = g.apply_mlp(&spec, &vars, x);
                let loss = g.norm_l2_mean(out, t);
                g.scalar(loss)
            },
            &flat,
            1e-5,
        );
        let err = max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-4, "max rel err {err}");
    }
}
