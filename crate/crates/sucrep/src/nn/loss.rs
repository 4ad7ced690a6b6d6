//! Scalar prediction losses between representation vectors.

use nalgebra::{DVector, DVectorView};
use std::sync::atomic::{AtomicU64, Ordering};

pub(crate) const NORM_EPS: f64 = 1e-12;

static ZERO_NORM_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of times `f_l2` has been fed two zero vectors.
pub fn zero_norm_warning_count() -> u64 {
    ZERO_NORM_WARNINGS.load(Ordering::Relaxed)
}

pub(crate) fn note_zero_norm() {
    ZERO_NORM_WARNINGS.fetch_add(1, Ordering::Relaxed);
}

/// Squared distance between unit-normalized vectors:
/// `|| a/||a|| - b/||b|| ||^2`, in `[0, 4]`.
///
/// Zero-norm inputs are epsilon-guarded: a lone zero vector contributes its
/// counterpart's unit norm; two zero vectors yield 0 and bump the warning
/// counter.
pub fn f_l2(a: DVectorView<f64>, b: DVectorView<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na < NORM_EPS && nb < NORM_EPS {
        note_zero_norm();
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..a.len() {
        let av = if na < NORM_EPS { 0.0 } else { a[i] / na };
        let bv = if nb < NORM_EPS { 0.0 } else { b[i] / nb };
        acc += (av - bv) * (av - bv);
    }
    acc
}

/// Numerically stable log-softmax.
pub(crate) fn log_softmax(x: DVectorView<f64>) -> DVector<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    DVector::from_fn(x.len(), |i, _| x[i] - lse)
}

pub(crate) fn softmax(x: DVectorView<f64>) -> DVector<f64> {
    let mut s = log_softmax(x);
    s.apply(|v| *v = v.exp());
    s
}

/// Cross-entropy between softmax-normalized representations:
/// `-sum_i softmax(b)_i * log softmax(a)_i`, with max-subtraction
/// stabilization. `a` is the prediction, `b` the target.
pub fn f_ce(a: DVectorView<f64>, b: DVectorView<f64>) -> f64 {
    let lp = log_softmax(a);
    let q = softmax(b);
    -q.dot(&lp)
}
