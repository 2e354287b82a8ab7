//! Partial binary cross-entropy on scribbled pixels and the mean-squared
//! alignment losses (scale consistency, local–global consistency).
//!
//! Every loss returns a [`LossValue`] carrying the scalar value and the
//! analytic gradient with respect to each prediction argument. The same
//! kernels back the differentiable graph ops used during training.

use crate::dataio::ScribbleMask;
use crate::error::{Error, Result};
use crate::model::Prediction;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Clamp applied to probabilities before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    /// One gradient per prediction argument, in argument order.
    pub grads: Vec<Tensor<T>>,
}

pub(crate) mod kernels {
    use super::BCE_EPS;
    use crate::dataio::{BACKGROUND, FOREGROUND};
    use crate::error::{Error, Result};
    use crate::scalar::Scalar;

    pub fn labeled_count(labels: &[u8]) -> usize {
        labels.iter().filter(|&&l| l == FOREGROUND || l == BACKGROUND).count()
    }

    pub fn partial_bce_value<T: Scalar>(pred: &[T], labels: &[u8]) -> Result<T> {
        let n = labeled_count(labels);
        if n == 0 {
            return Err(Error::EmptyScribble);
        }
        let (lo, hi) = (T::of(BCE_EPS), T::of(1.0 - BCE_EPS));
        let mut acc = T::zero();
        for (&p, &l) in pred.iter().zip(labels) {
            let p = p.max(lo).min(hi);
            match l {
                FOREGROUND => acc += p.ln(),
                BACKGROUND => acc += (T::one() - p).ln(),
                _ => {}
            }
        }
        Ok(-acc / T::of(n as f64))
    }

    /// Adds `upstream · ∂L/∂pred` into `acc`. Pixels held by the clamp get
    /// zero gradient.
    pub fn partial_bce_grad_acc<T: Scalar>(pred: &[T], labels: &[u8], upstream: T, acc: &mut [T]) {
        let n = labeled_count(labels);
        if n == 0 {
            return;
        }
        let (lo, hi) = (T::of(BCE_EPS), T::of(1.0 - BCE_EPS));
        let scale = upstream / T::of(n as f64);
        for ((a, &p), &l) in acc.iter_mut().zip(pred).zip(labels) {
            if p < lo || p > hi {
                continue;
            }
            match l {
                FOREGROUND => *a -= scale / p,
                BACKGROUND => *a += scale / (T::one() - p),
                _ => {}
            }
        }
    }

    pub fn mse_value<T: Scalar>(a: &[T], b: &[T]) -> T {
        let s: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
        s / T::of(a.len() as f64)
    }

    /// Adds `upstream · ∂/∂a mean((a − b)²)` into `acc`.
    pub fn mse_grad_acc<T: Scalar>(a: &[T], b: &[T], upstream: T, acc: &mut [T]) {
        let k = T::of(2.0) * upstream / T::of(a.len() as f64);
        for ((g, &x), &y) in acc.iter_mut().zip(a).zip(b) {
            *g += k * (x - y);
        }
    }
}

/// Mean BCE over scribbled pixels; unlabeled pixels contribute nothing.
pub fn partial_bce<T: Scalar>(pred: &Prediction<T>, scribble: &ScribbleMask) -> Result<LossValue<T>> {
    if pred.hw() != scribble.hw() {
        return Err(Error::Argument(format!(
            "prediction {:?} vs scribble {:?}",
            pred.hw(),
            scribble.hw()
        )));
    }
    let p = pred.probs().data();
    let value = kernels::partial_bce_value(p, scribble.labels())?;
    let mut grad = Tensor::zeros(pred.probs().shape());
    kernels::partial_bce_grad_acc(p, scribble.labels(), T::one(), grad.data_mut());
    Ok(LossValue {
        value,
        grads: vec![grad],
    })
}

fn mse_pair<T: Scalar>(a: &Prediction<T>, b: &Prediction<T>) -> Result<LossValue<T>> {
    if a.hw() != b.hw() {
        return Err(Error::Argument(format!(
            "prediction shapes differ: {:?} vs {:?}",
            a.hw(),
            b.hw()
        )));
    }
    let (x, y) = (a.probs().data(), b.probs().data());
    let mut ga = Tensor::zeros(a.probs().shape());
    let mut gb = Tensor::zeros(b.probs().shape());
    kernels::mse_grad_acc(x, y, T::one(), ga.data_mut());
    kernels::mse_grad_acc(y, x, T::one(), gb.data_mut());
    Ok(LossValue {
        value: kernels::mse_value(x, y),
        grads: vec![ga, gb],
    })
}

/// Scale consistency: mean squared difference between the prediction on the
/// original image and the prediction on a rescaled copy resized back.
/// Gradients flow into both arguments.
pub fn scale_consistency<T: Scalar>(
    pred_original: &Prediction<T>,
    pred_rescaled_back: &Prediction<T>,
) -> Result<LossValue<T>> {
    mse_pair(pred_original, pred_rescaled_back)
}

/// Local–global consistency between the prediction on a cropped input and
/// the same window cropped out of the full-image prediction.
pub fn local_global<T: Scalar>(
    pred_local: &Prediction<T>,
    pred_global_crop: &Prediction<T>,
) -> Result<LossValue<T>> {
    mse_pair(pred_local, pred_global_crop)
}
