//! Mean losses returning `(value, d value / d prediction)`.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "mae" => Some(LossKind::L1),
            "l2" | "mse" => Some(LossKind::L2),
            _ => None,
        }
    }

    pub fn eval<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        match self {
            LossKind::L1 => l1(pred, target),
            LossKind::L2 => l2(pred, target),
        }
    }
}

fn finite<T>(v: f64, grad: Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if !v.is_finite() {
        return Err(NnError::Training(format!("loss is {v}")));
    }
    Ok((v, grad))
}

/// Mean absolute error. The subgradient at zero is zero.
pub fn l1<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.same_shape(target)?;
    let n = pred.len().max(1) as f64;
    let inv = T::of(1.0 / n);
    let mut grad = Tensor::zeros(&pred.shape);
    let mut sum = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = *p - *t;
        sum += d.as_f64().abs();
        *g = if d > T::zero() { inv } else if d < T::zero() { -inv } else { T::zero() };
    }
    finite(sum / n, grad)
}

/// Mean squared error.
pub fn l2<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.same_shape(target)?;
    let n = pred.len().max(1) as f64;
    let scale = T::of(2.0 / n);
    let mut grad = Tensor::zeros(&pred.shape);
    let mut sum = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = *p - *t;
        sum += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    finite(sum / n, grad)
}
