//! Elementwise activations.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Linear,
    LeakyRelu,
    Tanh,
    HardSigmoid,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::LeakyRelu => "leaky_relu",
            Self::Tanh => "tanh",
            Self::HardSigmoid => "hard_sigmoid",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Self::Linear, Self::LeakyRelu, Self::Tanh, Self::HardSigmoid].into_iter().find(|k| k.name() == s)
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        [Self::Linear, Self::LeakyRelu, Self::Tanh, Self::HardSigmoid].get(c as usize).copied()
    }
}

#[inline]
pub fn hard_sigmoid<T: Scalar>(x: T) -> T {
    (T::of(0.2) * x + T::of(0.5)).max(T::zero()).min(T::one())
}

#[inline]
pub fn hard_sigmoid_grad<T: Scalar>(x: T) -> T {
    let lim = T::of(2.5);
    if x > -lim && x < lim {
        T::of(0.2)
    } else {
        T::zero()
    }
}

#[inline]
pub fn apply_scalar<T: Scalar>(kind: ActivationKind, x: T) -> T {
    match kind {
        ActivationKind::Linear => x,
        ActivationKind::LeakyRelu => {
            if x >= T::zero() {
                x
            } else {
                T::of(LEAKY_SLOPE) * x
            }
        }
        ActivationKind::Tanh => x.tanh(),
        ActivationKind::HardSigmoid => hard_sigmoid(x),
    }
}

pub fn activation_apply<T: Scalar>(kind: ActivationKind, x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    activation_in_place(kind, &mut y.data);
    y
}

/// Applies the activation to `data`; the kind is matched once per call so
/// the inner loops vectorise.
pub fn activation_in_place<T: Scalar>(kind: ActivationKind, data: &mut [T]) {
    match kind {
        ActivationKind::Linear => {}
        ActivationKind::LeakyRelu => {
            let a = T::of(LEAKY_SLOPE);
            data.iter_mut().for_each(|v| *v = if *v >= T::zero() { *v } else { a * *v });
        }
        ActivationKind::Tanh => data.iter_mut().for_each(|v| *v = v.tanh()),
        ActivationKind::HardSigmoid => data.iter_mut().for_each(|v| *v = hard_sigmoid(*v)),
    }
}

/// Gradient through the activation given its input `x` and output `y`.
pub fn activation_backward<T: Scalar>(kind: ActivationKind, x: &Tensor<T>, y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut out = dy.clone();
    match kind {
        ActivationKind::Linear => {}
        ActivationKind::LeakyRelu => {
            let a = T::of(LEAKY_SLOPE);
            for (d, xv) in out.data.iter_mut().zip(&x.data) {
                if *xv < T::zero() {
                    *d *= a;
                }
            }
        }
        ActivationKind::Tanh => {
            for (d, yv) in out.data.iter_mut().zip(&y.data) {
                *d *= T::one() - *yv * *yv;
            }
        }
        ActivationKind::HardSigmoid => {
            for (d, xv) in out.data.iter_mut().zip(&x.data) {
                *d *= hard_sigmoid_grad(*xv);
            }
        }
    }
    out
}
