//! Layer kinds, their specs and parameter containers.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod lstm;

use rand::Rng;

pub use activation::{activation_apply, activation_backward, ActivationKind};
pub use conv::{Conv, ConvTransposed};
pub use dense::Conv1d;
pub use lstm::{Lstm, LstmState};

use crate::error::{shape_err, NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { value: Tensor::zeros(shape), grad: Tensor::zeros(shape) }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Uniform init in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Param<T> {
    let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut p = Param::zeros(shape);
    p.value.data.iter_mut().for_each(|v| *v = T::of(rng.gen_range(-lim..lim)));
    p
}

/// Inverted-dropout mask (`0` or `1 / (1 - rate)`), `None` when rate is 0.
pub(crate) fn dropout_mask<T: Scalar, R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Option<Vec<T>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - rate));
    Some((0..n).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect())
}

/// Applies dropout to `x`. With `rng == None` (evaluation) this is the
/// identity. The recurrent variant expects `[B, T, n]` and shares one mask
/// over all time steps of a sequence.
pub fn dropout_apply<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, rate: f64, recurrent: bool, rng: Option<&mut R>) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    let Some(rng) = rng else { return Ok(x.clone()) };
    if recurrent {
        if x.shape.len() != 3 {
            return shape_err("recurrent dropout expects [B, T, n]");
        }
        let (b, t, n) = (x.shape[0], x.shape[1], x.shape[2]);
        let Some(mask) = dropout_mask::<T, R>(b * n, rate, rng) else { return Ok(x.clone()) };
        let mut out = x.clone();
        for bi in 0..b {
            for ti in 0..t {
                let row = &mut out.data[(bi * t + ti) * n..(bi * t + ti + 1) * n];
                row.iter_mut().zip(&mask[bi * n..(bi + 1) * n]).for_each(|(v, k)| *v *= *k);
            }
        }
        return Ok(out);
    }
    let Some(mask) = dropout_mask::<T, R>(x.len(), rate, rng) else { return Ok(x.clone()) };
    let mut out = x.clone();
    out.data.iter_mut().zip(&mask).for_each(|(v, k)| *v *= *k);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    ConvTransposed,
    Conv1d,
    Lstm,
    Activation,
    Dropout,
    Repeat,
}

impl LayerKind {
    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        use LayerKind::*;
        [Conv, ConvTransposed, Conv1d, Lstm, Activation, Dropout, Repeat].get(c as usize).copied()
    }
}

/// Architecture descriptor of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Spatial dimensionality of convolutions.
    pub dim: usize,
    pub kernel: usize,
    pub stride: usize,
    pub n_i: usize,
    pub n_o: usize,
    pub activation: ActivationKind,
    pub rate: f64,
    pub recurrent_rate: f64,
    pub return_sequences: bool,
    pub repeat: usize,
}

impl LayerSpec {
    fn base(kind: LayerKind) -> Self {
        Self {
            kind,
            dim: 0,
            kernel: 1,
            stride: 1,
            n_i: 0,
            n_o: 0,
            activation: ActivationKind::Linear,
            rate: 0.0,
            recurrent_rate: 0.0,
            return_sequences: false,
            repeat: 0,
        }
    }

    pub fn conv(dim: usize, kernel: usize, stride: usize, n_i: usize, n_o: usize) -> Self {
        Self { dim, kernel, stride, n_i, n_o, ..Self::base(LayerKind::Conv) }
    }

    pub fn conv_transposed(dim: usize, kernel: usize, stride: usize, n_i: usize, n_o: usize) -> Self {
        Self { dim, kernel, stride, n_i, n_o, ..Self::base(LayerKind::ConvTransposed) }
    }

    pub fn conv1d(n_i: usize, n_o: usize) -> Self {
        Self { n_i, n_o, ..Self::base(LayerKind::Conv1d) }
    }

    pub fn lstm(n_i: usize, n_o: usize, return_sequences: bool) -> Self {
        Self { n_i, n_o, return_sequences, ..Self::base(LayerKind::Lstm) }
    }

    pub fn activation(kind: ActivationKind) -> Self {
        Self { activation: kind, ..Self::base(LayerKind::Activation) }
    }

    pub fn dropout(rate: f64) -> Self {
        Self { rate, ..Self::base(LayerKind::Dropout) }
    }

    pub fn repeat(times: usize) -> Self {
        Self { repeat: times, ..Self::base(LayerKind::Repeat) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::Config(format!("{:?}: {m}", self.kind)));
        match self.kind {
            LayerKind::Conv | LayerKind::ConvTransposed => {
                if !(2..=3).contains(&self.dim) {
                    return bad("spatial dim must be 2 or 3");
                }
                if self.kernel == 0 || self.stride == 0 || self.n_i == 0 || self.n_o == 0 {
                    return bad("kernel, stride and feature counts must be >= 1");
                }
            }
            LayerKind::Conv1d | LayerKind::Lstm => {
                if self.n_i == 0 || self.n_o == 0 {
                    return bad("feature counts must be >= 1");
                }
            }
            LayerKind::Dropout => {
                if !(0.0..1.0).contains(&self.rate) {
                    return bad("rate must lie in [0, 1)");
                }
            }
            LayerKind::Repeat => {
                if self.repeat == 0 {
                    return bad("repeat count must be >= 1");
                }
            }
            LayerKind::Activation => {}
        }
        if self.kind == LayerKind::Lstm && (!(0.0..1.0).contains(&self.rate) || !(0.0..1.0).contains(&self.recurrent_rate)) {
            return bad("dropout rates must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Number of trainable weights of a layer.
pub fn weight_count(spec: &LayerSpec) -> usize {
    match spec.kind {
        LayerKind::Conv | LayerKind::ConvTransposed => spec.kernel.pow(spec.dim as u32) * spec.n_i * spec.n_o + spec.n_o,
        LayerKind::Conv1d => spec.n_o * spec.kernel * (spec.n_i + 1),
        LayerKind::Lstm => 4 * (spec.n_o * spec.n_o + spec.n_o * (spec.n_i + 1)),
        LayerKind::Activation | LayerKind::Dropout | LayerKind::Repeat => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv<T>),
    ConvTransposed(ConvTransposed<T>),
    Conv1d(Conv1d<T>),
    Lstm(Lstm<T>),
    Activation(ActivationKind),
    Dropout(f64),
    Repeat(usize),
}

/// Values saved by a training forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv(conv::ConvCache<T>),
    ConvTransposed(conv::ConvTransposedCache<T>),
    Input(Tensor<T>),
    Lstm(lstm::LstmCache<T>),
    Activation { x: Tensor<T>, y: Tensor<T> },
    Mask(Option<Vec<T>>),
    Repeat { batch: usize, features: usize },
}

impl<T: Scalar> Layer<T> {
    pub fn from_spec<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        Ok(match spec.kind {
            LayerKind::Conv => Layer::Conv(Conv::new(spec.dim, spec.kernel, spec.stride, spec.n_i, spec.n_o, rng)),
            LayerKind::ConvTransposed => {
                Layer::ConvTransposed(ConvTransposed::new(spec.dim, spec.kernel, spec.stride, spec.n_i, spec.n_o, rng))
            }
            LayerKind::Conv1d => Layer::Conv1d(Conv1d::new(spec.n_i, spec.n_o, rng)),
            LayerKind::Lstm => {
                let mut l = Lstm::new(spec.n_i, spec.n_o, spec.return_sequences, rng);
                l.dropout = spec.rate;
                l.recurrent_dropout = spec.recurrent_rate;
                Layer::Lstm(l)
            }
            LayerKind::Activation => Layer::Activation(spec.activation),
            LayerKind::Dropout => Layer::Dropout(spec.rate),
            LayerKind::Repeat => Layer::Repeat(spec.repeat),
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::conv(c.dim, c.kernel, c.stride, c.c_in, c.c_out),
            Layer::ConvTransposed(c) => LayerSpec::conv_transposed(c.dim, c.kernel, c.stride, c.c_in, c.c_out),
            Layer::Conv1d(c) => LayerSpec::conv1d(c.n_i, c.n_o),
            Layer::Lstm(l) => LayerSpec {
                rate: l.dropout,
                recurrent_rate: l.recurrent_dropout,
                ..LayerSpec::lstm(l.n_i, l.n_o, l.return_sequences)
            },
            Layer::Activation(k) => LayerSpec::activation(*k),
            Layer::Dropout(r) => LayerSpec::dropout(*r),
            Layer::Repeat(n) => LayerSpec::repeat(*n),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::ConvTransposed(c) => vec![&c.weight, &c.bias],
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Lstm(l) => vec![&l.w_x, &l.w_h, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::ConvTransposed(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Lstm(l) => vec![&mut l.w_x, &mut l.w_h, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Forward pass. `rng` is `Some` in training mode (dropout active).
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, rng: Option<&mut R>) -> Result<(Tensor<T>, Cache<T>)> {
        Ok(match self {
            Layer::Conv(c) => {
                let (y, cache) = c.forward(x)?;
                (y, Cache::Conv(cache))
            }
            Layer::ConvTransposed(c) => {
                let (y, cache) = c.forward(x)?;
                (y, Cache::ConvTransposed(cache))
            }
            Layer::Conv1d(c) => (c.forward(x)?, Cache::Input(x.clone())),
            Layer::Lstm(l) => {
                let (y, cache) = l.forward(x, rng)?;
                (y, Cache::Lstm(cache))
            }
            Layer::Activation(k) => {
                let y = activation_apply(*k, x);
                (y.clone(), Cache::Activation { x: x.clone(), y })
            }
            Layer::Dropout(rate) => match rng {
                Some(rng) => {
                    let mask = dropout_mask::<T, R>(x.len(), *rate, rng);
                    let mut y = x.clone();
                    if let Some(m) = &mask {
                        y.data.iter_mut().zip(m).for_each(|(v, k)| *v *= *k);
                    }
                    (y, Cache::Mask(mask))
                }
                None => (x.clone(), Cache::Mask(None)),
            },
            Layer::Repeat(times) => {
                if x.shape.len() != 2 {
                    return shape_err(format!("repeat expects [B, n], got {:?}", x.shape));
                }
                let (b, n) = (x.shape[0], x.shape[1]);
                let mut data = Vec::with_capacity(b * times * n);
                for row in x.data.chunks_exact(n) {
                    for _ in 0..*times {
                        data.extend_from_slice(row);
                    }
                }
                (Tensor::from_vec(&[b, *times, n], data)?, Cache::Repeat { batch: b, features: n })
            }
        })
    }

    /// Backward pass: accumulates parameter gradients, returns d(input).
    pub fn backward(&mut self, cache: &Cache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Conv(k)) => c.backward(k, dy),
            (Layer::ConvTransposed(c), Cache::ConvTransposed(k)) => c.backward(k, dy),
            (Layer::Conv1d(c), Cache::Input(x)) => c.backward(x, dy),
            (Layer::Lstm(l), Cache::Lstm(k)) => l.backward(k, dy),
            (Layer::Activation(kind), Cache::Activation { x, y }) => Ok(activation_backward(*kind, x, y, dy)),
            (Layer::Dropout(_), Cache::Mask(mask)) => {
                let mut dx = dy.clone();
                if let Some(m) = mask {
                    dx.data.iter_mut().zip(m).for_each(|(v, k)| *v *= *k);
                }
                Ok(dx)
            }
            (Layer::Repeat(times), Cache::Repeat { batch, features }) => {
                let mut dx = Tensor::zeros(&[*batch, *features]);
                for b in 0..*batch {
                    for t in 0..*times {
                        let src = &dy.data[(b * *times + t) * features..(b * *times + t + 1) * features];
                        dx.data[b * features..(b + 1) * features].iter_mut().zip(src).for_each(|(d, v)| *d += *v);
                    }
                }
                Ok(dx)
            }
            _ => shape_err("cache does not belong to this layer"),
        }
    }
}
