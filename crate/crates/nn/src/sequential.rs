//! Layer stacks.

use rand::{Rng, SeedableRng};

use crate::error::{NnError, Result};
use crate::layers::activation::activation_in_place;
use crate::layers::{weight_count, Cache, Layer, LayerSpec, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs.iter().map(|s| Layer::from_spec(s, rng)).collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| weight_count(&l.spec())).sum()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn run<R: Rng + ?Sized>(&self, x: &Tensor<T>, mut rng: Option<&mut R>, keep: bool) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if !keep {
                if let Layer::Activation(kind) = layer {
                    activation_in_place(*kind, &mut cur.data);
                    continue;
                }
            }
            let (y, cache) = layer.forward(&cur, rng.as_deref_mut())?;
            if cfg!(debug_assertions) && !y.is_finite() {
                return Err(NnError::Training(format!("non-finite activations after layer {i} ({:?})", layer.spec().kind)));
            }
            if keep {
                caches.push(cache);
            }
            cur = y;
        }
        Ok((cur, caches))
    }

    /// Training-mode forward pass (dropout active), keeping the caches
    /// needed by [`Sequential::backward`].
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &Tensor<T>, rng: &mut R) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        self.run(x, Some(rng), true)
    }

    /// Deterministic forward pass without caches. Dropout is the identity.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run::<rand_chacha::ChaCha8Rng>(x, None, false)?.0)
    }

    /// Forward pass in evaluation mode that keeps caches, for gradients
    /// with respect to the input of a frozen network.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        self.run::<rand_chacha::ChaCha8Rng>(x, None, true)
    }

    /// Accumulates parameter gradients and returns the gradient with
    /// respect to the input.
    pub fn backward(&mut self, caches: &[Cache<T>], dy: &Tensor<T>) -> Result<Tensor<T>> {
        if caches.len() != self.layers.len() {
            return Err(NnError::Training("cache count differs from layer count".into()));
        }
        let mut g = dy.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g)?;
        }
        Ok(g)
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut out = Sequential::<U>::new(&self.specs(), &mut rng).expect("specs of a built network are valid");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.cast();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ActivationKind;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn infer_matches_training_forward_without_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Sequential::<f64>::new(
            &[LayerSpec::conv1d(3, 5), LayerSpec::activation(ActivationKind::Tanh), LayerSpec::conv1d(5, 2)],
            &mut rng,
        )
        .unwrap();
        let x = Tensor::from_f64(&[4, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8, 0.9, -1.0, 1.1, 1.2]).unwrap();
        let (y, caches) = net.forward_train(&x, &mut rng).unwrap();
        assert_eq!(caches.len(), 3);
        assert_eq!(net.infer(&x).unwrap(), y);
        assert_eq!(net.weight_count(), 4 * 5 + 6 * 2);
    }

    #[test]
    fn cast_round_trip_keeps_f32_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Sequential::<f32>::new(&[LayerSpec::lstm(3, 4, false)], &mut rng).unwrap();
        let back: Sequential<f32> = net.cast::<f64>().cast();
        assert_eq!(back, net);
    }
}
