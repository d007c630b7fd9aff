//! Kernel-size-1 Conv1D: one affine map applied to every row (time step).

use rand::Rng;

use super::{glorot, Param};
use crate::error::{shape_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub n_i: usize,
    pub n_o: usize,
    /// `[n_i, n_o]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng + ?Sized>(n_i: usize, n_o: usize, rng: &mut R) -> Self {
        Self { n_i, n_o, weight: glorot(&[n_i, n_o], n_i, n_o, rng), bias: Param::zeros(&[n_o]) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.features() != self.n_i {
            return shape_err(format!("conv1d expects {} features, got {:?}", self.n_i, x.shape));
        }
        let rows = x.len() / self.n_i;
        let mut out = Vec::with_capacity(rows * self.n_o);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias.value.data);
        }
        gemm(false, false, rows, self.n_o, self.n_i, T::one(), &x.data, &self.weight.value.data, T::one(), &mut out);
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = self.n_o;
        Tensor::from_vec(&shape, out)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let rows = x.len() / self.n_i;
        if dy.len() != rows * self.n_o {
            return shape_err("conv1d backward: gradient shape mismatch");
        }
        gemm(true, false, self.n_i, self.n_o, rows, T::one(), &x.data, &dy.data, T::one(), &mut self.weight.grad.data);
        for row in dy.data.chunks_exact(self.n_o) {
            for (g, v) in self.bias.grad.data.iter_mut().zip(row) {
                *g += *v;
            }
        }
        let mut dx = vec![T::zero(); rows * self.n_i];
        gemm(false, true, rows, self.n_i, self.n_o, T::one(), &dy.data, &self.weight.value.data, T::zero(), &mut dx);
        Tensor::from_vec(&x.shape, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Conv1d::<f64>::new(3, 2, &mut rng);
        let x = Tensor::from_vec(&[1, 2, 3], vec![0.1, -0.4, 0.7, 0.1, -0.4, 0.7]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape, vec![1, 2, 2]);
        assert_eq!(y.data[..2], y.data[2..]);
    }

    #[test]
    fn identity_weights_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Conv1d::<f64>::new(3, 3, &mut rng);
        layer.weight.value = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = Conv1d::<f64>::new(4, 2, &mut rng);
        layer.bias.value = Tensor::from_vec(&[2], vec![0.5, -0.25]).unwrap();
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
        let y = layer.forward(&x).unwrap();
        for r in 0..3 {
            for o in 0..2 {
                let mut acc = layer.bias.value.data[o];
                for i in 0..4 {
                    acc += x.data[r * 4 + i] * layer.weight.value.data[i * 2 + o];
                }
                assert!((y.data[r * 2 + o] - acc).abs() < 1e-14);
            }
        }
    }
}
