//! LSTM layer with hard-sigmoid gates, unrolled over the whole sequence.
//!
//! Gate blocks are ordered `f, i, o, g` along the `4 n_o` axis. Input
//! dropout draws a fresh mask per element; recurrent dropout draws one mask
//! per sequence and reuses it at every step.

use rand::Rng;

use super::activation::{hard_sigmoid, hard_sigmoid_grad};
use super::{dropout_mask, glorot, Param};
use crate::error::{shape_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T> {
    pub n_i: usize,
    pub n_o: usize,
    pub return_sequences: bool,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    /// `[n_i, 4 n_o]`
    pub w_x: Param<T>,
    /// `[n_o, 4 n_o]`
    pub w_h: Param<T>,
    pub bias: Param<T>,
}

/// Hidden output and cell state of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub s: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(batch: usize, n_o: usize) -> Self {
        Self { h: vec![T::zero(); batch * n_o], s: vec![T::zero(); batch * n_o] }
    }
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    batch: usize,
    steps: usize,
    /// Masked input `[B T, n_i]`.
    xm: Vec<T>,
    mask_x: Option<Vec<T>>,
    mask_h: Option<Vec<T>>,
    /// Per step: pre-activations `[B, 4 n_o]`, cell state, masked previous h.
    z: Vec<Vec<T>>,
    s: Vec<Vec<T>>,
    hm_prev: Vec<Vec<T>>,
}

/// Gate nonlinearities and the state update for one batch of
/// pre-activations.
fn cell<T: Scalar>(z: &[T], s_prev: &[T], n_o: usize, s_out: &mut [T], h_out: &mut [T]) {
    for (b, zr) in z.chunks_exact(4 * n_o).enumerate() {
        for j in 0..n_o {
            let f = hard_sigmoid(zr[j]);
            let i = hard_sigmoid(zr[n_o + j]);
            let o = hard_sigmoid(zr[2 * n_o + j]);
            let g = zr[3 * n_o + j].tanh();
            let s = f * s_prev[b * n_o + j] + i * g;
            s_out[b * n_o + j] = s;
            h_out[b * n_o + j] = o * s.tanh();
        }
    }
}

impl<T: Scalar> Lstm<T> {
    pub fn new<R: Rng + ?Sized>(n_i: usize, n_o: usize, return_sequences: bool, rng: &mut R) -> Self {
        let mut bias = Param::zeros(&[4 * n_o]);
        bias.value.data[..n_o].iter_mut().for_each(|b| *b = T::of(FORGET_BIAS));
        Self {
            n_i,
            n_o,
            return_sequences,
            dropout: 0.0,
            recurrent_dropout: 0.0,
            w_x: glorot(&[n_i, 4 * n_o], n_i, 4 * n_o, rng),
            w_h: glorot(&[n_o, 4 * n_o], n_o, 4 * n_o, rng),
            bias,
        }
    }

    /// A single step on a batch of inputs `[B, n_i]`, no dropout.
    pub fn step(&self, x: &[T], prev: &LstmState<T>) -> Result<LstmState<T>> {
        let batch = x.len() / self.n_i;
        if x.len() != batch * self.n_i || prev.h.len() != batch * self.n_o || prev.s.len() != batch * self.n_o {
            return shape_err("lstm step: inconsistent input/state sizes");
        }
        let mut z = Vec::with_capacity(batch * 4 * self.n_o);
        for _ in 0..batch {
            z.extend_from_slice(&self.bias.value.data);
        }
        let g4 = 4 * self.n_o;
        gemm(false, false, batch, g4, self.n_i, T::one(), x, &self.w_x.value.data, T::one(), &mut z);
        gemm(false, false, batch, g4, self.n_o, T::one(), &prev.h, &self.w_h.value.data, T::one(), &mut z);
        let mut next = LstmState::zeros(batch, self.n_o);
        cell(&z, &prev.s, self.n_o, &mut next.s, &mut next.h);
        Ok(next)
    }

    /// Runs the sequence `[B, T, n_i]`. `rng` enables dropout (training).
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, rng: Option<&mut R>) -> Result<(Tensor<T>, LstmCache<T>)> {
        if x.shape.len() != 3 || x.shape[2] != self.n_i {
            return shape_err(format!("lstm expects [B, T, {}], got {:?}", self.n_i, x.shape));
        }
        let (batch, steps, n_o) = (x.shape[0], x.shape[1], self.n_o);
        let g4 = 4 * n_o;
        let (mask_x, mask_h) = match rng {
            Some(rng) => (
                dropout_mask::<T, R>(x.len(), self.dropout, rng),
                dropout_mask::<T, R>(batch * n_o, self.recurrent_dropout, rng),
            ),
            None => (None, None),
        };
        let mut xm = x.data.clone();
        if let Some(m) = &mask_x {
            xm.iter_mut().zip(m).for_each(|(v, k)| *v *= *k);
        }
        // input projection for every (b, t) row at once
        let mut xw = vec![T::zero(); batch * steps * g4];
        gemm(false, false, batch * steps, g4, self.n_i, T::one(), &xm, &self.w_x.value.data, T::zero(), &mut xw);

        let mut state = LstmState::zeros(batch, n_o);
        let mut cache = LstmCache {
            batch,
            steps,
            xm,
            mask_x,
            mask_h,
            z: Vec::with_capacity(steps),
            s: Vec::with_capacity(steps),
            hm_prev: Vec::with_capacity(steps),
        };
        let out_len = if self.return_sequences { batch * steps * n_o } else { batch * n_o };
        let mut out = vec![T::zero(); out_len];
        for t in 0..steps {
            let mut z = vec![T::zero(); batch * g4];
            for b in 0..batch {
                let src = (b * steps + t) * g4;
                for (zv, (xv, bv)) in z[b * g4..(b + 1) * g4].iter_mut().zip(xw[src..src + g4].iter().zip(&self.bias.value.data)) {
                    *zv = *xv + *bv;
                }
            }
            let mut hm = state.h.clone();
            if let Some(m) = &cache.mask_h {
                hm.iter_mut().zip(m).for_each(|(v, k)| *v *= *k);
            }
            gemm(false, false, batch, g4, n_o, T::one(), &hm, &self.w_h.value.data, T::one(), &mut z);
            let mut next = LstmState::zeros(batch, n_o);
            cell(&z, &state.s, n_o, &mut next.s, &mut next.h);
            if self.return_sequences {
                for b in 0..batch {
                    out[(b * steps + t) * n_o..(b * steps + t + 1) * n_o].copy_from_slice(&next.h[b * n_o..(b + 1) * n_o]);
                }
            }
            cache.z.push(z);
            cache.s.push(next.s.clone());
            cache.hm_prev.push(hm);
            state = next;
        }
        if !self.return_sequences {
            out.copy_from_slice(&state.h);
        }
        let shape = if self.return_sequences { vec![batch, steps, n_o] } else { vec![batch, n_o] };
        Ok((Tensor::from_vec(&shape, out)?, cache))
    }

    pub fn backward(&mut self, cache: &LstmCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, steps, n_o) = (cache.batch, cache.steps, self.n_o);
        let g4 = 4 * n_o;
        let expect = if self.return_sequences { batch * steps * n_o } else { batch * n_o };
        if dy.len() != expect {
            return shape_err("lstm backward: gradient shape mismatch");
        }
        let zero = vec![T::zero(); batch * n_o];
        let mut dh_next = vec![T::zero(); batch * n_o];
        let mut ds_next = vec![T::zero(); batch * n_o];
        let mut dz_all = vec![T::zero(); batch * steps * g4];
        let mut dz = vec![T::zero(); batch * g4];
        let mut dhm = vec![T::zero(); batch * n_o];
        let one = T::one();
        for t in (0..steps).rev() {
            let z = &cache.z[t];
            let s = &cache.s[t];
            let s_prev = if t > 0 { &cache.s[t - 1] } else { &zero };
            for b in 0..batch {
                for j in 0..n_o {
                    let k = b * n_o + j;
                    let mut dh = dh_next[k];
                    if self.return_sequences {
                        dh += dy.data[(b * steps + t) * n_o + j];
                    } else if t == steps - 1 {
                        dh += dy.data[k];
                    }
                    let zr = &z[b * g4..(b + 1) * g4];
                    let f = hard_sigmoid(zr[j]);
                    let i = hard_sigmoid(zr[n_o + j]);
                    let o = hard_sigmoid(zr[2 * n_o + j]);
                    let g = zr[3 * n_o + j].tanh();
                    let ts = s[k].tanh();
                    let d_o = dh * ts;
                    let ds = ds_next[k] + dh * o * (one - ts * ts);
                    let df = ds * s_prev[k];
                    let di = ds * g;
                    let dg = ds * i;
                    ds_next[k] = ds * f;
                    let dzr = &mut dz[b * g4..(b + 1) * g4];
                    dzr[j] = df * hard_sigmoid_grad(zr[j]);
                    dzr[n_o + j] = di * hard_sigmoid_grad(zr[n_o + j]);
                    dzr[2 * n_o + j] = d_o * hard_sigmoid_grad(zr[2 * n_o + j]);
                    dzr[3 * n_o + j] = dg * (one - g * g);
                }
            }
            gemm(true, false, n_o, g4, batch, one, &cache.hm_prev[t], &dz, one, &mut self.w_h.grad.data);
            gemm(false, true, batch, n_o, g4, one, &dz, &self.w_h.value.data, T::zero(), &mut dhm);
            match &cache.mask_h {
                Some(m) => dh_next.iter_mut().zip(dhm.iter().zip(m)).for_each(|(d, (v, k))| *d = *v * *k),
                None => dh_next.copy_from_slice(&dhm),
            }
            for b in 0..batch {
                let dst = (b * steps + t) * g4;
                dz_all[dst..dst + g4].copy_from_slice(&dz[b * g4..(b + 1) * g4]);
            }
        }
        for row in dz_all.chunks_exact(g4) {
            for (g, v) in self.bias.grad.data.iter_mut().zip(row) {
                *g += *v;
            }
        }
        let rows = batch * steps;
        gemm(true, false, self.n_i, g4, rows, one, &cache.xm, &dz_all, one, &mut self.w_x.grad.data);
        let mut dx = vec![T::zero(); rows * self.n_i];
        gemm(false, true, rows, self.n_i, g4, one, &dz_all, &self.w_x.value.data, T::zero(), &mut dx);
        if let Some(m) = &cache.mask_x {
            dx.iter_mut().zip(m).for_each(|(v, k)| *v *= *k);
        }
        Tensor::from_vec(&[batch, steps, self.n_i], dx)
    }
}
