//! Strided spatial convolutions (2D/3D, channels-last) via im2col + GEMM.
//!
//! Both layers share one geometry: a high-resolution grid of extent `n` and
//! a low-resolution grid of extent `n / stride`. Padding is `(k - s) / 2`
//! before each axis and whatever zero fill the last window needs after it
//! (for k4 s2 that is 1 before, 2 after). The transposed layer is the exact
//! linear adjoint of the forward one.

use rand::Rng;

use super::{glorot, Param};
use crate::error::{shape_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Geom {
    batch: usize,
    hi: [usize; 3],
    lo: [usize; 3],
    k: [usize; 3],
    s: [usize; 3],
    pad: [usize; 3],
    /// Channels on the high-resolution side.
    c: usize,
}

impl Geom {
    fn window(&self) -> usize {
        self.k.iter().product()
    }

    fn lo_cells(&self) -> usize {
        self.lo.iter().product()
    }

    fn rows(&self) -> usize {
        self.batch * self.lo_cells()
    }

    fn cols(&self) -> usize {
        self.window() * self.c
    }

    /// Output positions `o` along `axis` whose tap `ka` lands inside the
    /// high-resolution grid.
    fn valid(&self, axis: usize, ka: usize) -> (usize, usize) {
        let (s, pad, hi) = (self.s[axis], self.pad[axis], self.hi[axis]);
        let start = if pad > ka { (pad - ka).div_ceil(s) } else { 0 };
        let end = if hi + pad > ka { ((hi + pad - ka - 1) / s + 1).min(self.lo[axis]) } else { 0 };
        (start, end.max(start))
    }

    /// Calls `f(row, col_offset, hi_offset, len, row_step, hi_step)` for runs
    /// of in-bounds taps along the last non-trivial axis.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let run_axis = if self.hi[2] == 1 && self.k[2] == 1 { 1 } else { 2 };
        let hi_cells: usize = self.hi.iter().product();
        let lo_stride = [self.lo[1] * self.lo[2], self.lo[2], 1];
        let hi_stride = [self.hi[1] * self.hi[2], self.hi[2], 1];
        let row_step = lo_stride[run_axis];
        let hi_step = self.s[run_axis] * hi_stride[run_axis] * self.c;
        let mut tap = 0;
        for k0 in 0..self.k[0] {
            for k1 in 0..self.k[1] {
                for k2 in 0..self.k[2] {
                    let ks = [k0, k1, k2];
                    let r = [self.valid(0, k0), self.valid(1, k1), self.valid(2, k2)];
                    let len = r[run_axis].1 - r[run_axis].0;
                    if len > 0 {
                        // the axes other than the run axis, outer first
                        let (oa, ob) = if run_axis == 1 { (0, 2) } else { (0, 1) };
                        for b in 0..self.batch {
                            for x in r[oa].0..r[oa].1 {
                                for y in r[ob].0..r[ob].1 {
                                    let mut o = [0usize; 3];
                                    o[oa] = x;
                                    o[ob] = y;
                                    o[run_axis] = r[run_axis].0;
                                    let mut row = b * self.lo_cells();
                                    let mut cell = b * hi_cells;
                                    for a in 0..3 {
                                        row += o[a] * lo_stride[a];
                                        cell += (o[a] * self.s[a] + ks[a] - self.pad[a]) * hi_stride[a];
                                    }
                                    f(row, tap * self.c, cell * self.c, len, row_step, hi_step);
                                }
                            }
                        }
                    }
                    tap += 1;
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, hi: &[T]) -> Vec<T> {
        let cols = self.cols();
        let c = self.c;
        let mut out = vec![T::zero(); self.rows() * cols];
        self.for_each_run(|row, col, src, len, row_step, hi_step| {
            for t in 0..len {
                let d = (row + t * row_step) * cols + col;
                let h = src + t * hi_step;
                out[d..d + c].copy_from_slice(&hi[h..h + c]);
            }
        });
        out
    }

    fn col2im<T: Scalar>(&self, cols_data: &[T]) -> Vec<T> {
        let cols = self.cols();
        let c = self.c;
        let hi_len = self.batch * self.hi.iter().product::<usize>() * c;
        let mut out = vec![T::zero(); hi_len];
        self.for_each_run(|row, col, dst, len, row_step, hi_step| {
            for t in 0..len {
                let s = (row + t * row_step) * cols + col;
                let d = dst + t * hi_step;
                for (o, v) in out[d..d + c].iter_mut().zip(&cols_data[s..s + c]) {
                    *o += *v;
                }
            }
        });
        out
    }
}

fn spatial(shape: &[usize], dim: usize, channels: usize, what: &str) -> Result<(usize, [usize; 3])> {
    if shape.len() != dim + 2 {
        return shape_err(format!("{what}: expected rank {} input, got {shape:?}", dim + 2));
    }
    if shape[dim + 1] != channels {
        return shape_err(format!("{what}: expected {channels} channels, got {shape:?}"));
    }
    let mut ext = [1usize; 3];
    ext[..dim].copy_from_slice(&shape[1..=dim]);
    Ok((shape[0], ext))
}

fn geom(dim: usize, kernel: usize, stride: usize, batch: usize, hi: [usize; 3], c: usize) -> Geom {
    let mut k = [1usize; 3];
    let mut s = [1usize; 3];
    let mut pad = [0usize; 3];
    let mut lo = hi;
    for a in 0..dim {
        k[a] = kernel;
        s[a] = stride;
        pad[a] = kernel.saturating_sub(stride) / 2;
        lo[a] = hi[a] / stride;
    }
    Geom { batch, hi, lo, k, s, pad, c }
}

fn shape_of(batch: usize, ext: [usize; 3], dim: usize, c: usize) -> Vec<usize> {
    let mut s = vec![batch];
    s.extend_from_slice(&ext[..dim]);
    s.push(c);
    s
}

fn add_bias<T: Scalar>(data: &mut [T], bias: &[T]) {
    let c = bias.len();
    for row in data.chunks_exact_mut(c) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

fn bias_grad<T: Scalar>(dy: &[T], grad: &mut [T]) {
    let c = grad.len();
    for row in dy.chunks_exact(c) {
        for (g, v) in grad.iter_mut().zip(row) {
            *g += *v;
        }
    }
}

/// Strided convolution: high resolution in, low resolution out.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub dim: usize,
    pub kernel: usize,
    pub stride: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// `[kernel^dim * c_in, c_out]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    geom: Geom,
    cols: Vec<T>,
}

impl<T: Scalar> Conv<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, kernel: usize, stride: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let window = kernel.pow(dim as u32);
        let weight = glorot(&[window * c_in, c_out], window * c_in, window * c_out, rng);
        Self { dim, kernel, stride, c_in, c_out, weight, bias: Param::zeros(&[c_out]) }
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<Geom> {
        let (batch, hi) = spatial(&x.shape, self.dim, self.c_in, "conv")?;
        for &e in &hi[..self.dim] {
            if e % self.stride != 0 {
                return shape_err(format!("conv: extent {e} not divisible by stride {}", self.stride));
            }
        }
        Ok(geom(self.dim, self.kernel, self.stride, batch, hi, self.c_in))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let g = self.geometry(x)?;
        let cols = g.im2col(&x.data);
        let mut out = vec![T::zero(); g.rows() * self.c_out];
        gemm(false, false, g.rows(), self.c_out, g.cols(), T::one(), &cols, &self.weight.value.data, T::zero(), &mut out);
        add_bias(&mut out, &self.bias.value.data);
        let y = Tensor::from_vec(&shape_of(g.batch, g.lo, self.dim, self.c_out), out)?;
        Ok((y, ConvCache { geom: g, cols }))
    }

    pub fn backward(&mut self, cache: &ConvCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = &cache.geom;
        if dy.len() != g.rows() * self.c_out {
            return shape_err("conv backward: gradient shape mismatch");
        }
        gemm(true, false, g.cols(), self.c_out, g.rows(), T::one(), &cache.cols, &dy.data, T::one(), &mut self.weight.grad.data);
        bias_grad(&dy.data, &mut self.bias.grad.data);
        let mut dcols = vec![T::zero(); g.rows() * g.cols()];
        gemm(false, true, g.rows(), g.cols(), self.c_out, T::one(), &dy.data, &self.weight.value.data, T::zero(), &mut dcols);
        Tensor::from_vec(&shape_of(g.batch, g.hi, self.dim, self.c_in), g.col2im(&dcols))
    }
}

/// Strided transposed convolution: low resolution in, high resolution out.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTransposed<T> {
    pub dim: usize,
    pub kernel: usize,
    pub stride: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// `[kernel^dim * c_out, c_in]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug, Clone)]
pub struct ConvTransposedCache<T> {
    geom: Geom,
    input: Vec<T>,
}

impl<T: Scalar> ConvTransposed<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, kernel: usize, stride: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let window = kernel.pow(dim as u32);
        // stored c_in x (window * c_out) so the forward product needs no transpose
        let weight = glorot(&[c_in, window * c_out], window * c_in, window * c_out, rng);
        Self { dim, kernel, stride, c_in, c_out, weight, bias: Param::zeros(&[c_out]) }
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<Geom> {
        let (batch, lo) = spatial(&x.shape, self.dim, self.c_in, "conv_transposed")?;
        let mut hi = lo;
        for a in 0..self.dim {
            hi[a] = lo[a] * self.stride;
        }
        Ok(geom(self.dim, self.kernel, self.stride, batch, hi, self.c_out))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvTransposedCache<T>)> {
        let g = self.geometry(x)?;
        let mut cols = vec![T::zero(); g.rows() * g.cols()];
        gemm(false, false, g.rows(), g.cols(), self.c_in, T::one(), &x.data, &self.weight.value.data, T::zero(), &mut cols);
        let mut out = g.col2im(&cols);
        add_bias(&mut out, &self.bias.value.data);
        let y = Tensor::from_vec(&shape_of(g.batch, g.hi, self.dim, self.c_out), out)?;
        Ok((y, ConvTransposedCache { geom: g, input: x.data.clone() }))
    }

    pub fn backward(&mut self, cache: &ConvTransposedCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = &cache.geom;
        if dy.len() != g.batch * g.hi.iter().product::<usize>() * self.c_out {
            return shape_err("conv_transposed backward: gradient shape mismatch");
        }
        bias_grad(&dy.data, &mut self.bias.grad.data);
        let dcols = g.im2col(&dy.data);
        gemm(true, false, self.c_in, g.cols(), g.rows(), T::one(), &cache.input, &dcols, T::one(), &mut self.weight.grad.data);
        let mut dx = vec![T::zero(); g.rows() * self.c_in];
        gemm(false, true, g.rows(), self.c_in, g.cols(), T::one(), &dcols, &self.weight.value.data, T::zero(), &mut dx);
        Tensor::from_vec(&shape_of(g.batch, g.lo, self.dim, self.c_in), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_1x1_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv::<f64>::new(2, 1, 1, 3, 3, &mut rng);
        let mut convt = ConvTransposed::<f64>::new(2, 1, 1, 3, 3, &mut rng);
        for (i, w) in conv.weight.value.data.iter_mut().enumerate() {
            *w = if i / 3 == i % 3 { 1.0 } else { 0.0 };
        }
        convt.weight.value = conv.weight.value.clone();
        let x = random(&[2, 4, 4, 3], &mut rng);
        assert_eq!(conv.forward(&x).unwrap().0, x);
        assert_eq!(convt.forward(&x).unwrap().0, x);
    }

    #[test]
    fn stride_two_halves_and_doubles_extents() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv::<f32>::new(2, 4, 2, 1, 2, &mut rng);
        let y = conv.forward(&Tensor::zeros(&[1, 64, 64, 1])).unwrap().0;
        assert_eq!(y.shape, vec![1, 32, 32, 2]);
        let convt = ConvTransposed::<f32>::new(2, 4, 2, 2, 1, &mut rng);
        let z = convt.forward(&Tensor::zeros(&[1, 32, 32, 2])).unwrap().0;
        assert_eq!(z.shape, vec![1, 64, 64, 1]);
        let c3 = Conv::<f32>::new(3, 2, 2, 1, 4, &mut rng);
        assert_eq!(c3.forward(&Tensor::zeros(&[1, 8, 8, 8, 1])).unwrap().0.shape, vec![1, 4, 4, 4, 4]);
    }

    #[test]
    fn indivisible_extent_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv::<f32>::new(2, 2, 2, 1, 1, &mut rng);
        assert!(conv.forward(&Tensor::zeros(&[1, 5, 4, 1])).is_err());
    }

    /// Nested-loop cross-correlation with the documented padding.
    fn brute(x: &Tensor<f64>, w: &[f64], b: &[f64], k: usize, s: usize, c_in: usize, c_out: usize) -> Vec<f64> {
        let (n, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
        let pad = (k - s) / 2;
        let (oh, ow) = (h / s, wd / s);
        let mut out = vec![0.0; n * oh * ow * c_out];
        for bi in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..c_out {
                        let mut acc = b[co];
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - pad as isize;
                                let ix = (ox * s + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    let xv = x.data[((bi * h + iy as usize) * wd + ix as usize) * c_in + ci];
                                    let wv = w[((ky * k + kx) * c_in + ci) * c_out + co];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((bi * oh + oy) * ow + ox) * c_out + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (k, s) in [(4, 2), (2, 2), (3, 1)] {
            let mut conv = Conv::<f64>::new(2, k, s, 2, 3, &mut rng);
            conv.bias.value = random(&[3], &mut rng);
            let x = random(&[2, 6, 6, 2], &mut rng);
            let y = conv.forward(&x).unwrap().0;
            let want = brute(&x, &conv.weight.value.data, &conv.bias.value.data, k, s, 2, 3);
            for (a, b) in y.data.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k{k} s{s}");
            }
        }
    }

    #[test]
    fn transposed_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (dim, k, s) in [(2, 4, 2), (2, 2, 2), (3, 4, 2), (3, 2, 2)] {
            let conv = Conv::<f64>::new(dim, k, s, 3, 2, &mut rng);
            let mut convt = ConvTransposed::<f64>::new(dim, k, s, 2, 3, &mut rng);
            let (rows, cols) = (conv.weight.value.shape[0], conv.weight.value.shape[1]);
            for r in 0..rows {
                for c in 0..cols {
                    convt.weight.value.data[c * rows + r] = conv.weight.value.data[r * cols + c];
                }
            }
            let hi: Vec<usize> = std::iter::once(2).chain(std::iter::repeat(4).take(dim)).chain([3]).collect();
            let lo: Vec<usize> = std::iter::once(2).chain(std::iter::repeat(4 / s).take(dim)).chain([2]).collect();
            let x = random(&hi, &mut rng);
            let y = random(&lo, &mut rng);
            let cx = conv.forward(&x).unwrap().0;
            let cty = convt.forward(&y).unwrap().0;
            let lhs = cx.dot(&y);
            let rhs = x.dot(&cty);
            assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
        }
    }
}
