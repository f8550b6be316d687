use rand_chacha::ChaCha8Rng;

use super::{Parameterized, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fully connected layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    /// Weights and biases uniform in `±1/√in`.
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            w: Tensor::uniform(&[output, input], bound, rng),
            b: Tensor::uniform(&[output], bound, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[0]
    }

    fn check(&self, x: &[T], n: usize) -> Result<()> {
        if x.len() != n * self.input_dim() {
            return Err(Error::shape(format!(
                "dense expects {n}x{} inputs, got {} values",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// `x` is `n × in`, result `n × out`.
    pub fn forward(&self, x: &[T], n: usize) -> Result<Vec<T>> {
        self.check(x, n)?;
        let (i, o) = (self.input_dim(), self.output_dim());
        let mut y: Vec<T> = (0..n).flat_map(|_| self.b.data().iter().copied()).collect();
        T::gemm(n, i, o, T::one(), x, (i as isize, 1), self.w.data(), (1, i as isize), T::one(), &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad`; returns `dx` when asked.
    pub fn backward(&self, x: &[T], dy: &[T], n: usize, grad: &mut Self, want_dx: bool) -> Result<Option<Vec<T>>> {
        self.check(x, n)?;
        let (i, o) = (self.input_dim(), self.output_dim());
        if dy.len() != n * o {
            return Err(Error::shape("dense output gradient has the wrong length"));
        }
        T::gemm(o, n, i, T::one(), dy, (1, o as isize), x, (i as isize, 1), T::one(), grad.w.data_mut());
        let db = grad.b.data_mut();
        for row in dy.chunks_exact(o) {
            for (g, &d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        if !want_dx {
            return Ok(None);
        }
        let mut dx = vec![T::zero(); n * i];
        T::gemm(n, o, i, T::one(), dy, (o as isize, 1), self.w.data(), (i as isize, 1), T::zero(), &mut dx);
        Ok(Some(dx))
    }
}

impl<T: Scalar> Parameterized<T> for Dense<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w, &mut self.b]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["w".into(), "b".into()]
    }
}

/// Output columns `x0..x1` whose source column `x + off` lies in `0..w`.
fn overlap(off: isize, w: usize) -> Option<(usize, usize)> {
    let x0 = (-off).max(0);
    let x1 = (w as isize - off).min(w as isize);
    (x0 < x1).then_some((x0 as usize, x1 as usize))
}

/// Stride-1 "same" cross-correlation over `channels × height × width`
/// inputs with zero padding. Kernels stored `out × in × kh × kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, kh: usize, kw: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::check_kernel(kh, kw)?;
        let bound = 1.0 / ((cin * kh * kw).max(1) as f64).sqrt();
        Ok(Self {
            w: Tensor::uniform(&[cout, cin, kh, kw], bound, rng),
            b: Tensor::uniform(&[cout], bound, rng),
        })
    }

    pub fn from_params(w: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        if w.shape().len() != 4 || b.shape() != [w.shape()[0]] {
            return Err(Error::shape("conv kernel must be out x in x kh x kw with out biases"));
        }
        Self::check_kernel(w.shape()[2], w.shape()[3])?;
        Ok(Self { w, b })
    }

    fn check_kernel(kh: usize, kw: usize) -> Result<()> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!("kernel dims must be odd, got {kh}x{kw}")));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }

    fn kernel(&self) -> (usize, usize) {
        (self.w.shape()[2], self.w.shape()[3])
    }

    fn check(&self, x: &[T], h: usize, w: usize) -> Result<()> {
        if x.len() != self.in_channels() * h * w {
            return Err(Error::shape(format!(
                "conv expects {}x{h}x{w} input, got {} values",
                self.in_channels(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Patch matrix `(cin·kh·kw) × (h·w)`.
    fn im2col(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let (kh, kw) = self.kernel();
        let (ph, pw) = (kh / 2, kw / 2);
        let hw = h * w;
        let mut cols = vec![T::zero(); self.in_channels() * kh * kw * hw];
        for c in 0..self.in_channels() {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &mut cols[((c * kh + ky) * kw + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst = &mut row[y * w..(y + 1) * w];
                        let off = kx as isize - pw as isize;
                        let Some((x0, x1)) = overlap(off, w) else { continue };
                        dst[x0..x1].copy_from_slice(&src[(x0 as isize + off) as usize..(x1 as isize + off) as usize]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize) -> Vec<T> {
        let (kh, kw) = self.kernel();
        let (ph, pw) = (kh / 2, kw / 2);
        let hw = h * w;
        let mut x = vec![T::zero(); self.in_channels() * hw];
        for c in 0..self.in_channels() {
            let plane = &mut x[c * hw..(c + 1) * hw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &cols[((c * kh + ky) * kw + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let off = kx as isize - pw as isize;
                        let Some((x0, x1)) = overlap(off, w) else { continue };
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        for xx in x0..x1 {
                            dst[(xx as isize + off) as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
        x
    }

    /// `x` is `cin × h × w`, result `cout × h × w`.
    pub fn forward(&self, x: &[T], h: usize, w: usize) -> Result<Vec<T>> {
        self.check(x, h, w)?;
        let hw = h * w;
        let k = self.w.len() / self.out_channels();
        let cols = self.im2col(x, h, w);
        let mut y: Vec<T> = self
            .b
            .data()
            .iter()
            .flat_map(|&b| std::iter::repeat(b).take(hw))
            .collect();
        T::gemm(
            self.out_channels(),
            k,
            hw,
            T::one(),
            self.w.data(),
            (k as isize, 1),
            &cols,
            (hw as isize, 1),
            T::one(),
            &mut y,
        );
        Ok(y)
    }

    pub fn backward(&self, x: &[T], dy: &[T], h: usize, w: usize, grad: &mut Self, want_dx: bool) -> Result<Option<Vec<T>>> {
        self.check(x, h, w)?;
        let hw = h * w;
        let cout = self.out_channels();
        if dy.len() != cout * hw {
            return Err(Error::shape("conv output gradient has the wrong length"));
        }
        let k = self.w.len() / cout;
        let cols = self.im2col(x, h, w);
        T::gemm(cout, hw, k, T::one(), dy, (hw as isize, 1), &cols, (1, hw as isize), T::one(), grad.w.data_mut());
        for (g, row) in grad.b.data_mut().iter_mut().zip(dy.chunks_exact(hw)) {
            *g += row.iter().copied().sum::<T>();
        }
        if !want_dx {
            return Ok(None);
        }
        let mut dcols = vec![T::zero(); k * hw];
        T::gemm(k, cout, hw, T::one(), self.w.data(), (1, k as isize), dy, (hw as isize, 1), T::zero(), &mut dcols);
        Ok(Some(self.col2im(&dcols, h, w)))
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w, &mut self.b]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["w".into(), "b".into()]
    }
}

/// Output dims of [`avgpool2`]: odd sizes round up.
pub fn pooled_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

/// Non-overlapping 2×2 mean per channel. Odd trailing rows/columns are
/// padded by replicating the edge, so their window averages the edge value
/// with itself.
pub fn avgpool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = pooled_dims(h, w);
    let q = T::of(0.25);
    let mut y = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut y[ch * oh * ow..(ch + 1) * oh * ow];
        for i in 0..oh {
            let (r0, r1) = (2 * i, (2 * i + 1).min(h - 1));
            for j in 0..ow {
                let (c0, c1) = (2 * j, (2 * j + 1).min(w - 1));
                dst[i * ow + j] = q * (src[r0 * w + c0] + src[r0 * w + c1] + src[r1 * w + c0] + src[r1 * w + c1]);
            }
        }
    }
    y
}

pub fn avgpool2_backward<T: Scalar>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = pooled_dims(h, w);
    let q = T::of(0.25);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let src = &dy[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            let (r0, r1) = (2 * i, (2 * i + 1).min(h - 1));
            for j in 0..ow {
                let (c0, c1) = (2 * j, (2 * j + 1).min(w - 1));
                let g = q * src[i * ow + j];
                dst[r0 * w + c0] += g;
                dst[r0 * w + c1] += g;
                dst[r1 * w + c0] += g;
                dst[r1 * w + c1] += g;
            }
        }
    }
    dx
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` by the forward output `y` (gradient 0 at and below zero).
pub fn relu_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}
