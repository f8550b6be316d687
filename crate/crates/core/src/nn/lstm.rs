use rand_chacha::ChaCha8Rng;

use super::{Parameterized, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// LSTM layer with gates stacked in the order input, forget, cell, output:
/// `w_ih` is `4H × D`, `w_hh` is `4H × H`, `b` is `4H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b: Tensor<T>,
}

/// Activations saved by [`Lstm::forward_seq`] for backpropagation through
/// time. All buffers are time-major with `n` rows per step.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub steps: usize,
    pub n: usize,
    /// Post-activation gates `(i, f, g, o)`, `steps × n × 4H`.
    gates: Vec<T>,
    /// Cell states `c_0 … c_T`, `(steps + 1) × n × H`.
    c: Vec<T>,
    /// Hidden states `h_0 … h_T`, `(steps + 1) × n × H`.
    h: Vec<T>,
}

impl<T: Scalar> LstmCache<T> {
    pub fn last_hidden(&self, hidden: usize) -> &[T] {
        let s = self.n * hidden;
        &self.h[self.steps * s..(self.steps + 1) * s]
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Lstm<T> {
    /// All parameters uniform in `±1/√H`.
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        Self {
            w_ih: Tensor::uniform(&[4 * hidden, input], bound, rng),
            w_hh: Tensor::uniform(&[4 * hidden, hidden], bound, rng),
            b: Tensor::uniform(&[4 * hidden], bound, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    /// Pre-activations for one step, `n × 4H`.
    fn preact(&self, x: &[T], h_prev: &[T], n: usize) -> Vec<T> {
        let (d, hd) = (self.input_dim(), self.hidden());
        let g4 = 4 * hd;
        let mut z: Vec<T> = (0..n).flat_map(|_| self.b.data().iter().copied()).collect();
        T::gemm(n, d, g4, T::one(), x, (d as isize, 1), self.w_ih.data(), (1, d as isize), T::one(), &mut z);
        T::gemm(n, hd, g4, T::one(), h_prev, (hd as isize, 1), self.w_hh.data(), (1, hd as isize), T::one(), &mut z);
        z
    }

    /// Applies gate nonlinearities in place and returns `(h, c)`.
    fn activate(&self, z: &mut [T], c_prev: &[T], n: usize) -> (Vec<T>, Vec<T>) {
        let hd = self.hidden();
        let mut h = vec![T::zero(); n * hd];
        let mut c = vec![T::zero(); n * hd];
        for r in 0..n {
            let zr = &mut z[r * 4 * hd..(r + 1) * 4 * hd];
            for j in 0..hd {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[hd + j]);
                let g = zr[2 * hd + j].tanh();
                let o = sigmoid(zr[3 * hd + j]);
                zr[j] = i;
                zr[hd + j] = f;
                zr[2 * hd + j] = g;
                zr[3 * hd + j] = o;
                let cv = f * c_prev[r * hd + j] + i * g;
                c[r * hd + j] = cv;
                h[r * hd + j] = o * cv.tanh();
            }
        }
        (h, c)
    }

    fn check(&self, len: usize, rows: usize, width: usize, what: &str) -> Result<()> {
        if len != rows * width {
            return Err(Error::shape(format!("lstm {what}: expected {rows}x{width}, got {len} values")));
        }
        Ok(())
    }

    /// One cell update: `x` is `n × D`, states `n × H`.
    pub fn cell(&self, x: &[T], h_prev: &[T], c_prev: &[T], n: usize) -> Result<(Vec<T>, Vec<T>)> {
        self.check(x.len(), n, self.input_dim(), "input")?;
        self.check(h_prev.len(), n, self.hidden(), "hidden state")?;
        self.check(c_prev.len(), n, self.hidden(), "cell state")?;
        let mut z = self.preact(x, h_prev, n);
        Ok(self.activate(&mut z, c_prev, n))
    }

    /// Unrolls from zero state over `xs` (`steps × n × D`, time-major).
    pub fn forward_seq(&self, xs: &[T], steps: usize, n: usize) -> Result<LstmCache<T>> {
        if steps == 0 {
            return Err(Error::shape("lstm needs at least one time step"));
        }
        let (d, hd) = (self.input_dim(), self.hidden());
        self.check(xs.len(), steps * n, d, "sequence")?;
        let s = n * hd;
        let mut cache = LstmCache {
            steps,
            n,
            gates: Vec::with_capacity(steps * n * 4 * hd),
            c: vec![T::zero(); s],
            h: vec![T::zero(); s],
        };
        for t in 0..steps {
            let x = &xs[t * n * d..(t + 1) * n * d];
            let mut z = self.preact(x, &cache.h[t * s..(t + 1) * s], n);
            let (h, c) = self.activate(&mut z, &cache.c[t * s..(t + 1) * s], n);
            cache.gates.extend_from_slice(&z);
            cache.h.extend_from_slice(&h);
            cache.c.extend_from_slice(&c);
        }
        Ok(cache)
    }

    /// Backpropagation through time from a gradient on the last hidden
    /// state only. Returns `dxs` (time-major) when asked.
    pub fn backward_seq(
        &self,
        xs: &[T],
        cache: &LstmCache<T>,
        dh_last: &[T],
        grad: &mut Self,
        want_dx: bool,
    ) -> Result<Option<Vec<T>>> {
        let (d, hd) = (self.input_dim(), self.hidden());
        let (steps, n) = (cache.steps, cache.n);
        self.check(xs.len(), steps * n, d, "sequence")?;
        self.check(dh_last.len(), n, hd, "output gradient")?;
        let s = n * hd;
        let g4 = 4 * hd;
        let mut dh = dh_last.to_vec();
        let mut dc = vec![T::zero(); s];
        let mut dz = vec![T::zero(); n * g4];
        let mut dxs = if want_dx { vec![T::zero(); steps * n * d] } else { Vec::new() };
        for t in (0..steps).rev() {
            let gates = &cache.gates[t * n * g4..(t + 1) * n * g4];
            let c_prev = &cache.c[t * s..(t + 1) * s];
            let c_t = &cache.c[(t + 1) * s..(t + 2) * s];
            for r in 0..n {
                let gr = &gates[r * g4..(r + 1) * g4];
                let dzr = &mut dz[r * g4..(r + 1) * g4];
                for j in 0..hd {
                    let k = r * hd + j;
                    let (i, f, g, o) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
                    let tc = c_t[k].tanh();
                    let dct = dc[k] + dh[k] * o * (T::one() - tc * tc);
                    dzr[j] = dct * g * i * (T::one() - i);
                    dzr[hd + j] = dct * c_prev[k] * f * (T::one() - f);
                    dzr[2 * hd + j] = dct * i * (T::one() - g * g);
                    dzr[3 * hd + j] = dh[k] * tc * o * (T::one() - o);
                    dc[k] = dct * f;
                }
            }
            let x = &xs[t * n * d..(t + 1) * n * d];
            let h_prev = &cache.h[t * s..(t + 1) * s];
            T::gemm(g4, n, d, T::one(), &dz, (1, g4 as isize), x, (d as isize, 1), T::one(), grad.w_ih.data_mut());
            T::gemm(g4, n, hd, T::one(), &dz, (1, g4 as isize), h_prev, (hd as isize, 1), T::one(), grad.w_hh.data_mut());
            for row in dz.chunks_exact(g4) {
                for (gb, &v) in grad.b.data_mut().iter_mut().zip(row) {
                    *gb += v;
                }
            }
            if want_dx {
                T::gemm(
                    n,
                    g4,
                    d,
                    T::one(),
                    &dz,
                    (g4 as isize, 1),
                    self.w_ih.data(),
                    (d as isize, 1),
                    T::zero(),
                    &mut dxs[t * n * d..(t + 1) * n * d],
                );
            }
            T::gemm(n, g4, hd, T::one(), &dz, (g4 as isize, 1), self.w_hh.data(), (hd as isize, 1), T::zero(), &mut dh);
        }
        Ok(want_dx.then_some(dxs))
    }
}

impl<T: Scalar> Parameterized<T> for Lstm<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.w_ih, &self.w_hh, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["w_ih".into(), "w_hh".into(), "b".into()]
    }
}
