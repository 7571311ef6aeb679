//! Gated recurrent unit with explicit backward pass.
//!
//! Parameters per cell (stacked gate order z, r, n):
//! `w` is `[3H, In]`, `u` is `[3H, H]`, `b` is `[3H]`.
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)
//! r  = sigmoid(Wr x + Ur h + br)
//! n  = tanh(Wn x + Un (r * h) + bn)
//! h' = (1 - z) * n + z * h
//! ```

use super::params::ParamStore;
use super::tensor::Matrix;
use crate::scalar::{axpy, dot, sigmoid, Scalar};
use crate::{Error, Result};

/// Borrowed view of one cell's weights.
pub struct GruWeights<'a, T> {
    pub w: &'a [T],
    pub u: &'a [T],
    pub b: &'a [T],
    pub input: usize,
    pub hidden: usize,
}

impl<'a, T: Scalar> GruWeights<'a, T> {
    pub fn from_params(params: &'a ParamStore<T>, prefix: &str) -> Result<Self> {
        let w = params.get(&format!("{prefix}.w"))?;
        let u = params.get(&format!("{prefix}.u"))?;
        let b = params.get(&format!("{prefix}.b"))?;
        let hidden = u.cols();
        let input = w.cols();
        if w.shape != [3 * hidden, input] || u.shape != [3 * hidden, hidden] || b.len() != 3 * hidden
        {
            return Err(Error::Param(format!("{prefix}: inconsistent GRU shapes")));
        }
        Ok(GruWeights {
            w: &w.data,
            u: &u.data,
            b: &b.data,
            input,
            hidden,
        })
    }

    #[inline]
    fn w_row(&self, j: usize) -> &[T] {
        &self.w[j * self.input..(j + 1) * self.input]
    }

    #[inline]
    fn u_row(&self, j: usize) -> &[T] {
        &self.u[j * self.hidden..(j + 1) * self.hidden]
    }
}

/// Gradient buffers matching one cell.
pub struct GruGrads<T> {
    pub w: Vec<T>,
    pub u: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> GruGrads<T> {
    pub fn new(input: usize, hidden: usize) -> Self {
        GruGrads {
            w: vec![T::zero(); 3 * hidden * input],
            u: vec![T::zero(); 3 * hidden * hidden],
            b: vec![T::zero(); 3 * hidden],
        }
    }

    /// Add the buffers into `grads` under `prefix`.
    pub fn flush(self, grads: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        for (suffix, buf) in [("w", self.w), ("u", self.u), ("b", self.b)] {
            let t = grads.get_mut(&format!("{prefix}.{suffix}"))?;
            for (g, v) in t.data.iter_mut().zip(buf) {
                *g += v;
            }
        }
        Ok(())
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache<T> {
    pub z: Vec<T>,
    pub r: Vec<T>,
    pub n: Vec<T>,
}

/// One forward step. Returns the new state and the step cache.
pub fn gru_step<T: Scalar>(wt: &GruWeights<T>, x: &[T], h: &[T]) -> (Vec<T>, GruStepCache<T>) {
    let hd = wt.hidden;
    let mut z = vec![T::zero(); hd];
    let mut r = vec![T::zero(); hd];
    let mut n = vec![T::zero(); hd];
    for j in 0..hd {
        z[j] = sigmoid(wt.b[j] + dot(wt.w_row(j), x) + dot(wt.u_row(j), h));
        let k = hd + j;
        r[j] = sigmoid(wt.b[k] + dot(wt.w_row(k), x) + dot(wt.u_row(k), h));
    }
    let rh: Vec<T> = r.iter().zip(h).map(|(a, b)| *a * *b).collect();
    for j in 0..hd {
        let k = 2 * hd + j;
        n[j] = (wt.b[k] + dot(wt.w_row(k), x) + dot(wt.u_row(k), &rh)).tanh();
    }
    let out = (0..hd)
        .map(|j| (T::one() - z[j]) * n[j] + z[j] * h[j])
        .collect();
    (out, GruStepCache { z, r, n })
}

/// Backward through one step given `dh` w.r.t. the step output.
/// Accumulates weight gradients and returns `(dx, dh_prev)`.
pub fn gru_step_backward<T: Scalar>(
    wt: &GruWeights<T>,
    x: &[T],
    h: &[T],
    cache: &GruStepCache<T>,
    dh: &[T],
    grads: &mut GruGrads<T>,
) -> (Vec<T>, Vec<T>) {
    let hd = wt.hidden;
    let (z, r, n) = (&cache.z, &cache.r, &cache.n);
    let mut dh_prev = vec![T::zero(); hd];
    let mut dax = vec![T::zero(); 3 * hd];
    let mut dr = vec![T::zero(); hd];
    for j in 0..hd {
        let dn = dh[j] * (T::one() - z[j]);
        let dz = dh[j] * (h[j] - n[j]);
        dh_prev[j] = dh[j] * z[j];
        dax[2 * hd + j] = dn * (T::one() - n[j] * n[j]);
        dax[j] = dz * z[j] * (T::one() - z[j]);
    }
    // candidate: a_n = ... + Un (r*h)
    let rh: Vec<T> = r.iter().zip(h).map(|(a, b)| *a * *b).collect();
    let mut drh = vec![T::zero(); hd];
    for j in 0..hd {
        let k = 2 * hd + j;
        let g = dax[k];
        axpy(g, &rh, &mut grads.u[k * hd..(k + 1) * hd]);
        axpy(g, wt.u_row(k), &mut drh);
    }
    for j in 0..hd {
        dr[j] = drh[j] * h[j];
        dh_prev[j] += drh[j] * r[j];
        dax[hd + j] = dr[j] * r[j] * (T::one() - r[j]);
    }
    for k in 0..2 * hd {
        let g = dax[k];
        axpy(g, h, &mut grads.u[k * hd..(k + 1) * hd]);
        axpy(g, wt.u_row(k), &mut dh_prev);
    }
    let mut dx = vec![T::zero(); wt.input];
    for k in 0..3 * hd {
        let g = dax[k];
        grads.b[k] += g;
        axpy(g, x, &mut grads.w[k * wt.input..(k + 1) * wt.input]);
        axpy(g, wt.w_row(k), &mut dx);
    }
    (dx, dh_prev)
}

/// Forward cache of a full (single-direction) pass.
pub struct GruTrace<T> {
    reverse: bool,
    /// States in processing order; index 0 is the zero initial state.
    states: Vec<Vec<T>>,
    caches: Vec<GruStepCache<T>>,
}

fn time_index(reverse: bool, len: usize, s: usize) -> usize {
    if reverse {
        len - 1 - s
    } else {
        s
    }
}

/// Run a cell over every row of `x`, right to left when `reverse`.
/// Output row `t` is the state after consuming input row `t`.
pub fn gru_forward<T: Scalar>(
    wt: &GruWeights<T>,
    x: &Matrix<T>,
    reverse: bool,
) -> (Matrix<T>, GruTrace<T>) {
    let len = x.rows();
    let mut out = Matrix::zeros(len, wt.hidden);
    let mut states = Vec::with_capacity(len + 1);
    let mut caches = Vec::with_capacity(len);
    states.push(vec![T::zero(); wt.hidden]);
    for s in 0..len {
        let t = time_index(reverse, len, s);
        let (h, cache) = gru_step(wt, x.row(t), &states[s]);
        out.row_mut(t).copy_from_slice(&h);
        states.push(h);
        caches.push(cache);
    }
    (
        out,
        GruTrace {
            reverse,
            states,
            caches,
        },
    )
}

/// Backward over a full pass; `d_out` holds gradients for every output row.
pub fn gru_backward<T: Scalar>(
    wt: &GruWeights<T>,
    x: &Matrix<T>,
    trace: &GruTrace<T>,
    d_out: &Matrix<T>,
    grads: &mut GruGrads<T>,
) -> Matrix<T> {
    let len = x.rows();
    let mut dx = Matrix::zeros(len, wt.input);
    let mut dh_next = vec![T::zero(); wt.hidden];
    for s in (0..len).rev() {
        let t = time_index(trace.reverse, len, s);
        let dh: Vec<T> = d_out
            .row(t)
            .iter()
            .zip(&dh_next)
            .map(|(a, b)| *a + *b)
            .collect();
        let (dxt, dhp) = gru_step_backward(wt, x.row(t), &trace.states[s], &trace.caches[s], &dh, grads);
        dx.row_mut(t).copy_from_slice(&dxt);
        dh_next = dhp;
    }
    dx
}
