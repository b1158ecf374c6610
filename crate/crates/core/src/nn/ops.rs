//! Row-wise kernels shared by the training forward/backward pass and the
//! incremental decoder. Matrices are row-major `rows x cols` slices.

use crate::scalar::{gemm, Scalar, View, ViewMut};

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm<T: Scalar>(x: &[T], cols: usize, g: &[T], b: &[T]) -> (Vec<T>, LnCache<T>) {
    let rows = x.len() / cols;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let n = T::from_usize(cols).unwrap();
    let eps = T::from_f64_lossy(LN_EPS);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let s = T::one() / (var + eps).sqrt();
        rstd[r] = s;
        for c in 0..cols {
            let h = (row[c] - mean) * s;
            xhat[r * cols + c] = h;
            y[r * cols + c] = h * g[c] + b[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Accumulates gain/bias gradients and adds the input gradient into `dx`.
pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    g: &[T],
    dg: &mut [T],
    db: &mut [T],
    dx: &mut [T],
) {
    let cols = g.len();
    let n = T::from_usize(cols).unwrap();
    let mut dxhat = vec![T::zero(); cols];
    for r in 0..cache.rstd.len() {
        let dyr = &dy[r * cols..(r + 1) * cols];
        let xh = &cache.xhat[r * cols..(r + 1) * cols];
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for c in 0..cols {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh[c];
        }
        m1 /= n;
        m2 /= n;
        for c in 0..cols {
            dx[r * cols + c] += cache.rstd[r] * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
}

/// `x(rows x din) * w(din x dout) + b`.
pub(crate) fn linear<T: Scalar>(x: &[T], din: usize, w: &[T], b: &[T]) -> Vec<T> {
    let dout = b.len();
    let rows = x.len() / din;
    let mut y = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(rows, din, dout, T::one(), View::rows(x, 0, din), View::rows(w, 0, dout), T::one(), ViewMut::rows(&mut y, 0, dout));
    y
}

/// Accumulates `dw += x^T dy`, `db += colsum(dy)` and returns `dy w^T`.
pub(crate) fn linear_backward<T: Scalar>(x: &[T], din: usize, w: &[T], dy: &[T], dw: &mut [T], db: &mut [T]) -> Vec<T> {
    let dout = db.len();
    let rows = dy.len() / dout;
    gemm(din, rows, dout, T::one(), View::rows(x, 0, din).t(), View::rows(dy, 0, dout), T::one(), ViewMut::rows(dw, 0, dout));
    for r in 0..rows {
        for c in 0..dout {
            db[c] += dy[r * dout + c];
        }
    }
    let mut dx = vec![T::zero(); rows * din];
    gemm(rows, dout, din, T::one(), View::rows(dy, 0, dout), View::rows(w, 0, dout).t(), T::zero(), ViewMut::rows(&mut dx, 0, din));
    dx
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt()), T::from_f64_lossy(0.044715))
}

/// Tanh approximation of GELU.
pub(crate) fn gelu<T: Scalar>(u: T) -> T {
    let (k, a) = gelu_consts::<T>();
    let half = T::from_f64_lossy(0.5);
    half * u * (T::one() + (k * (u + a * u * u * u)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(u: T) -> T {
    let (k, a) = gelu_consts::<T>();
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (k * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * k * (T::one() + three * a * u * u)
}

/// In-place softmax over the first `len` entries; the rest are zeroed.
pub(crate) fn softmax_prefix<T: Scalar>(row: &mut [T], len: usize) {
    let mx = row[..len].iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in &mut row[..len] {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in &mut row[..len] {
        *v /= s;
    }
    for v in &mut row[len..] {
        *v = T::zero();
    }
}

/// Log-sum-exp of a row, in f64.
pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> f64 {
    let mx = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    mx + row.iter().map(|v| (v.as_f64() - mx).exp()).sum::<f64>().ln()
}
