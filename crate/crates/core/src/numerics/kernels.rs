//! Forward and adjoint kernels for the tape primitives.
//!
//! Everything here works on raw row-major buffers; shape validation happens in
//! the tape layer before a kernel is called.

use crate::error::{Error, Result};

use super::Tensor;

// ── broadcasting ────────────────────────────────────────────────────────

/// Right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out_shape`, the flat index of the broadcast
/// source with shape `in_shape`.
pub(crate) fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..in_shape.len()).rev() {
        if in_shape[i] != 1 {
            strides[i + pad] = s;
        }
        s *= in_shape[i];
    }
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..numel {
        map.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

pub(crate) fn binary(
    a: &Tensor,
    b: &Tensor,
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if a.shape() == b.shape() {
        return a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
    }
    let ma = broadcast_map(a.shape(), out_shape);
    let mb = broadcast_map(b.shape(), out_shape);
    ma.iter()
        .zip(&mb)
        .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
        .collect()
}

/// Sums an output-shaped gradient back onto a broadcast source shape.
pub(crate) fn reduce_to(grad: &[f64], out_shape: &[usize], in_shape: &[usize]) -> Vec<f64> {
    let n_in: usize = in_shape.iter().product();
    if out_shape == in_shape {
        return grad.to_vec();
    }
    let map = broadcast_map(in_shape, out_shape);
    let mut acc = vec![0.0; n_in];
    for (g, &i) in grad.iter().zip(&map) {
        acc[i] += g;
    }
    acc
}

// ── matmul ──────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl MatmulDims {
    pub fn resolve(a: &[usize], b: &[usize]) -> Result<Self> {
        let err = || Error::shape("matmul", format!("{a:?} x {b:?}"));
        if !(2..=3).contains(&a.len()) || !(2..=3).contains(&b.len()) {
            return Err(err());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let batch = match (a.len(), b.len()) {
            (3, 3) if a[0] != b[0] => return Err(err()),
            (3, _) => a[0],
            (_, 3) => b[0],
            _ => 1,
        };
        Ok(MatmulDims {
            batch,
            a_batched: a.len() == 3,
            b_batched: b.len() == 3,
            m,
            k,
            n,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        if self.a_batched || self.b_batched {
            vec![self.batch, self.m, self.n]
        } else {
            vec![self.m, self.n]
        }
    }
}

/// `out += a · b` for one `m×k` by `k×n` block.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m×k`, `b: n×k`.
fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += aᵀ · b` with `a: m×k`, `b: m×n`, `out: k×n`.
fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], d: MatmulDims) -> Vec<f64> {
    let (m, k, n) = (d.m, d.k, d.n);
    let mut out = vec![0.0; d.batch * m * n];
    for bi in 0..d.batch {
        let ao = if d.a_batched { bi * m * k } else { 0 };
        let bo = if d.b_batched { bi * k * n } else { 0 };
        gemm_acc(
            &a[ao..ao + m * k],
            &b[bo..bo + k * n],
            &mut out[bi * m * n..(bi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    out
}

pub(crate) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    g: &[f64],
    d: MatmulDims,
) -> (Vec<f64>, Vec<f64>) {
    let (m, k, n) = (d.m, d.k, d.n);
    let mut ga = vec![0.0; if d.a_batched { d.batch } else { 1 } * m * k];
    let mut gb = vec![0.0; if d.b_batched { d.batch } else { 1 } * k * n];
    for bi in 0..d.batch {
        let ao = if d.a_batched { bi * m * k } else { 0 };
        let bo = if d.b_batched { bi * k * n } else { 0 };
        let gblk = &g[bi * m * n..(bi + 1) * m * n];
        gemm_nt_acc(gblk, &b[bo..bo + k * n], &mut ga[ao..ao + m * k], m, n, k);
        gemm_tn_acc(&a[ao..ao + m * k], gblk, &mut gb[bo..bo + k * n], m, k, n);
    }
    (ga, gb)
}

// ── axis helpers ────────────────────────────────────────────────────────

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn transpose_last(x: &[f64], shape: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let batch: usize = shape[..r - 2].iter().product();
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let o = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[o + j * rows + i] = x[o + i * cols + j];
            }
        }
    }
    out
}

// ── row-wise normalizers ────────────────────────────────────────────────

pub(crate) fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

pub(crate) fn softmax_rows_backward(y: &[f64], g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for ((yr, gr), or) in y.chunks(cols).zip(g.chunks(cols)).zip(out.chunks_mut(cols)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    out
}

/// Normalizes each row to zero mean and unit variance. Returns the
/// normalized values and the per-row `1/sqrt(var + eps)`.
pub(crate) fn layer_norm_rows(x: &[f64], cols: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / cols);
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mean = src.iter().sum::<f64>() / cols as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let denom = var + eps;
        let inv = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * inv;
        }
        inv_std.push(inv);
    }
    (out, inv_std)
}

pub(crate) fn layer_norm_rows_backward(
    xhat: &[f64],
    inv_std: &[f64],
    g: &[f64],
    cols: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; xhat.len()];
    let c = cols as f64;
    for (r, ((xr, gr), or)) in xhat
        .chunks(cols)
        .zip(g.chunks(cols))
        .zip(out.chunks_mut(cols))
        .enumerate()
    {
        let mean_g = gr.iter().sum::<f64>() / c;
        let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c;
        for ((o, &gv), &xv) in or.iter_mut().zip(gr).zip(xr) {
            *o = inv_std[r] * (gv - mean_g - xv * mean_gx);
        }
    }
    out
}

// ── dilated temporal convolution ────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub nodes: usize,
    pub t_in: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvDims {
    pub fn span(&self) -> usize {
        self.dilation * (self.kernel - 1)
    }

    pub fn t_out(&self) -> usize {
        self.t_in - self.span()
    }
}

/// `y[b,o,n,t] = Σ_c Σ_s w[o,c,s] · x[b,c,n, t + span − dilation·s]`, which is
/// the causal dilated filter evaluated at input time `t + span`.
pub(crate) fn conv_time(x: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let t_out = d.t_out();
    let span = d.span();
    let mut y = vec![0.0; d.batch * d.c_out * d.nodes * t_out];
    for b in 0..d.batch {
        for o in 0..d.c_out {
            for c in 0..d.c_in {
                for s in 0..d.kernel {
                    let wv = w[(o * d.c_in + c) * d.kernel + s];
                    let shift = span - d.dilation * s;
                    for n in 0..d.nodes {
                        let xo = ((b * d.c_in + c) * d.nodes + n) * d.t_in + shift;
                        let yo = ((b * d.c_out + o) * d.nodes + n) * t_out;
                        let xs = &x[xo..xo + t_out];
                        for (yv, &xv) in y[yo..yo + t_out].iter_mut().zip(xs) {
                            *yv += wv * xv;
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv_time_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: ConvDims,
) -> (Vec<f64>, Vec<f64>) {
    let t_out = d.t_out();
    let span = d.span();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for b in 0..d.batch {
        for o in 0..d.c_out {
            for c in 0..d.c_in {
                for s in 0..d.kernel {
                    let wi = (o * d.c_in + c) * d.kernel + s;
                    let wv = w[wi];
                    let shift = span - d.dilation * s;
                    let mut acc = 0.0;
                    for n in 0..d.nodes {
                        let xo = ((b * d.c_in + c) * d.nodes + n) * d.t_in + shift;
                        let go = ((b * d.c_out + o) * d.nodes + n) * t_out;
                        let gs = &g[go..go + t_out];
                        for (i, &gv) in gs.iter().enumerate() {
                            acc += gv * x[xo + i];
                            gx[xo + i] += gv * wv;
                        }
                    }
                    gw[wi] += acc;
                }
            }
        }
    }
    (gx, gw)
}

// ── 1×1 channel map ─────────────────────────────────────────────────────

/// `y[b,o,·] = Σ_c w[o,c] · x[b,c,·]` for `x: B×C_in×inner`.
pub(crate) fn channel_map(
    w: &[f64],
    x: &[f64],
    batch: usize,
    c_in: usize,
    c_out: usize,
    inner: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * c_out * inner];
    for b in 0..batch {
        gemm_acc(
            w,
            &x[b * c_in * inner..(b + 1) * c_in * inner],
            &mut y[b * c_out * inner..(b + 1) * c_out * inner],
            c_out,
            c_in,
            inner,
        );
    }
    y
}

pub(crate) fn channel_map_backward(
    w: &[f64],
    x: &[f64],
    g: &[f64],
    batch: usize,
    c_in: usize,
    c_out: usize,
    inner: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; w.len()];
    let mut gx = vec![0.0; x.len()];
    for b in 0..batch {
        let xs = &x[b * c_in * inner..(b + 1) * c_in * inner];
        let gs = &g[b * c_out * inner..(b + 1) * c_out * inner];
        gemm_nt_acc(gs, xs, &mut gw, c_out, inner, c_in);
        gemm_tn_acc(
            w,
            gs,
            &mut gx[b * c_in * inner..(b + 1) * c_in * inner],
            c_out,
            c_in,
            inner,
        );
    }
    (gw, gx)
}

// ── node-axis propagation ───────────────────────────────────────────────

/// `y[b,c,i,t] = Σ_j P[(b),i,j] · x[b,c,j,t]` with `P` either shared (`N×N`)
/// or per sample (`B×N×N`).
pub(crate) fn propagate(
    p: &[f64],
    p_batched: bool,
    x: &[f64],
    batch: usize,
    channels: usize,
    nodes: usize,
    time: usize,
) -> Vec<f64> {
    let blk = nodes * time;
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        let po = if p_batched { b * nodes * nodes } else { 0 };
        let pm = &p[po..po + nodes * nodes];
        for c in 0..channels {
            let o = (b * channels + c) * blk;
            gemm_acc(pm, &x[o..o + blk], &mut y[o..o + blk], nodes, nodes, time);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn propagate_backward(
    p: &[f64],
    p_batched: bool,
    x: &[f64],
    g: &[f64],
    batch: usize,
    channels: usize,
    nodes: usize,
    time: usize,
) -> (Vec<f64>, Vec<f64>) {
    let blk = nodes * time;
    let mut gp = vec![0.0; p.len()];
    let mut gx = vec![0.0; x.len()];
    for b in 0..batch {
        let po = if p_batched { b * nodes * nodes } else { 0 };
        let pm = &p[po..po + nodes * nodes];
        for c in 0..channels {
            let o = (b * channels + c) * blk;
            let gs = &g[o..o + blk];
            gemm_nt_acc(
                gs,
                &x[o..o + blk],
                &mut gp[po..po + nodes * nodes],
                nodes,
                time,
                nodes,
            );
            gemm_tn_acc(pm, gs, &mut gx[o..o + blk], nodes, nodes, time);
        }
    }
    (gp, gx)
}

// ── pairwise squared distances ──────────────────────────────────────────

/// `y[b,i,j] = ‖x[b,i,·] − x[b,j,·]‖²` for `x: B×N×h`.
pub(crate) fn pairwise_sq_dist(x: &[f64], batch: usize, nodes: usize, len: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * nodes * nodes];
    for b in 0..batch {
        let xb = &x[b * nodes * len..(b + 1) * nodes * len];
        for i in 0..nodes {
            for j in 0..nodes {
                let xi = &xb[i * len..(i + 1) * len];
                let xj = &xb[j * len..(j + 1) * len];
                y[(b * nodes + i) * nodes + j] =
                    xi.iter().zip(xj).map(|(a, c)| (a - c) * (a - c)).sum();
            }
        }
    }
    y
}

pub(crate) fn pairwise_sq_dist_backward(
    x: &[f64],
    g: &[f64],
    batch: usize,
    nodes: usize,
    len: usize,
) -> Vec<f64> {
    let mut gx = vec![0.0; x.len()];
    for b in 0..batch {
        for i in 0..nodes {
            for j in 0..nodes {
                let w = 2.0 * g[(b * nodes + i) * nodes + j];
                if w == 0.0 {
                    continue;
                }
                for t in 0..len {
                    let xi = (b * nodes + i) * len + t;
                    let xj = (b * nodes + j) * len + t;
                    let diff = x[xi] - x[xj];
                    gx[xi] += w * diff;
                    gx[xj] -= w * diff;
                }
            }
        }
    }
    gx
}
