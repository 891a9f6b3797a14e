//! Forward and backward kernels over batch-major `N×C×H×W` buffers.
//!
//! Work is split across threads by sample (or by fixed-size blocks of
//! rows), and partial gradient sums are reduced in a fixed order, so results
//! are bit-identical regardless of the thread count.

use rayon::prelude::*;

use crate::scalar::Real;

/// Samples per partial-gradient accumulator.
const GRAD_CHUNK: usize = 4;
/// Output rows per task in the blocked matrix products.
const ROW_BLOCK: usize = 16;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
    pub fn out_len(&self) -> usize {
        self.cout * self.ho * self.wo
    }
}

fn im2col<S: Real>(x: &[S], g: &ConvGeom, col: &mut [S]) {
    let n = g.col_cols();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { S::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<S: Real>(col: &[S], g: &ConvGeom, dx: &mut [S]) {
    let n = g.col_cols();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution + bias + ReLU. `out` receives `batch × cout × ho × wo`.
pub(crate) fn conv_forward<S: Real>(x: &[S], g: &ConvGeom, weight: &[S], bias: &[S], out: &mut [S]) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    out.par_chunks_mut(g.out_len())
        .zip(x.par_chunks(g.in_len()))
        .for_each_init(
            || vec![S::zero(); rows * cols],
            |col, (o, xb)| {
                im2col(xb, g, col);
                S::gemm(g.cout, rows, cols, S::one(), weight, (rows as isize, 1), col, (cols as isize, 1), S::zero(), o, (cols as isize, 1));
                for (c, plane) in o.chunks_mut(cols).enumerate() {
                    let b = bias[c];
                    for v in plane {
                        *v = (*v + b).max(S::zero());
                    }
                }
            },
        );
}

/// Backward through ReLU and convolution. `out` is the forward (post-ReLU)
/// output; `dout` the gradient with respect to it. Accumulates into
/// `dweight`/`dbias` and, when given, overwrites `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<S: Real>(
    x: &[S],
    out: &[S],
    dout: &[S],
    g: &ConvGeom,
    weight: &[S],
    dweight: &mut [S],
    dbias: &mut [S],
    dx: Option<&mut [S]>,
) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let batch = x.len() / g.in_len();
    let chunks: Vec<usize> = (0..batch.div_ceil(GRAD_CHUNK)).collect();

    let partial = |chunk: usize, mut dx_chunk: Option<&mut [S]>| -> (Vec<S>, Vec<S>) {
        let mut dw = vec![S::zero(); dweight.len()];
        let mut db = vec![S::zero(); dbias.len()];
        let mut col = vec![S::zero(); rows * cols];
        let mut dz = vec![S::zero(); g.out_len()];
        let lo = chunk * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(batch);
        for b in lo..hi {
            let ob = &out[b * g.out_len()..(b + 1) * g.out_len()];
            let gb = &dout[b * g.out_len()..(b + 1) * g.out_len()];
            for ((z, &o), &d) in dz.iter_mut().zip(ob).zip(gb) {
                *z = if o > S::zero() { d } else { S::zero() };
            }
            for (c, plane) in dz.chunks(cols).enumerate() {
                db[c] += plane.iter().copied().sum::<S>();
            }
            im2col(&x[b * g.in_len()..(b + 1) * g.in_len()], g, &mut col);
            S::gemm(g.cout, cols, rows, S::one(), &dz, (cols as isize, 1), &col, (1, cols as isize), S::one(), &mut dw, (rows as isize, 1));
            if let Some(dxc) = dx_chunk.as_deref_mut() {
                let dxb = &mut dxc[(b - lo) * g.in_len()..(b - lo + 1) * g.in_len()];
                S::gemm(rows, g.cout, cols, S::one(), weight, (1, rows as isize), &dz, (cols as isize, 1), S::zero(), &mut col, (cols as isize, 1));
                dxb.iter_mut().for_each(|v| *v = S::zero());
                col2im_add(&col, g, dxb);
            }
        }
        (dw, db)
    };

    let partials: Vec<(Vec<S>, Vec<S>)> = match dx {
        Some(dx) => dx
            .par_chunks_mut(GRAD_CHUNK * g.in_len())
            .zip(chunks.par_iter())
            .map(|(dxc, &c)| partial(c, Some(dxc)))
            .collect(),
        None => chunks.par_iter().map(|&c| partial(c, None)).collect(),
    };
    for (dw, db) in partials {
        dweight.iter_mut().zip(&dw).for_each(|(a, b)| *a += *b);
        dbias.iter_mut().zip(&db).for_each(|(a, b)| *a += *b);
    }
}

/// Max pooling without padding (floor mode). Returns the output and, for
/// each output cell, the flat in-plane index of the selected input.
pub(crate) fn maxpool_forward<S: Real>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
) -> (Vec<S>, Vec<u32>) {
    let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let planes = x.len() / (h * w);
    debug_assert_eq!(planes % c, 0);
    let mut out = vec![S::zero(); planes * ho * wo];
    let mut arg = vec![0u32; planes * ho * wo];
    out.par_chunks_mut(ho * wo)
        .zip(arg.par_chunks_mut(ho * wo))
        .zip(x.par_chunks(h * w))
        .for_each(|((o, a), plane)| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = S::neg_infinity();
                    let mut best_i = 0usize;
                    for ky in 0..k {
                        let row = (oy * stride + ky) * w;
                        for kx in 0..k {
                            let i = row + ox * stride + kx;
                            if plane[i] > best || (ky == 0 && kx == 0) {
                                best = plane[i];
                                best_i = i;
                            }
                        }
                    }
                    o[oy * wo + ox] = best;
                    a[oy * wo + ox] = best_i as u32;
                }
            }
        });
    (out, arg)
}

pub(crate) fn maxpool_backward<S: Real>(dout: &[S], arg: &[u32], in_plane: usize, out_plane: usize) -> Vec<S> {
    let planes = dout.len() / out_plane;
    let mut dx = vec![S::zero(); planes * in_plane];
    dx.par_chunks_mut(in_plane)
        .zip(dout.par_chunks(out_plane).zip(arg.par_chunks(out_plane)))
        .for_each(|(d, (g, a))| {
            for (&gv, &ai) in g.iter().zip(a) {
                d[ai as usize] += gv;
            }
        });
    dx
}

/// `c = a·b + beta·c` with `c` row-major `m×n`, split into fixed row blocks.
#[allow(clippy::too_many_arguments)]
fn gemm_rows<S: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    a_strides: (isize, isize),
    b: &[S],
    b_strides: (isize, isize),
    beta: S,
    c: &mut [S],
) {
    if m * k * n < (1 << 20) || m <= ROW_BLOCK {
        S::gemm(m, k, n, S::one(), a, a_strides, b, b_strides, beta, c, (n as isize, 1));
        return;
    }
    c[..m * n].par_chunks_mut(ROW_BLOCK * n).enumerate().for_each(|(blk, cb)| {
        let r0 = blk * ROW_BLOCK;
        let rows = cb.len() / n;
        let a_off = r0 * a_strides.0 as usize;
        S::gemm(rows, k, n, S::one(), &a[a_off..], a_strides, b, b_strides, beta, cb, (n as isize, 1));
    });
}

/// `y = x·Wᵀ + b`, optionally followed by ReLU. `W` is `out×in`.
pub(crate) fn linear_forward<S: Real>(
    x: &[S],
    batch: usize,
    n_in: usize,
    n_out: usize,
    weight: &[S],
    bias: &[S],
    relu: bool,
) -> Vec<S> {
    let mut y = vec![S::zero(); batch * n_out];
    gemm_rows(batch, n_in, n_out, x, (n_in as isize, 1), weight, (1, n_in as isize), S::zero(), &mut y);
    for row in y.chunks_mut(n_out) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
            if relu && *v < S::zero() {
                *v = S::zero();
            }
        }
    }
    y
}

/// Backward through an optional ReLU and a linear layer. Accumulates
/// parameter gradients; returns the input gradient when `need_dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<S: Real>(
    x: &[S],
    y: &[S],
    dy: &[S],
    batch: usize,
    n_in: usize,
    n_out: usize,
    weight: &[S],
    relu: bool,
    dweight: &mut [S],
    dbias: &mut [S],
    need_dx: bool,
) -> Option<Vec<S>> {
    let dz: Vec<S> = if relu {
        dy.iter().zip(y).map(|(&d, &o)| if o > S::zero() { d } else { S::zero() }).collect()
    } else {
        dy.to_vec()
    };
    gemm_rows(n_out, batch, n_in, &dz, (1, n_out as isize), x, (n_in as isize, 1), S::one(), dweight);
    for row in dz.chunks(n_out) {
        dbias.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    need_dx.then(|| {
        let mut dx = vec![S::zero(); batch * n_in];
        gemm_rows(batch, n_out, n_in, &dz, (n_out as isize, 1), weight, (n_in as isize, 1), S::zero(), &mut dx);
        dx
    })
}
