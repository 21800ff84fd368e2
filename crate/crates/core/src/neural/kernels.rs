//! Deterministic tensor kernels. Parallel loops split work by output plane so
//! every sum runs in a fixed order regardless of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::field::laplacian_scalar;
use crate::scalar::Scalar;

use super::tensor::{numel, Tensor};

/// Stride and zero padding per spatial axis `(D, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn out_len(&self, input: [usize; 3], kernel: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * self.pad[a];
            if span < kernel[a] || self.stride[a] == 0 {
                return dim_err(format!("kernel {:?} does not fit input {:?}", kernel, input));
            }
            out[a] = (span - kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

// Output indices `o` with `0 <= o*s + k - p < i_len`.
#[inline]
fn valid_range(o_len: usize, i_len: usize, s: usize, p: usize, k: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let top = i_len as isize - 1 + p as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / s + 1).min(o_len);
    (lo.min(hi), hi)
}

struct Plan {
    n: usize,
    ci: usize,
    co: usize,
    i: [usize; 3],
    o: [usize; 3],
    k: [usize; 3],
    g: ConvGeom,
}

impl Plan {
    fn new(x_shape: [usize; 5], w_shape: [usize; 5], g: ConvGeom) -> Result<Plan> {
        let [n, ci, d, h, w] = x_shape;
        let [co, wci, kd, kh, kw] = w_shape;
        if wci != ci {
            return dim_err(format!("conv weight expects {wci} input channels, got {ci}"));
        }
        let k = [kd, kh, kw];
        let o = g.out_len([d, h, w], k)?;
        Ok(Plan { n, ci, co, i: [d, h, w], o, k, g })
    }

    fn in_plane(&self) -> usize {
        self.i.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.o.iter().product()
    }

    // Calls `f(out_index, in_index)` for every output position touched by kernel tap `k`.
    #[inline]
    fn for_tap(&self, kz: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
        let (s, p) = (self.g.stride, self.g.pad);
        let (z0, z1) = valid_range(self.o[0], self.i[0], s[0], p[0], kz);
        let (y0, y1) = valid_range(self.o[1], self.i[1], s[1], p[1], ky);
        let (x0, x1) = valid_range(self.o[2], self.i[2], s[2], p[2], kx);
        for oz in z0..z1 {
            let iz = oz * s[0] + kz - p[0];
            for oy in y0..y1 {
                let iy = oy * s[1] + ky - p[1];
                let obase = (oz * self.o[1] + oy) * self.o[2];
                let ibase = (iz * self.i[1] + iy) * self.i[2];
                for ox in x0..x1 {
                    f(obase + ox, ibase + ox * s[2] + kx - p[2]);
                }
            }
        }
    }

    fn kvol(&self) -> usize {
        self.k.iter().product()
    }
}

impl Plan {
    // Column matrix `[ci * taps, out_plane]` of one batch item (im2col).
    fn columns<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let (ip, op, kv) = (self.in_plane(), self.out_plane(), self.kvol());
        let mut cols = vec![T::ZERO; self.ci * kv * op];
        for ci in 0..self.ci {
            let src = &x[ci * ip..][..ip];
            for kz in 0..self.k[0] {
                for ky in 0..self.k[1] {
                    for kx in 0..self.k[2] {
                        let row = (ci * kv + (kz * self.k[1] + ky) * self.k[2] + kx) * op;
                        let dst = &mut cols[row..row + op];
                        self.for_tap(kz, ky, kx, |o, i| dst[o] = src[i]);
                    }
                }
            }
        }
        cols
    }

    // Adjoint of `columns`: accumulates a column matrix back into planes.
    fn add_columns<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let (ip, op, kv) = (self.in_plane(), self.out_plane(), self.kvol());
        for ci in 0..self.ci {
            let dst = &mut x[ci * ip..][..ip];
            for kz in 0..self.k[0] {
                for ky in 0..self.k[1] {
                    for kx in 0..self.k[2] {
                        let row = (ci * kv + (kz * self.k[1] + ky) * self.k[2] + kx) * op;
                        let src = &cols[row..row + op];
                        self.for_tap(kz, ky, kx, |o, i| dst[i] += src[o]);
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * *xv;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = T::ZERO;
    for (a, b) in x.iter().zip(y) {
        acc += *a * *b;
    }
    acc
}

/// Cross-correlation `y[n,co] = sum_ci w[co,ci] * x[n,ci]` without bias.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
    let p = Plan::new(x.dims5()?, w.dims5()?, g)?;
    let (ip, op, rows) = (p.in_plane(), p.out_plane(), p.ci * p.kvol());
    let mut out = vec![T::ZERO; p.n * p.co * op];
    out.par_chunks_mut(p.co * op).enumerate().for_each(|(n, y)| {
        let cols = p.columns(&x.data[n * p.ci * ip..][..p.ci * ip]);
        for co in 0..p.co {
            let yr = &mut y[co * op..][..op];
            let wr = &w.data[co * rows..][..rows];
            for (r, &wv) in wr.iter().enumerate() {
                axpy(wv, &cols[r * op..][..op], yr);
            }
        }
    });
    Tensor::from_vec(&[p.n, p.co, p.o[0], p.o[1], p.o[2]], out)
}

/// Adjoint of [`conv_forward`] in its input: maps `gy` back to input space.
/// This is also the transposed ("deconvolution") layer.
pub fn conv_backward_data<T: Scalar>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    g: ConvGeom,
    in_spatial: [usize; 3],
) -> Result<Tensor<T>> {
    let [n, gco, ..] = gy.dims5()?;
    let ws = w.dims5()?;
    let p = Plan::new([n, ws[1], in_spatial[0], in_spatial[1], in_spatial[2]], ws, g)?;
    if gco != p.co || gy.shape[2..] != p.o {
        return dim_err(format!("gradient shape {:?} does not match conv output", gy.shape));
    }
    let (ip, op, rows) = (p.in_plane(), p.out_plane(), p.ci * p.kvol());
    let mut out = vec![T::ZERO; p.n * p.ci * ip];
    out.par_chunks_mut(p.ci * ip).enumerate().for_each(|(n, gx)| {
        let gyn = &gy.data[n * p.co * op..][..p.co * op];
        let mut cols = vec![T::ZERO; rows * op];
        for co in 0..p.co {
            let gr = &gyn[co * op..][..op];
            let wr = &w.data[co * rows..][..rows];
            for (r, &wv) in wr.iter().enumerate() {
                axpy(wv, gr, &mut cols[r * op..][..op]);
            }
        }
        p.add_columns(&cols, gx);
    });
    Tensor::from_vec(&[p.n, p.ci, in_spatial[0], in_spatial[1], in_spatial[2]], out)
}

/// Adjoint of [`conv_forward`] in its weight.
pub fn conv_backward_weight<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    g: ConvGeom,
    kernel: [usize; 3],
) -> Result<Tensor<T>> {
    let xs = x.dims5()?;
    let [gn, co, ..] = gy.dims5()?;
    let p = Plan::new(xs, [co, xs[1], kernel[0], kernel[1], kernel[2]], g)?;
    if gn != p.n || gy.shape[2..] != p.o {
        return dim_err(format!("gradient shape {:?} does not match conv output", gy.shape));
    }
    let (ip, op, rows) = (p.in_plane(), p.out_plane(), p.ci * p.kvol());
    // Per-item partial sums, added in batch order.
    let partial: Vec<Vec<T>> = (0..p.n)
        .into_par_iter()
        .map(|n| {
            let cols = p.columns(&x.data[n * p.ci * ip..][..p.ci * ip]);
            let gyn = &gy.data[n * p.co * op..][..p.co * op];
            let mut gw = vec![T::ZERO; p.co * rows];
            for c in 0..p.co {
                let gr = &gyn[c * op..][..op];
                for r in 0..rows {
                    gw[c * rows + r] = dot(gr, &cols[r * op..][..op]);
                }
            }
            gw
        })
        .collect();
    let mut out = vec![T::ZERO; p.co * rows];
    for gw in partial {
        for (o, v) in out.iter_mut().zip(gw) {
            *o += v;
        }
    }
    Tensor::from_vec(&[p.co, p.ci, kernel[0], kernel[1], kernel[2]], out)
}

/// Max pooling with window = stride = `win` per axis. Returns the pooled
/// tensor and, per output element, the flat input index of its maximum
/// (first maximum wins).
pub fn max_pool<T: Scalar>(x: &Tensor<T>, win: [usize; 3]) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, d, h, w] = x.dims5()?;
    if d % win[0] != 0 || h % win[1] != 0 || w % win[2] != 0 {
        return dim_err(format!("pool window {:?} does not divide {:?}", win, &x.shape[2..]));
    }
    let (od, oh, ow) = (d / win[0], h / win[1], w / win[2]);
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    let mut idx = Vec::with_capacity(out.capacity());
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = usize::MAX;
                    for dz in 0..win[0] {
                        for dy in 0..win[1] {
                            for dx in 0..win[2] {
                                let i = base + ((z * win[0] + dz) * h + y * win[1] + dy) * w + xx * win[2] + dx;
                                if best == usize::MAX || x.data[i] > x.data[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    out.push(x.data[best]);
                    idx.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, od, oh, ow], out)?, idx))
}

/// Per-channel umbrella Laplacian over the `(D, H, W)` volume, W fastest.
pub fn laplacian<T: Scalar>(x: &Tensor<T>, transpose: bool) -> Result<Tensor<T>> {
    let [_, _, d, h, w] = x.dims5()?;
    let plane = d * h * w;
    let mut out = vec![T::ZERO; x.len()];
    out.par_chunks_mut(plane.max(1)).zip(x.data.par_chunks(plane.max(1))).for_each(|(o, s)| {
        laplacian_scalar(s, (w, h, d), o, transpose);
    });
    Tensor::from_vec(&x.shape, out)
}

/// Batched product of `[B, I, K]` and `[B, K, J]` with optional transposes of
/// either operand (stored as `[B, K, I]` / `[B, J, K]`).
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let (&[ba, a1, a2], &[bb, b1, b2]) = (a.shape.as_slice(), b.shape.as_slice()) else {
        return dim_err("matmul expects 3D operands");
    };
    let (i_len, k_len) = if ta { (a2, a1) } else { (a1, a2) };
    let (kb, j_len) = if tb { (b2, b1) } else { (b1, b2) };
    if ba != bb || k_len != kb {
        return dim_err(format!("matmul shapes {:?} and {:?} do not chain", a.shape, b.shape));
    }
    let mut out = vec![T::ZERO; ba * i_len * j_len];
    out.par_chunks_mut((i_len * j_len).max(1)).enumerate().for_each(|(bi, o)| {
        let ad = &a.data[bi * a1 * a2..][..a1 * a2];
        let bd = &b.data[bi * b1 * b2..][..b1 * b2];
        for i in 0..i_len {
            for j in 0..j_len {
                let mut acc = T::ZERO;
                for k in 0..k_len {
                    let av = if ta { ad[k * a2 + i] } else { ad[i * a2 + k] };
                    let bv = if tb { bd[j * b2 + k] } else { bd[k * b2 + j] };
                    acc += av * bv;
                }
                o[i * j_len + j] = acc;
            }
        }
    });
    Tensor::from_vec(&[ba, i_len, j_len], out)
}

/// Repeats size-1 axes of `x` up to `shape` (same rank).
pub fn broadcast<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    check_broadcast(&x.shape, shape)?;
    let n = numel(shape);
    let strides = src_strides(&x.shape);
    let mut out = Vec::with_capacity(n);
    let mut pos = vec![0usize; shape.len()];
    for _ in 0..n {
        let src: usize = pos.iter().zip(&strides).map(|(p, s)| p * s).sum();
        out.push(x.data[src]);
        advance(&mut pos, shape);
    }
    Tensor::from_vec(shape, out)
}

/// Sums `x` over the axes where `shape` has size 1; adjoint of [`broadcast`].
pub fn reduce_to<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    check_broadcast(shape, &x.shape)?;
    let strides = src_strides(shape);
    let mut out = vec![T::ZERO; numel(shape)];
    let mut pos = vec![0usize; x.shape.len()];
    for v in &x.data {
        let dst: usize = pos.iter().zip(&strides).map(|(p, s)| p * s).sum();
        out[dst] += *v;
        advance(&mut pos, &x.shape);
    }
    Tensor::from_vec(shape, out)
}

fn check_broadcast(small: &[usize], big: &[usize]) -> Result<()> {
    if small.len() != big.len() || small.iter().zip(big).any(|(s, b)| *s != *b && *s != 1) {
        return dim_err(format!("cannot broadcast {small:?} to {big:?}"));
    }
    Ok(())
}

// Row-major strides of `shape`, with 0 on size-1 axes.
fn src_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for a in (0..shape.len()).rev() {
        s[a] = if shape[a] == 1 { 0 } else { acc };
        acc *= shape[a];
    }
    s
}

fn advance(pos: &mut [usize], shape: &[usize]) {
    for a in (0..shape.len()).rev() {
        pos[a] += 1;
        if pos[a] < shape[a] {
            return;
        }
        pos[a] = 0;
    }
}

/// Channels `[start, start+len)` of a `[N, C, ...]` tensor.
pub fn channel_slice<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    if x.shape.len() < 2 || start + len > x.shape[1] {
        return dim_err(format!("channel slice {start}+{len} out of range for {:?}", x.shape));
    }
    let (n, c) = (x.shape[0], x.shape[1]);
    let inner = numel(&x.shape[2..]);
    let mut out = Vec::with_capacity(n * len * inner);
    for b in 0..n {
        out.extend_from_slice(&x.data[(b * c + start) * inner..(b * c + start + len) * inner]);
    }
    let mut shape = x.shape.clone();
    shape[1] = len;
    Tensor::from_vec(&shape, out)
}

/// Places `x` at channel offset `start` of a zero tensor with `total` channels.
pub fn channel_embed<T: Scalar>(x: &Tensor<T>, start: usize, total: usize) -> Result<Tensor<T>> {
    if x.shape.len() < 2 || start + x.shape[1] > total {
        return dim_err("channel embedding out of range");
    }
    let (n, c) = (x.shape[0], x.shape[1]);
    let inner = numel(&x.shape[2..]);
    let mut shape = x.shape.clone();
    shape[1] = total;
    let mut out = vec![T::ZERO; n * total * inner];
    for b in 0..n {
        out[(b * total + start) * inner..(b * total + start + c) * inner]
            .copy_from_slice(&x.data[b * c * inner..(b + 1) * c * inner]);
    }
    Tensor::from_vec(&shape, out)
}

/// Concatenation along the channel axis.
pub fn channel_concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape.len() < 2 || a.shape[0] != b.shape[0] || a.shape[2..] != b.shape[2..] {
        return dim_err(format!("cannot concatenate {:?} and {:?}", a.shape, b.shape));
    }
    let (n, ca, cb) = (a.shape[0], a.shape[1], b.shape[1]);
    let inner = numel(&a.shape[2..]);
    let mut out = Vec::with_capacity(n * (ca + cb) * inner);
    for i in 0..n {
        out.extend_from_slice(&a.data[i * ca * inner..(i + 1) * ca * inner]);
        out.extend_from_slice(&b.data[i * cb * inner..(i + 1) * cb * inner]);
    }
    let mut shape = a.shape.clone();
    shape[1] = ca + cb;
    Tensor::from_vec(&shape, out)
}
