//! Raw forward/backward kernels on row-major slices. Shapes are validated by
//! the callers in `autograd`.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the input row.
    fn col_range(&self, kx: usize, w_out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pad as isize;
        // ix = ox * s + off must satisfy 0 <= ix < w
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = (self.w as isize - 1 - off).div_euclid(s) + 1;
        let hi = hi.clamp(0, w_out as isize);
        (lo.max(0) as usize, hi.max(lo.max(0)) as usize)
    }
}

pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let (ho, wo) = g.out_hw();
    let kk = g.k * g.k;
    for co in 0..g.c_out {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.fill(bias[co]);
        for ci in 0..g.c_in {
            let inp = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let wbase = (co * g.c_in + ci) * kk;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = weight[wbase + ky * g.k + kx];
                    let (lo, hi) = g.col_range(kx, wo);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let in_row = &inp[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let out_row = &mut plane[oy * wo..(oy + 1) * wo];
                        let ix0 = (lo * g.stride + kx) - g.pad;
                        if g.stride == 1 {
                            for (o, &i) in out_row[lo..hi].iter_mut().zip(&in_row[ix0..]) {
                                *o += wv * i;
                            }
                        } else {
                            for (j, o) in out_row[lo..hi].iter_mut().enumerate() {
                                *o += wv * in_row[ix0 + j * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates gradients for input, weight and bias. Any of the outputs may
/// be skipped by passing `None`.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_in: Option<&mut [T]>,
    mut grad_w: Option<&mut [T]>,
    grad_b: Option<&mut [T]>,
) {
    let (ho, wo) = g.out_hw();
    let kk = g.k * g.k;
    if let Some(gb) = grad_b {
        for co in 0..g.c_out {
            gb[co] += grad_out[co * ho * wo..(co + 1) * ho * wo].iter().copied().sum();
        }
    }
    for co in 0..g.c_out {
        let gplane = &grad_out[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..g.c_in {
            let inp = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let wbase = (co * g.c_in + ci) * kk;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let (lo, hi) = g.col_range(kx, wo);
                    if lo >= hi {
                        continue;
                    }
                    let wv = weight[wbase + ky * g.k + kx];
                    let mut acc = T::zero();
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let g_row = &gplane[oy * wo..(oy + 1) * wo];
                        let ix0 = (lo * g.stride + kx) - g.pad;
                        if grad_w.is_some() {
                            let in_row = &inp[iy * g.w..(iy + 1) * g.w];
                            if g.stride == 1 {
                                for (&gv, &iv) in g_row[lo..hi].iter().zip(&in_row[ix0..]) {
                                    acc += gv * iv;
                                }
                            } else {
                                for (j, &gv) in g_row[lo..hi].iter().enumerate() {
                                    acc += gv * in_row[ix0 + j * g.stride];
                                }
                            }
                        }
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let gi_row = &mut gi[ci * g.h * g.w + iy * g.w..ci * g.h * g.w + (iy + 1) * g.w];
                            if g.stride == 1 {
                                for (o, &gv) in gi_row[ix0..].iter_mut().zip(&g_row[lo..hi]) {
                                    *o += wv * gv;
                                }
                            } else {
                                for (j, &gv) in g_row[lo..hi].iter().enumerate() {
                                    gi_row[ix0 + j * g.stride] += wv * gv;
                                }
                            }
                        }
                    }
                    if let Some(gw) = grad_w.as_deref_mut() {
                        gw[wbase + ky * g.k + kx] += acc;
                    }
                }
            }
        }
    }
}

/// One axis of a bilinear resize with half-pixel centers (`align_corners =
/// false`): each output index reads two source indices with weights.
#[derive(Debug, Clone)]
pub struct AxisTaps<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub w_lo: Vec<T>,
    pub w_hi: Vec<T>,
}

impl<T: Scalar> AxisTaps<T> {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let scale = n_in as f64 / n_out as f64;
        let mut taps = AxisTaps {
            lo: Vec::with_capacity(n_out),
            hi: Vec::with_capacity(n_out),
            w_lo: Vec::with_capacity(n_out),
            w_hi: Vec::with_capacity(n_out),
        };
        for o in 0..n_out {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            taps.lo.push(i0);
            taps.hi.push(i1);
            taps.w_lo.push(T::of(1.0 - frac));
            taps.w_hi.push(T::of(frac));
        }
        taps
    }
}

pub fn resize_forward<T: Scalar>(
    input: &[T],
    c: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    out: &mut [T],
) {
    let ty = AxisTaps::<T>::new(h, ho);
    let tx = AxisTaps::<T>::new(w, wo);
    for ch in 0..c {
        let inp = &input[ch * h * w..(ch + 1) * h * w];
        let o = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for y in 0..ho {
            let r0 = &inp[ty.lo[y] * w..(ty.lo[y] + 1) * w];
            let r1 = &inp[ty.hi[y] * w..(ty.hi[y] + 1) * w];
            let (a, b) = (ty.w_lo[y], ty.w_hi[y]);
            for x in 0..wo {
                let (x0, x1) = (tx.lo[x], tx.hi[x]);
                let top = r0[x0] * tx.w_lo[x] + r0[x1] * tx.w_hi[x];
                let bot = r1[x0] * tx.w_lo[x] + r1[x1] * tx.w_hi[x];
                o[y * wo + x] = a * top + b * bot;
            }
        }
    }
}

pub fn resize_backward<T: Scalar>(
    grad_out: &[T],
    c: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    grad_in: &mut [T],
) {
    let ty = AxisTaps::<T>::new(h, ho);
    let tx = AxisTaps::<T>::new(w, wo);
    for ch in 0..c {
        let g = &grad_out[ch * ho * wo..(ch + 1) * ho * wo];
        let gi = &mut grad_in[ch * h * w..(ch + 1) * h * w];
        for y in 0..ho {
            let (a, b) = (ty.w_lo[y], ty.w_hi[y]);
            let (r0, r1) = (ty.lo[y] * w, ty.hi[y] * w);
            for x in 0..wo {
                let gv = g[y * wo + x];
                let (x0, x1) = (tx.lo[x], tx.hi[x]);
                let (wl, wh) = (tx.w_lo[x], tx.w_hi[x]);
                gi[r0 + x0] += a * wl * gv;
                gi[r0 + x1] += a * wh * gv;
                gi[r1 + x0] += b * wl * gv;
                gi[r1 + x1] += b * wh * gv;
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    out.fill(T::zero());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_bt_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in ar.iter().zip(br) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_at_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
}

pub fn softmax_rows<T: Scalar>(x: &[T], cols: usize, out: &mut [T]) {
    for (xr, or) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let m = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - m).exp();
            s += *o;
        }
        for o in or.iter_mut() {
            *o /= s;
        }
    }
}

pub fn softmax_rows_backward<T: Scalar>(y: &[T], grad_y: &[T], cols: usize, grad_x: &mut [T]) {
    for ((yr, gr), gx) in y
        .chunks_exact(cols)
        .zip(grad_y.chunks_exact(cols))
        .zip(grad_x.chunks_exact_mut(cols))
    {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in gx.iter_mut().zip(yr).zip(gr) {
            *o += yv * (gv - dot);
        }
    }
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Group normalization of a `[C, HW]` buffer followed by a per-channel
/// affine map.
pub fn group_norm_forward<T: Scalar>(
    x: &[T],
    c: usize,
    groups: usize,
    gamma: &[T],
    beta: &[T],
    out: &mut [T],
) {
    let plane = x.len() / c;
    let per = c / groups * plane;
    for g in 0..groups {
        let xs = &x[g * per..(g + 1) * per];
        let (mean, inv_std) = group_stats(xs);
        for (j, (o, &v)) in out[g * per..(g + 1) * per].iter_mut().zip(xs).enumerate() {
            let ch = g * (c / groups) + j / plane;
            *o = gamma[ch] * (v - mean) * inv_std + beta[ch];
        }
    }
}

fn group_stats<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = T::of(xs.len() as f64);
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + T::of(GROUP_NORM_EPS)).sqrt())
}

/// Accumulates input, scale and shift gradients of [`group_norm_forward`].
#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<T: Scalar>(
    x: &[T],
    c: usize,
    groups: usize,
    gamma: &[T],
    grad_out: &[T],
    mut grad_x: Option<&mut [T]>,
    mut grad_gamma: Option<&mut [T]>,
    mut grad_beta: Option<&mut [T]>,
) {
    let plane = x.len() / c;
    let cpg = c / groups;
    let per = cpg * plane;
    let mut xhat = vec![T::zero(); per];
    let mut dxhat = vec![T::zero(); per];
    for g in 0..groups {
        let xs = &x[g * per..(g + 1) * per];
        let gs = &grad_out[g * per..(g + 1) * per];
        let (mean, inv_std) = group_stats(xs);
        for j in 0..per {
            let ch = g * cpg + j / plane;
            xhat[j] = (xs[j] - mean) * inv_std;
            dxhat[j] = gs[j] * gamma[ch];
            if let Some(gg) = grad_gamma.as_deref_mut() {
                gg[ch] += gs[j] * xhat[j];
            }
            if let Some(gb) = grad_beta.as_deref_mut() {
                gb[ch] += gs[j];
            }
        }
        if let Some(gx) = grad_x.as_deref_mut() {
            let n = T::of(per as f64);
            let m1 = dxhat.iter().copied().sum::<T>() / n;
            let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
            for j in 0..per {
                gx[g * per + j] += inv_std * (dxhat[j] - m1 - xhat[j] * m2);
            }
        }
    }
}
