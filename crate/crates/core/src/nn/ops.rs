//! Batched kernels behind the layer chain. Buffers are row-major with the
//! batch axis first.

use crate::tensor::Real;

pub(super) fn dense_forward<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * out_dim);
    for _ in 0..batch {
        y.extend_from_slice(b);
    }
    T::gemm(batch, in_dim, out_dim, T::one(), x, false, w, true, T::one(), &mut y);
    y
}

type Grads<T> = (Vec<T>, Option<Vec<T>>, Option<Vec<T>>);

#[allow(clippy::too_many_arguments)]
pub(super) fn dense_backward<T: Real>(
    gy: &[T],
    x: &[T],
    w: &[T],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    want_w: bool,
    want_b: bool,
) -> Grads<T> {
    let mut gx = vec![T::zero(); batch * in_dim];
    T::gemm(batch, out_dim, in_dim, T::one(), gy, false, w, false, T::zero(), &mut gx);
    let gw = want_w.then(|| {
        let mut gw = vec![T::zero(); out_dim * in_dim];
        T::gemm(out_dim, batch, in_dim, T::one(), gy, true, x, false, T::zero(), &mut gw);
        gw
    });
    let gb = want_b.then(|| {
        let mut gb = vec![T::zero(); out_dim];
        for row in gy.chunks(out_dim) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        gb
    });
    (gx, gw, gb)
}

pub(super) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Unfolds one `[c, h, w]` sample into `[c·k·k, h·w]` with zero padding.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (h, w, k) = (g.h as isize, g.w as isize, g.kernel);
    let pad = (k / 2) as isize;
    let plane = g.plane();
    for c in 0..g.in_ch {
        let src = &x[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    let line = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_line = &src[(sy * w) as usize..((sy + 1) * w) as usize];
                    for (xo, out) in line.iter_mut().enumerate() {
                        let sx = xo as isize + dx;
                        *out = if sx < 0 || sx >= w {
                            T::zero()
                        } else {
                            src_line[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds `[c·k·k, h·w]` column gradients back onto a `[c, h, w]` sample.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, gx: &mut [T]) {
    let (h, w, k) = (g.h as isize, g.w as isize, g.kernel);
    let pad = (k / 2) as isize;
    let plane = g.plane();
    for c in 0..g.in_ch {
        let dst = &mut gx[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for xo in 0..w {
                        let sx = xo + dx;
                        if sx >= 0 && sx < w {
                            dst[(sy * w + sx) as usize] += src[(y * w + xo) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and the unfolded inputs kept for the backward pass.
pub(super) fn conv_forward<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    batch: usize,
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let (patch, plane) = (g.patch(), g.plane());
    let mut cols = vec![T::zero(); batch * patch * plane];
    let mut y = vec![T::zero(); batch * g.out_ch * plane];
    let in_len = g.in_ch * plane;
    for s in 0..batch {
        let c = &mut cols[s * patch * plane..(s + 1) * patch * plane];
        im2col(&x[s * in_len..(s + 1) * in_len], g, c);
        let out = &mut y[s * g.out_ch * plane..(s + 1) * g.out_ch * plane];
        for (o, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b[o]);
        }
        T::gemm(g.out_ch, patch, plane, T::one(), w, false, c, false, T::one(), out);
    }
    (y, cols)
}

pub(super) fn conv_backward<T: Real>(
    gy: &[T],
    cols: &[T],
    w: &[T],
    batch: usize,
    g: &ConvGeom,
    want_w: bool,
    want_b: bool,
) -> Grads<T> {
    let (patch, plane) = (g.patch(), g.plane());
    let in_len = g.in_ch * plane;
    let out_len = g.out_ch * plane;
    let mut gx = vec![T::zero(); batch * in_len];
    let mut gw = want_w.then(|| vec![T::zero(); g.out_ch * patch]);
    let mut gb = want_b.then(|| vec![T::zero(); g.out_ch]);
    let mut gcols = vec![T::zero(); patch * plane];
    for s in 0..batch {
        let gys = &gy[s * out_len..(s + 1) * out_len];
        let c = &cols[s * patch * plane..(s + 1) * patch * plane];
        if let Some(gw) = gw.as_mut() {
            T::gemm(g.out_ch, plane, patch, T::one(), gys, false, c, true, T::one(), gw);
        }
        if let Some(gb) = gb.as_mut() {
            for (o, chunk) in gys.chunks(plane).enumerate() {
                gb[o] += chunk.iter().copied().sum::<T>();
            }
        }
        T::gemm(patch, g.out_ch, plane, T::one(), w, true, gys, false, T::zero(), &mut gcols);
        col2im(&gcols, g, &mut gx[s * in_len..(s + 1) * in_len]);
    }
    (gx, gw, gb)
}

pub(super) fn maxpool_forward<T: Real>(
    x: &[T],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(batch * c * oh * ow);
    let mut argmax = Vec::with_capacity(batch * c * oh * ow);
    for plane in 0..batch * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    (y, argmax)
}

pub(super) fn maxpool_backward<T: Real>(gy: &[T], argmax: &[u32], in_len: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); in_len];
    for (&g, &idx) in gy.iter().zip(argmax) {
        gx[idx as usize] += g;
    }
    gx
}
