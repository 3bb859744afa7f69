// Slice-level compute kernels behind the tape operations. Layouts are
// row-major: images NCHW, conv weights OIHW, transposed-conv weights IOHW,
// dense weights F×G.

use rayon::prelude::*;

/// Samples per work item in batched backward passes. Fixed so that the
/// reduction order of weight gradients does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

/// `c = alpha * a·b + beta * c` for strided row-major-or-not matrices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let reach = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= reach(m, k, rsa, csa), "gemm: lhs buffer too small");
    assert!(b.len() >= reach(k, n, rsb, csb), "gemm: rhs buffer too small");
    assert!(c.len() >= reach(m, n, rsc, csc), "gemm: output buffer too small");
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.kw
    }

    /// 1×1 kernel without padding: the input already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }

    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Range of output columns `ox` whose input column `ox + kj - pad` lies
/// inside `0..w`.
fn valid_cols(ow: usize, w: usize, kj: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj);
    let hi = (w + pad).saturating_sub(kj).min(ow);
    (lo, hi.max(lo))
}

/// Unrolls one sample into a `[C·kh·kw, oh·ow]` column matrix.
fn im2col(g: &ConvGeom, x: &[f32], cols: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for ci in 0..g.c {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(ow, g.w, kj, g.pad);
                for oy in 0..oh {
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = (oy + ki).wrapping_sub(g.pad);
                    if iy >= g.h {
                        line.fill(0.0);
                        continue;
                    }
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let src0 = iy * g.w + lo + kj - g.pad;
                    line[lo..hi].copy_from_slice(&xc[src0..src0 + (hi - lo)]);
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back into one sample's input gradient.
fn col2im(g: &ConvGeom, cols: &[f32], dx: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for ci in 0..g.c {
        let dxc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(ow, g.w, kj, g.pad);
                for oy in 0..oh {
                    let iy = (oy + ki).wrapping_sub(g.pad);
                    if iy >= g.h {
                        continue;
                    }
                    let dst0 = iy * g.w + lo + kj - g.pad;
                    let dst = &mut dxc[dst0..dst0 + (hi - lo)];
                    for (d, v) in dst.iter_mut().zip(&src[oy * ow + lo..oy * ow + hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let plane = g.out_plane();
    let ckk = g.ckk();
    let in_sample = g.c * g.h * g.w;
    let mut out = vec![0.0f32; g.n * g.o * plane];
    out.par_chunks_mut(g.o * plane)
        .enumerate()
        .for_each_init(
            || vec![0.0f32; if g.is_pointwise() { 0 } else { ckk * plane }],
            |cols, (s, out_s)| {
                let xs = &x[s * in_sample..(s + 1) * in_sample];
                let cols: &[f32] = if g.is_pointwise() {
                    xs
                } else {
                    im2col(g, xs, cols);
                    cols
                };
                for (oc, row) in out_s.chunks_mut(plane).enumerate() {
                    row.fill(bias[oc]);
                }
                gemm(g.o, ckk, plane, weight, (ckk, 1), cols, (plane, 1), 1.0, out_s, (plane, 1));
            },
        );
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Option<Vec<f32>>,
    pub db: Option<Vec<f32>>,
}

pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f32],
    weight: &[f32],
    dout: &[f32],
    need_dx: bool,
    need_dw: bool,
) -> ConvGrads {
    let plane = g.out_plane();
    let ckk = g.ckk();
    let in_sample = g.c * g.h * g.w;
    let out_sample = g.o * plane;
    let chunks: Vec<(usize, usize)> = (0..g.n)
        .step_by(GRAD_CHUNK)
        .map(|s| (s, (s + GRAD_CHUNK).min(g.n)))
        .collect();
    let parts: Vec<(Option<Vec<f32>>, Option<Vec<f32>>)> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut cols = vec![0.0f32; ckk * plane];
            let mut dw = need_dw.then(|| vec![0.0f32; g.o * ckk]);
            let mut dx = need_dx.then(|| vec![0.0f32; (end - start) * in_sample]);
            for s in start..end {
                let dout_s = &dout[s * out_sample..(s + 1) * out_sample];
                let local = s - start;
                if let Some(dw) = dw.as_mut() {
                    let xs = &x[s * in_sample..(s + 1) * in_sample];
                    let src: &[f32] = if g.is_pointwise() {
                        xs
                    } else {
                        im2col(g, xs, &mut cols);
                        &cols
                    };
                    // dW += dOut · colsᵀ
                    gemm(g.o, plane, ckk, dout_s, (plane, 1), src, (1, plane), 1.0, dw, (ckk, 1));
                }
                if let Some(dx) = dx.as_mut() {
                    let dst = &mut dx[local * in_sample..(local + 1) * in_sample];
                    if g.is_pointwise() {
                        // dX = Wᵀ · dOut directly
                        gemm(ckk, g.o, plane, weight, (1, ckk), dout_s, (plane, 1), 0.0, dst, (plane, 1));
                    } else {
                        // dcols = Wᵀ · dOut
                        gemm(ckk, g.o, plane, weight, (1, ckk), dout_s, (plane, 1), 0.0, &mut cols, (plane, 1));
                        col2im(g, &cols, dst);
                    }
                }
            }
            (dx, dw)
        })
        .collect();

    let mut dx_full = need_dx.then(|| Vec::with_capacity(g.n * in_sample));
    let mut dw_full = need_dw.then(|| vec![0.0f32; g.o * ckk]);
    for (dx, dw) in parts {
        if let (Some(full), Some(part)) = (dx_full.as_mut(), dx) {
            full.extend_from_slice(&part);
        }
        if let (Some(full), Some(part)) = (dw_full.as_mut(), dw) {
            for (a, b) in full.iter_mut().zip(&part) {
                *a += b;
            }
        }
    }
    let db = need_dw.then(|| {
        let mut db = vec![0.0f32; g.o];
        for s in 0..g.n {
            for (oc, acc) in db.iter_mut().enumerate() {
                let start = s * out_sample + oc * plane;
                *acc += dout[start..start + plane].iter().sum::<f32>();
            }
        }
        db
    });
    ConvGrads {
        dx: dx_full,
        dw: dw_full,
        db,
    }
}

/// 2×2 stride-2 max pooling. Returns the pooled values and, per output
/// element, the flat input index that won (first maximum in row-major scan).
pub(crate) fn maxpool2x2_forward(n: usize, c: usize, h: usize, w: usize, x: &[f32]) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + (2 * oy) * w + 2 * ox;
                let mut best = x[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > best {
                        best = x[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    (out, arg)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct UpGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
}

/// 2×2 stride-2 transposed convolution, weight layout `[C, O, 2, 2]`.
pub(crate) fn conv_transpose2x2_forward(g: &UpGeom, x: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let hw = g.h * g.w;
    let o4 = g.o * 4;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let mut out = vec![0.0f32; g.n * g.o * oh * ow];
    out.par_chunks_mut(g.o * oh * ow)
        .enumerate()
        .for_each_init(
            || vec![0.0f32; o4 * hw],
            |tmp, (s, out_s)| {
                let xs = &x[s * g.c * hw..(s + 1) * g.c * hw];
                // tmp[(o,di,dj), p] = Σ_c W[c,(o,di,dj)] · x[c,p]
                gemm(o4, g.c, hw, weight, (1, o4), xs, (hw, 1), 0.0, tmp, (hw, 1));
                for oc in 0..g.o {
                    for di in 0..2 {
                        for dj in 0..2 {
                            let row = &tmp[((oc * 2 + di) * 2 + dj) * hw..][..hw];
                            for i in 0..g.h {
                                for j in 0..g.w {
                                    out_s[(oc * oh + 2 * i + di) * ow + 2 * j + dj] = row[i * g.w + j] + bias[oc];
                                }
                            }
                        }
                    }
                }
            },
        );
    out
}

pub(crate) fn conv_transpose2x2_backward(
    g: &UpGeom,
    x: &[f32],
    weight: &[f32],
    dout: &[f32],
    need_dx: bool,
    need_dw: bool,
) -> ConvGrads {
    let hw = g.h * g.w;
    let o4 = g.o * 4;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let out_sample = g.o * oh * ow;
    let in_sample = g.c * hw;
    let chunks: Vec<(usize, usize)> = (0..g.n)
        .step_by(GRAD_CHUNK)
        .map(|s| (s, (s + GRAD_CHUNK).min(g.n)))
        .collect();
    let parts: Vec<(Option<Vec<f32>>, Option<Vec<f32>>)> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut folded = vec![0.0f32; o4 * hw];
            let mut dw = need_dw.then(|| vec![0.0f32; g.c * o4]);
            let mut dx = need_dx.then(|| vec![0.0f32; (end - start) * in_sample]);
            for s in start..end {
                let dout_s = &dout[s * out_sample..(s + 1) * out_sample];
                for oc in 0..g.o {
                    for di in 0..2 {
                        for dj in 0..2 {
                            let row = &mut folded[((oc * 2 + di) * 2 + dj) * hw..][..hw];
                            for i in 0..g.h {
                                for j in 0..g.w {
                                    row[i * g.w + j] = dout_s[(oc * oh + 2 * i + di) * ow + 2 * j + dj];
                                }
                            }
                        }
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    let xs = &x[s * in_sample..(s + 1) * in_sample];
                    // dW[c, o4] += x[c, p] · folded[o4, p]ᵀ
                    gemm(g.c, hw, o4, xs, (hw, 1), &folded, (1, hw), 1.0, dw, (o4, 1));
                }
                if let Some(dx) = dx.as_mut() {
                    let local = s - start;
                    // dx[c, p] = W[c, o4] · folded[o4, p]
                    gemm(
                        g.c,
                        o4,
                        hw,
                        weight,
                        (o4, 1),
                        &folded,
                        (hw, 1),
                        0.0,
                        &mut dx[local * in_sample..(local + 1) * in_sample],
                        (hw, 1),
                    );
                }
            }
            (dx, dw)
        })
        .collect();

    let mut dx_full = need_dx.then(|| Vec::with_capacity(g.n * in_sample));
    let mut dw_full = need_dw.then(|| vec![0.0f32; g.c * o4]);
    for (dx, dw) in parts {
        if let (Some(full), Some(part)) = (dx_full.as_mut(), dx) {
            full.extend_from_slice(&part);
        }
        if let (Some(full), Some(part)) = (dw_full.as_mut(), dw) {
            for (a, b) in full.iter_mut().zip(&part) {
                *a += b;
            }
        }
    }
    let db = need_dw.then(|| {
        let plane = oh * ow;
        let mut db = vec![0.0f32; g.o];
        for s in 0..g.n {
            for (oc, acc) in db.iter_mut().enumerate() {
                let start = s * out_sample + oc * plane;
                *acc += dout[start..start + plane].iter().sum::<f32>();
            }
        }
        db
    });
    ConvGrads {
        dx: dx_full,
        dw: dw_full,
        db,
    }
}
