use crate::error::{NumericsError, Result};
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{gemm, Scalar, Tensor};

/// Zero padding applied before (top/left) and after (bottom/right) each spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub begin: usize,
    pub end: usize,
}

impl Padding {
    pub fn symmetric(p: usize) -> Self {
        Padding { begin: p, end: p }
    }

    /// Padding that yields `ceil(n / stride)` outputs for an odd kernel on an
    /// input of size `n` divisible by `stride`.
    pub fn same(kernel: usize, stride: usize) -> Self {
        let total = kernel.saturating_sub(stride);
        let begin = kernel / 2;
        Padding { begin: begin.min(total), end: total - begin.min(total) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

fn out_size(n: usize, k: usize, stride: usize, pad: Padding) -> Result<usize> {
    let padded = n + pad.begin + pad.end;
    if padded < k || !(padded - k).is_multiple_of(stride) {
        return Err(NumericsError::Config {
            op: "conv2d",
            msg: format!(
                "input {n} with kernel {k}, stride {stride}, padding ({}, {}) gives a non-integral output size",
                pad.begin, pad.end
            ),
        });
    }
    Ok((padded - k) / stride + 1)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let npix = g.oh * g.ow;
    let mut cols = vec![T::zero(); g.c * g.k * g.k * npix];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let npix = g.oh * g.ow;
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// 2-D cross-correlation of `x: [C×H×W]` with `w: [F×C×k×k]` (k odd).
    pub fn conv2d(&self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (out, geom, cols) = {
            let xv = self.value(x);
            let wv = self.value(w);
            let (sx, sw) = (xv.shape(), wv.shape());
            if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] {
                return Err(NumericsError::ShapeMismatch { op: "conv2d", lhs: sx.to_vec(), rhs: sw.to_vec() });
            }
            let k = sw[2];
            if k % 2 == 0 || stride == 0 {
                return Err(NumericsError::Config {
                    op: "conv2d",
                    msg: format!("kernel must be odd and stride positive (k={k}, stride={stride})"),
                });
            }
            let oh = out_size(sx[1], k, stride, padding)?;
            let ow = out_size(sx[2], k, stride, padding)?;
            let geom = ConvGeom { c: sx[0], h: sx[1], w: sx[2], f: sw[0], k, stride, pad: padding.begin, oh, ow };
            let cols = im2col(xv.data(), &geom);
            let ckk = geom.c * k * k;
            let mut data = vec![T::zero(); geom.f * oh * ow];
            gemm(geom.f, ckk, oh * ow, wv.data(), false, &cols, false, &mut data, false);
            (Tensor::new([geom.f, oh, ow], data)?, geom, cols)
        };
        self.push(out, Op::Conv2d { x, w, geom, cols }, &[x, w], "conv2d")
    }

    /// Transposed convolution with kernel 2 and stride 2: `x: [C×H×W]`,
    /// `w: [C×F×2×2]` gives `[F×2H×2W]`.
    pub fn conv_transpose2x2(&self, x: Var, w: Var) -> Result<Var> {
        let (out, c, f, h, w_in) = {
            let xv = self.value(x);
            let wv = self.value(w);
            let (sx, sw) = (xv.shape(), wv.shape());
            if sx.len() != 3 || sw.len() != 4 || sw[0] != sx[0] || sw[2] != 2 || sw[3] != 2 {
                return Err(NumericsError::ShapeMismatch {
                    op: "conv_transpose2x2",
                    lhs: sx.to_vec(),
                    rhs: sw.to_vec(),
                });
            }
            let (c, h, w_in, f) = (sx[0], sx[1], sx[2], sw[1]);
            let hw = h * w_in;
            // Y[F·4 × HW] = Wᵀ · X
            let mut y = vec![T::zero(); f * 4 * hw];
            gemm(f * 4, c, hw, wv.data(), true, xv.data(), false, &mut y, false);
            let (oh, ow) = (2 * h, 2 * w_in);
            let mut data = vec![T::zero(); f * oh * ow];
            for fi in 0..f {
                for a in 0..2 {
                    for b in 0..2 {
                        let yrow = &y[(fi * 4 + a * 2 + b) * hw..(fi * 4 + a * 2 + b + 1) * hw];
                        for i in 0..h {
                            for j in 0..w_in {
                                data[(fi * oh + 2 * i + a) * ow + 2 * j + b] = yrow[i * w_in + j];
                            }
                        }
                    }
                }
            }
            (Tensor::new([f, oh, ow], data)?, c, f, h, w_in)
        };
        self.push(out, Op::ConvTranspose2x2 { x, w, c, f, h, w_in }, &[x, w], "conv_transpose2x2")
    }

    /// Nearest-neighbour ×2 upsampling of `[C×H×W]`.
    pub fn upsample_nearest2x(&self, x: Var) -> Result<Var> {
        let (out, c, h, w) = {
            let xv = self.value(x);
            let s = xv.shape();
            if s.len() != 3 {
                return Err(NumericsError::Usage(format!("upsample needs [C×H×W], got {s:?}")));
            }
            let (c, h, w) = (s[0], s[1], s[2]);
            let (oh, ow) = (2 * h, 2 * w);
            let src = xv.data();
            let mut data = vec![T::zero(); c * oh * ow];
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        data[(ci * oh + oy) * ow + ox] = src[(ci * h + oy / 2) * w + ox / 2];
                    }
                }
            }
            (Tensor::new([c, oh, ow], data)?, c, h, w)
        };
        self.push(out, Op::Upsample2x { x, c, h, w }, &[x], "upsample_nearest2x")
    }
}

pub(super) fn conv2d_backward<T: Scalar>(
    x: Var,
    w: Var,
    geom: &ConvGeom,
    cols: &[T],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let ckk = geom.c * geom.k * geom.k;
    let npix = geom.oh * geom.ow;
    if sink.wants(w) {
        // dW = G · colsᵀ
        let slot = sink.slot(w);
        gemm(geom.f, npix, ckk, g, false, cols, true, slot, true);
    }
    if sink.wants(x) {
        // dcols = Wᵀ · G
        let wv = sink.value(w).data();
        let mut dcols = vec![T::zero(); ckk * npix];
        gemm(ckk, geom.f, npix, wv, true, g, false, &mut dcols, false);
        let slot = sink.slot(x);
        col2im(&dcols, geom, slot);
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv_transpose_backward<T: Scalar>(
    x: Var,
    w: Var,
    c: usize,
    f: usize,
    h: usize,
    w_in: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let hw = h * w_in;
    let (oh, ow) = (2 * h, 2 * w_in);
    let mut dy = vec![T::zero(); f * 4 * hw];
    for fi in 0..f {
        for a in 0..2 {
            for b in 0..2 {
                let row = &mut dy[(fi * 4 + a * 2 + b) * hw..(fi * 4 + a * 2 + b + 1) * hw];
                for i in 0..h {
                    for j in 0..w_in {
                        row[i * w_in + j] = g[(fi * oh + 2 * i + a) * ow + 2 * j + b];
                    }
                }
            }
        }
    }
    if sink.wants(w) {
        // dW[C×F4] = X · dYᵀ
        let xv = sink.value(x).data();
        let slot = sink.slot(w);
        gemm(c, hw, f * 4, xv, false, &dy, true, slot, true);
    }
    if sink.wants(x) {
        // dX[C×HW] = W · dY
        let wv = sink.value(w).data();
        let slot = sink.slot(x);
        gemm(c, f * 4, hw, wv, false, &dy, false, slot, true);
    }
}

pub(super) fn upsample_backward<T: Scalar>(x: Var, c: usize, h: usize, w: usize, g: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(x) {
        return;
    }
    let (oh, ow) = (2 * h, 2 * w);
    let slot = sink.slot(x);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                slot[(ci * h + oy / 2) * w + ox / 2] += g[(ci * oh + oy) * ow + ox];
            }
        }
    }
}
