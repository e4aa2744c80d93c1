//! Raw kernels behind the graph operators. No graph bookkeeping here.

use crate::error::{Error, Result};

/// `c = a·b + beta·c` for row/column-strided matrices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices that cover every strided index the
    // routine touches; `c` is exclusively borrowed and row-major m×n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Resolved geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, dilation: usize, padding: Padding) -> Result<Self> {
        let &[n, in_c, h, w] = input else {
            return Err(Error::shape("conv2d", input, weight));
        };
        let &[out_c, w_in, kh, kw] = weight else {
            return Err(Error::shape("conv2d", input, weight));
        };
        if w_in != in_c {
            return Err(Error::shape("conv2d", input, weight));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Validation(format!(
                "conv2d: stride and dilation must be positive, got stride {stride}, dilation {dilation}"
            )));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::Validation("conv2d: empty kernel".into()));
        }
        let span_h = dilation * (kh - 1);
        let span_w = dilation * (kw - 1);
        let (pad_top, pad_bottom, pad_left, pad_right) = match padding {
            Padding::Same => (span_h / 2, span_h - span_h / 2, span_w / 2, span_w - span_w / 2),
            Padding::Valid => (0, 0, 0, 0),
        };
        let eff_h = h + pad_top + pad_bottom;
        let eff_w = w + pad_left + pad_right;
        if eff_h <= span_h || eff_w <= span_w {
            return Err(Error::Validation(format!(
                "conv2d: kernel span {}x{} exceeds padded input {}x{}",
                span_h + 1,
                span_w + 1,
                eff_h,
                eff_w
            )));
        }
        let oh = (eff_h - span_h - 1) / stride + 1;
        let ow = (eff_w - span_w - 1) / stride + 1;
        Ok(Self { n, in_c, h, w, out_c, kh, kw, stride, dilation, pad_top, pad_left, oh, ow })
    }

    pub fn k(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// Input row/column for output index `o` and kernel tap `t`, if in bounds.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, dil: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + t * dil) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    /// Unfolds one sample (`in_c × h × w`) into `k × p` columns.
    pub fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.p();
        for c in 0..self.in_c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match Self::src(oy, ky, self.stride, self.dilation, self.pad_top, self.h) {
                            None => out_row.fill(0.0),
                            Some(iy) => {
                                let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in out_row.iter_mut().enumerate() {
                                    *v = match Self::src(ox, kx, self.stride, self.dilation, self.pad_left, self.w) {
                                        Some(ix) => src_row[ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: accumulates columns back into one sample.
    pub fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.p();
        for c in 0..self.in_c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let Some(iy) = Self::src(oy, ky, self.stride, self.dilation, self.pad_top, self.h) else {
                            continue;
                        };
                        let in_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for ox in 0..self.ow {
                            if let Some(ix) = Self::src(ox, kx, self.stride, self.dilation, self.pad_left, self.w) {
                                in_row[ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Interpolation taps for one axis under the corner-aligned convention:
/// output index `o` samples source coordinate `o·(n−1)/(m−1)`.
#[derive(Debug, Clone)]
pub(crate) struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisTaps {
    pub fn new(n: usize, m: usize) -> Self {
        let mut lo = Vec::with_capacity(m);
        let mut hi = Vec::with_capacity(m);
        let mut frac = Vec::with_capacity(m);
        for o in 0..m {
            let src = if m > 1 { (o * (n - 1)) as f64 / (m - 1) as f64 } else { 0.0 };
            let l = (src.floor() as usize).min(n - 1);
            lo.push(l);
            hi.push((l + 1).min(n - 1));
            frac.push(src - l as f64);
        }
        Self { lo, hi, frac }
    }
}

/// Bilinear resample of a stack of `planes` planes from `h×w` to `oh×ow`.
pub(crate) fn bilinear_forward(x: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = AxisTaps::new(h, oh);
    let tx = AxisTaps::new(w, ow);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
            for ox in 0..ow {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn bilinear_backward(dy: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = AxisTaps::new(h, oh);
    let tx = AxisTaps::new(w, ow);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
            for ox in 0..ow {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let v = g[oy * ow + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}
