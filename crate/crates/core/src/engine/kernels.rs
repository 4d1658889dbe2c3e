//! Slice-level forward/backward kernels used by the tape.

/// Geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// A 1x1 stride-1 unpadded convolution needs no patch matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output index range `[lo, hi)` along one axis for which the input tap
    /// `o * stride + k - pad` lands inside `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let last = len as isize - 1 - off;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        let lo = lo.clamp(0, out_len as isize) as usize;
        let hi = hi.clamp(0, out_len as isize) as usize;
        (lo, hi.max(lo))
    }
}

/// Unfolds one batch item into a `(c_in*kh*kw) x (oh*ow)` patch matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.out_plane();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.h, g.oh);
            for kj in 0..g.kw {
                let (ox_lo, ox_hi) = g.valid_range(kj, g.w, g.ow);
                let dst = &mut cols[row * p..(row + 1) * p];
                dst[..oy_lo * g.ow].fill(0.0);
                dst[oy_hi * g.ow..].fill(0.0);
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    out_row[..ox_lo].fill(0.0);
                    out_row[ox_hi..].fill(0.0);
                    if g.stride == 1 {
                        let ix0 = ox_lo + kj - g.pad;
                        out_row[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            out_row[ox] = src_row[ox * g.stride + kj - g.pad];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto one batch item.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.out_plane();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.h, g.oh);
            for kj in 0..g.kw {
                let (ox_lo, ox_hi) = g.valid_range(kj, g.w, g.ow);
                let src = &cols[row * p..(row + 1) * p];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let in_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kj - g.pad;
                        let dst = &mut dst_row[ix0..ix0 + (ox_hi - ox_lo)];
                        for (d, s) in dst.iter_mut().zip(&in_row[ox_lo..ox_hi]) {
                            *d += s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst_row[ox * g.stride + kj - g.pad] += in_row[ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Strided view of a row-major matrix for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }
}

/// `c (m x n, row-major) = a (m x k) * b (k x n) + beta * c`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
) {
    gemm_ldc(m, k, n, a, b, beta, c, n)
}

/// [`gemm`] with an explicit row stride `ldc >= n` for `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_ldc(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    assert!(ldc >= n);
    assert!(m == 0 || n == 0 || c.len() > (m - 1) * ldc + (n - 1));
    assert!(m == 0 || k == 0 || a.data.len() > (m - 1) * a.row_stride + (k - 1) * a.col_stride);
    assert!(k == 0 || n == 0 || b.data.len() > (k - 1) * b.row_stride + (n - 1) * b.col_stride);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        if m < n {
            // Same product as C^T = B^T A^T; the packed kernels run faster
            // with the long dimension first.
            matrixmultiply::dgemm(
                n,
                k,
                m,
                1.0,
                b.data.as_ptr(),
                b.col_stride as isize,
                b.row_stride as isize,
                a.data.as_ptr(),
                a.col_stride as isize,
                a.row_stride as isize,
                beta,
                c.as_mut_ptr(),
                1,
                ldc as isize,
            );
        } else {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                a.row_stride as isize,
                a.col_stride as isize,
                b.data.as_ptr(),
                b.row_stride as isize,
                b.col_stride as isize,
                beta,
                c.as_mut_ptr(),
                ldc as isize,
                1,
            );
        }
    }
}

// Stride-1 convolutions skip the patch matrix: the input is copied once into
// zero-padded planes of width `w + 2*pad`, and each kernel tap becomes one
// gemm over a shifted view of those planes. Outputs are computed on the
// padded width and the trailing `kw - 1` columns of each row are discarded.

impl ConvGeom {
    pub fn is_shiftable(&self) -> bool {
        self.stride == 1 && !self.is_pointwise()
    }

    fn padded_width(&self) -> usize {
        self.w + 2 * self.pad
    }

    fn padded_plane(&self) -> usize {
        (self.h + 2 * self.pad) * self.padded_width()
    }

    /// Output row-major on the padded width.
    fn wide_out(&self) -> usize {
        self.oh * self.padded_width()
    }
}

/// Zero-padded copy of one batch item, with `kw` spare trailing zeros so
/// every shifted view stays in bounds.
pub(crate) fn pad_input(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (wp, pp) = (g.padded_width(), g.padded_plane());
    let mut xp = vec![0.0; g.c_in * pp + g.kw];
    for c in 0..g.c_in {
        for y in 0..g.h {
            let dst = c * pp + (y + g.pad) * wp + g.pad;
            xp[dst..dst + g.w].copy_from_slice(&x[(c * g.h + y) * g.w..(c * g.h + y + 1) * g.w]);
        }
    }
    xp
}

/// Forward pass for one batch item; `out` is `c_out x oh x ow`.
pub(crate) fn shifted_conv_forward(xp: &[f64], w: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let (wp, pp, nw) = (g.padded_width(), g.padded_plane(), g.wide_out());
    let taps = g.kh * g.kw;
    let mut wide = vec![0.0; g.c_out * nw];
    for k in 0..taps {
        let off = (k / g.kw) * wp + k % g.kw;
        let a = MatRef {
            data: &w[k..],
            row_stride: g.patch(),
            col_stride: taps,
        };
        let b = MatRef {
            data: &xp[off..],
            row_stride: pp,
            col_stride: 1,
        };
        gemm(
            g.c_out,
            g.c_in,
            nw,
            a,
            b,
            if k == 0 { 0.0 } else { 1.0 },
            &mut wide,
        );
    }
    for (dst, src) in out.chunks_mut(g.ow).zip(wide.chunks(wp)) {
        dst.copy_from_slice(&src[..g.ow]);
    }
}

/// Backward pass for one batch item: accumulates into `dw` (whole weight)
/// and `dx` (this item's input gradient).
pub(crate) fn shifted_conv_backward(
    xp: &[f64],
    w: &[f64],
    gy: &[f64],
    g: &ConvGeom,
    dw: &mut [f64],
    dx: &mut [f64],
) {
    let (wp, pp, nw) = (g.padded_width(), g.padded_plane(), g.wide_out());
    let taps = g.kh * g.kw;
    let mut gw = vec![0.0; g.c_out * nw];
    for (dst, src) in gw.chunks_mut(wp).zip(gy.chunks(g.ow)) {
        dst[..g.ow].copy_from_slice(src);
    }
    let mut tap_grad = vec![0.0; g.c_out * g.c_in];
    let mut dxp = vec![0.0; g.c_in * pp + g.kw];
    for k in 0..taps {
        let off = (k / g.kw) * wp + k % g.kw;
        let xt = MatRef {
            data: &xp[off..],
            row_stride: 1,
            col_stride: pp,
        };
        gemm(
            g.c_out,
            nw,
            g.c_in,
            MatRef::rows(&gw, nw),
            xt,
            0.0,
            &mut tap_grad,
        );
        for (o, row) in tap_grad.chunks(g.c_in).enumerate() {
            for (i, v) in row.iter().enumerate() {
                dw[o * g.patch() + i * taps + k] += v;
            }
        }
        let wt = MatRef {
            data: &w[k..],
            row_stride: taps,
            col_stride: g.patch(),
        };
        gemm_ldc(
            g.c_in,
            g.c_out,
            nw,
            wt,
            MatRef::rows(&gw, nw),
            1.0,
            &mut dxp[off..],
            pp,
        );
    }
    for c in 0..g.c_in {
        for y in 0..g.h {
            let src = c * pp + (y + g.pad) * wp + g.pad;
            let dst = &mut dx[(c * g.h + y) * g.w..(c * g.h + y + 1) * g.w];
            for (d, s) in dst.iter_mut().zip(&dxp[src..src + g.w]) {
                *d += s;
            }
        }
    }
}

/// Output-plane offsets of the max in each 2x2 window; first maximum in
/// row-major window order wins ties.
pub(crate) fn max_pool_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + 2 * oy * w + 2 * ox;
                let mut best = x[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > best {
                        best = x[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    (out, argmax)
}

/// First-order hold along one axis with edge replication:
/// `out[2i] = x[i]`, `out[2i+1] = (x[i] + x[min(i+1, n-1)]) / 2`.
pub(crate) fn upsample_forward(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    // Rows first (H), then columns (W).
    let mut tall = vec![0.0; planes * oh * w];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut tall[p * oh * w..(p + 1) * oh * w];
        for i in 0..h {
            let next = (i + 1).min(h - 1);
            for j in 0..w {
                let a = src[i * w + j];
                let b = src[next * w + j];
                dst[2 * i * w + j] = a;
                dst[(2 * i + 1) * w + j] = 0.5 * (a + b);
            }
        }
    }
    let mut out = vec![0.0; planes * oh * ow];
    for r in 0..planes * oh {
        let src = &tall[r * w..(r + 1) * w];
        let dst = &mut out[r * ow..(r + 1) * ow];
        for j in 0..w {
            let next = (j + 1).min(w - 1);
            dst[2 * j] = src[j];
            dst[2 * j + 1] = 0.5 * (src[j] + src[next]);
        }
    }
    out
}

/// Adjoint of [`upsample_forward`].
pub(crate) fn upsample_backward(dy: &[f64], planes: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (oh, ow) = (2 * h, 2 * w);
    let mut tall = vec![0.0; planes * oh * w];
    for r in 0..planes * oh {
        let src = &dy[r * ow..(r + 1) * ow];
        let dst = &mut tall[r * w..(r + 1) * w];
        for j in 0..w {
            let next = (j + 1).min(w - 1);
            dst[j] += src[2 * j] + 0.5 * src[2 * j + 1];
            dst[next] += 0.5 * src[2 * j + 1];
        }
    }
    for p in 0..planes {
        let src = &tall[p * oh * w..(p + 1) * oh * w];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..h {
            let next = (i + 1).min(h - 1);
            for j in 0..w {
                let even = src[2 * i * w + j];
                let odd = src[(2 * i + 1) * w + j];
                dst[i * w + j] += even + 0.5 * odd;
                dst[next * w + j] += 0.5 * odd;
            }
        }
    }
}
