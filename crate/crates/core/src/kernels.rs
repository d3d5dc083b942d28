//! Raw numeric kernels shared by the tape ops: GEMM and image/column transforms.

/// `c = beta * c + a' * b'` where `a'` is `m x k` and `b'` is `k x n`, all row-major.
/// `ta`/`tb` select whether the stored buffers hold the transposes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the buffers whose lengths were checked.
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

/// Geometry of a strided, zero-padded square-kernel correlation over `batch`
/// images stored as `[channels, batch, in_h, in_w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// Output indices `o` in `0..out` whose input index `o * stride + tap - pad` lies in `0..len`.
fn valid_range(out: usize, stride: usize, tap: usize, pad: usize, len: usize) -> std::ops::Range<usize> {
    let lo = pad.saturating_sub(tap).div_ceil(stride);
    let hi = (len + pad).saturating_sub(tap).div_ceil(stride).min(out);
    lo.min(hi)..hi
}

/// Unfold `img` (`channels x batch x in_h x in_w`) into
/// `(channels*k*k) x (batch*out_h*out_w)`.
pub(crate) fn im2col(img: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (ncols, in_plane, out_plane) = (g.cols(), g.in_h * g.in_w, g.out_h * g.out_w);
    let mut row = 0;
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            let ys = valid_range(g.out_h, g.stride, ky, g.pad, g.in_h);
            for kx in 0..g.kernel {
                let xs = valid_range(g.out_w, g.stride, kx, g.pad, g.in_w);
                for n in 0..g.batch {
                    let plane = &img[(c * g.batch + n) * in_plane..(c * g.batch + n + 1) * in_plane];
                    let start = row * ncols + n * out_plane;
                    let dst = &mut cols[start..start + out_plane];
                    dst[..ys.start * g.out_w].fill(0.0);
                    dst[ys.end * g.out_w..].fill(0.0);
                    for oy in ys.clone() {
                        let iy = oy * g.stride + ky - g.pad;
                        let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        line[..xs.start].fill(0.0);
                        line[xs.end..].fill(0.0);
                        if xs.is_empty() {
                            continue;
                        }
                        let ix = xs.start * g.stride + kx - g.pad;
                        let src = plane[iy * g.in_w + ix..(iy + 1) * g.in_w].iter().step_by(g.stride);
                        for (v, s) in line[xs.clone()].iter_mut().zip(src) {
                            *v = *s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `img`.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let (ncols, in_plane, out_plane) = (g.cols(), g.in_h * g.in_w, g.out_h * g.out_w);
    let mut row = 0;
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            let ys = valid_range(g.out_h, g.stride, ky, g.pad, g.in_h);
            for kx in 0..g.kernel {
                let xs = valid_range(g.out_w, g.stride, kx, g.pad, g.in_w);
                let r = row;
                row += 1;
                if xs.is_empty() {
                    continue;
                }
                for n in 0..g.batch {
                    let plane = &mut img[(c * g.batch + n) * in_plane..(c * g.batch + n + 1) * in_plane];
                    let src = &cols[r * ncols + n * out_plane..r * ncols + (n + 1) * out_plane];
                    for oy in ys.clone() {
                        let iy = oy * g.stride + ky - g.pad;
                        let ix = xs.start * g.stride + kx - g.pad;
                        let dst = plane[iy * g.in_w + ix..(iy + 1) * g.in_w].iter_mut().step_by(g.stride);
                        for (d, s) in dst.zip(&src[oy * g.out_w + xs.start..oy * g.out_w + xs.end]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}
