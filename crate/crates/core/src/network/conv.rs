//! im2col convolution kernels and their adjoints.
//!
//! Columns are laid out `[in_c * kh * kw, out_h * out_w]` (row index
//! `(c, ki, kj)`, column index `(oy, ox)`), so a forward convolution is one
//! `[out_c, K] x [K, P]` product and the adjoint is `[K, out_c] x [out_c, P]`
//! followed by a scatter back to the input grid.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// `floor((n + 2 pad - k) / stride) + 1`, or `None` when the kernel does not
/// fit the padded extent.
pub fn conv_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

impl ConvGeom {
    pub fn new(
        in_shape: [usize; 3],
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let [in_c, in_h, in_w] = in_shape;
        Some(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            pad,
            out_h: conv_out_extent(in_h, kh, stride, pad)?,
            out_w: conv_out_extent(in_w, kw, stride, pad)?,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_plane()
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `lo..hi` whose input column `ox + kj - pad` is in bounds,
/// for unit stride.
fn unit_stride_span(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).min(g.out_w);
    let hi = (g.in_w + g.pad).saturating_sub(kj).min(g.out_w).max(lo);
    (lo, hi)
}

pub fn im2col(input: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let plane = g.out_plane();
    debug_assert_eq!(cols.len(), g.patch_len() * plane);
    let mut row = 0;
    for c in 0..g.in_c {
        let chan = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &chan[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    if g.stride == 1 {
                        let (lo, hi) = unit_stride_span(g, kj);
                        out_row[..lo].fill(0.0);
                        out_row[hi..].fill(0.0);
                        if lo < hi {
                            let off = lo + kj - g.pad;
                            out_row[lo..hi].copy_from_slice(&src[off..off + (hi - lo)]);
                        }
                        continue;
                    }
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add of columns back onto the input grid (adjoint of [`im2col`]).
pub fn col2im(cols: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let plane = g.out_plane();
    debug_assert_eq!(out.len(), g.in_len());
    let mut row = 0;
    for c in 0..g.in_c {
        let chan = &mut out[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut chan[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    if g.stride == 1 {
                        let (lo, hi) = unit_stride_span(g, kj);
                        if lo < hi {
                            let off = lo + kj - g.pad;
                            let row = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                            for (d, &v) in dst[off..off + (hi - lo)].iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Row-major matrix view: `rows x cols` with explicit strides so transposes
/// are free.
#[derive(Clone, Copy)]
pub struct Mat<'a> {
    pub data: &'a [f32],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> Mat<'a> {
    pub fn rm(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub fn tr(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` row-major.
pub fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32]) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the views describe in-bounds `m x k`, `k x n` and `m x n`
    // matrices; callers size every buffer from the same ConvGeom / layer dims.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward convolution; `weights` is `[out_c, in_c, kh, kw]`.
pub fn conv2d(input: &[f32], weights: &[f32], bias: Option<&[f32]>, g: &ConvGeom) -> Vec<f32> {
    let plane = g.out_plane();
    let mut out = vec![0.0f32; g.out_len()];
    if let Some(b) = bias {
        for (o, &bv) in out.chunks_exact_mut(plane).zip(b) {
            o.fill(bv);
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    if g.is_pointwise() {
        gemm(g.out_c, g.in_c, plane, Mat::rm(weights, g.in_c), Mat::rm(input, plane), beta, &mut out);
    } else {
        let mut cols = vec![0.0f32; g.patch_len() * plane];
        im2col(input, g, &mut cols);
        let k = g.patch_len();
        gemm(g.out_c, k, plane, Mat::rm(weights, k), Mat::rm(&cols, plane), beta, &mut out);
    }
    out
}

/// Adjoint (transpose) of [`conv2d`] without bias: maps an output-shaped
/// signal back to the input grid through the same kernels.
pub fn conv2d_adjoint(signal: &[f32], weights: &[f32], g: &ConvGeom) -> Vec<f32> {
    let plane = g.out_plane();
    let k = g.patch_len();
    if g.is_pointwise() {
        let mut out = vec![0.0f32; g.in_len()];
        gemm(k, g.out_c, plane, Mat::tr(weights, k), Mat::rm(signal, plane), 0.0, &mut out);
        return out;
    }
    let mut cols = vec![0.0f32; k * plane];
    gemm(k, g.out_c, plane, Mat::tr(weights, k), Mat::rm(signal, plane), 0.0, &mut cols);
    let mut out = vec![0.0f32; g.in_len()];
    col2im(&cols, g, &mut out);
    out
}

/// Accumulates `dW += grad_out * cols^T` and `db += row sums of grad_out`.
pub fn conv2d_param_grad(input: &[f32], grad_out: &[f32], g: &ConvGeom, dw: &mut [f32], db: &mut [f32]) {
    let plane = g.out_plane();
    let k = g.patch_len();
    if g.is_pointwise() {
        gemm(g.out_c, plane, k, Mat::rm(grad_out, plane), Mat::tr(input, plane), 1.0, dw);
    } else {
        let mut cols = vec![0.0f32; k * plane];
        im2col(input, g, &mut cols);
        gemm(g.out_c, plane, k, Mat::rm(grad_out, plane), Mat::tr(&cols, plane), 1.0, dw);
    }
    for (d, row) in db.iter_mut().zip(grad_out.chunks_exact(plane)) {
        *d += row.iter().sum::<f32>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f32], w: &[f32], g: &ConvGeom) -> Vec<f32> {
        let mut out = vec![0.0f32; g.out_len()];
        for o in 0..g.out_c {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = 0.0f64;
                    for c in 0..g.in_c {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                    continue;
                                }
                                let x = input[(c * g.in_h + iy as usize) * g.in_w + ix as usize];
                                let wv = w[((o * g.in_c + c) * g.kh + ki) * g.kw + kj];
                                acc += x as f64 * wv as f64;
                            }
                        }
                    }
                    out[(o * g.out_h + oy) * g.out_w + ox] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loop() {
        let g = ConvGeom::new([2, 5, 6], 3, 3, 2, 2, 1).unwrap();
        let input: Vec<f32> = (0..g.in_len()).map(|i| ((i * 7) % 11) as f32 / 11.0).collect();
        let w: Vec<f32> = (0..g.out_c * g.patch_len()).map(|i| ((i * 5) % 13) as f32 / 13.0 - 0.5).collect();
        let fast = conv2d(&input, &w, None, &g);
        let slow = naive_conv(&input, &w, &g);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn hand_computed_2x2_kernel() {
        // 3x3 image, 2x2 kernel [[1,0],[0,-1]]: out[y][x] = in[y][x] - in[y+1][x+1].
        let g = ConvGeom::new([1, 3, 3], 1, 2, 2, 1, 0).unwrap();
        let input = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let w = [1.0, 0.0, 0.0, -1.0];
        let out = conv2d(&input, &w, Some(&[0.5]), &g);
        assert_eq!(out, vec![1.0 - 5.0 + 0.5, 2.0 - 6.0 + 0.5, 4.0 - 8.0 + 0.5, 5.0 - 9.0 + 0.5]);
    }

    #[test]
    fn out_extent_formula() {
        assert_eq!(conv_out_extent(32, 3, 1, 1), Some(32));
        assert_eq!(conv_out_extent(5, 3, 2, 0), Some(2));
        assert_eq!(conv_out_extent(2, 5, 1, 1), None);
        assert_eq!(conv_out_extent(4, 3, 0, 0), None);
    }
}
