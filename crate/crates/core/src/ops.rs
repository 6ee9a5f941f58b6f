//! Small dense kernels shared by training and inference.

/// Output spatial size of a convolution, or `None` when the kernel does not fit.
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: conv_out_size(height, kernel, stride, pad)?,
            out_w: conv_out_size(width, kernel, stride, pad)?,
        })
    }

    /// Rows of the column matrix: `channels * kernel * kernel`, ordered (ch, k_row, k_col).
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds a `[c, h, w]` image into a `[c*k*k, out_h*out_w]` column matrix.
/// Out-of-bounds taps read `T::default()` (zero).
pub fn im2col<T: Copy + Default>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let n = g.col_cols();
    let mut cols = vec![T::default(); g.col_rows() * n];
    for c in 0..g.channels {
        for kr in 0..g.kernel {
            for kc in 0..g.kernel {
                let row = (c * g.kernel + kr) * g.kernel + kc;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + kr) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kc) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        dst[oy * g.out_w + ox] =
                            input[(c * g.height + iy as usize) * g.width + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let n = g.col_cols();
    let mut img = vec![0.0; g.channels * g.height * g.width];
    for c in 0..g.channels {
        for kr in 0..g.kernel {
            for kc in 0..g.kernel {
                let row = (c * g.kernel + kr) * g.kernel + kc;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + kr) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kc) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        img[(c * g.height + iy as usize) * g.width + ix as usize] +=
                            src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
    img
}

/// `out[r, j] = sum_k a[r, k] * b[k, j]` for row-major `a: [rows, inner]`, `b: [inner, cols]`.
pub fn matmul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let orow = &mut out[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let av = a[r * inner + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b[k * cols..(k + 1) * cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// 2x2 max pooling with stride 2 over `[c, h, w]`; returns values and flat argmax indices.
pub fn maxpool2x2<T: Copy + PartialOrd>(
    input: &[T],
    channels: usize,
    height: usize,
    width: usize,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut idx = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (c * height + 2 * y) * width + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (c * height + 2 * y + dy) * width + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_identity_kernel() {
        let g = ConvGeometry::new(1, 3, 3, 1, 1, 0).unwrap();
        let img: Vec<f64> = (0..9).map(f64::from).collect();
        assert_eq!(im2col(&img, &g), img);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry::new(2, 5, 4, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pool_picks_first_max() {
        let (v, i) = maxpool2x2(&[1.0, 3.0, 3.0, 0.0], 1, 2, 2);
        assert_eq!(v, vec![3.0]);
        assert_eq!(i, vec![1]);
    }
}
