//! im2col / col2im kernels shared by convolution and its transpose.

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Conv2dOpts {
    pub const fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self { stride, dilation, padding }
    }

    /// Stride 1 with padding equal to the dilation: a 3x3 kernel keeps the
    /// spatial size.
    pub const fn same3x3(dilation: usize) -> Self {
        Self::new(1, dilation, dilation)
    }
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Self::new(1, 1, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTransposeOpts {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTransposeOpts {
    pub const fn new(stride: usize, padding: usize, output_padding: usize) -> Self {
        Self { stride, padding, output_padding }
    }

    /// Kernel 4, stride 2, padding 1: exact x2 upsampling.
    pub const fn doubling() -> Self {
        Self::new(2, 1, 0)
    }
}

/// `floor((size + 2p - d(k-1) - 1) / s) + 1`, or `None` when that is < 1.
pub fn conv_out_size(size: usize, kernel: usize, opts: Conv2dOpts) -> Option<usize> {
    if opts.stride == 0 || opts.dilation == 0 || kernel == 0 {
        return None;
    }
    let span = opts.dilation * (kernel - 1) + 1;
    let padded = size + 2 * opts.padding;
    (padded >= span).then(|| (padded - span) / opts.stride + 1)
}

/// `(size - 1) s - 2p + k + output_padding`, or `None` for invalid geometry.
pub fn conv_transpose_out_size(size: usize, kernel: usize, opts: ConvTransposeOpts) -> Option<usize> {
    if opts.stride == 0 || size == 0 || kernel == 0 || opts.output_padding >= opts.stride {
        return None;
    }
    let full = (size - 1) * opts.stride + kernel + opts.output_padding;
    (full > 2 * opts.padding).then(|| full - 2 * opts.padding)
}

/// Geometry of one image plane walked by a kernel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Plane {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Plane {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn walk(&self, mut visit: impl FnMut(usize, Option<usize>)) {
        let hw = self.height * self.width;
        let cols = self.col_cols();
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki * self.dilation) as isize - self.padding as isize;
                        let base = row * cols + oy * self.out_w;
                        if iy < 0 || iy >= self.height as isize {
                            for ox in 0..self.out_w {
                                visit(base + ox, None);
                            }
                            continue;
                        }
                        let src_row = c * hw + iy as usize * self.width;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj * self.dilation) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.width as isize {
                                visit(base + ox, None);
                            } else {
                                visit(base + ox, Some(src_row + ix as usize));
                            }
                        }
                    }
                }
            }
        }
    }

    /// Unfold one `C x H x W` image into a `(C kh kw) x (out_h out_w)` matrix.
    pub fn im2col<T: Real>(&self, image: &[T], col: &mut [T]) {
        self.walk(|dst, src| col[dst] = src.map_or(T::zero(), |s| image[s]));
    }

    /// Adjoint of [`Plane::im2col`]: scatter-add columns back into the image.
    pub fn col2im<T: Real>(&self, col: &[T], image: &mut [T]) {
        self.walk(|src, dst| {
            if let Some(d) = dst {
                image[d] = image[d] + col[src];
            }
        });
    }
}
