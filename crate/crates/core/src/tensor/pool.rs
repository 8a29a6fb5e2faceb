use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Pooling window. Padding is `[top, left, bottom, right]`; padded cells are
/// skipped (max) or excluded from the divisor (avg), so a constant input
/// pools to the same constant under every configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2d {
    pub mode: PoolMode,
    pub kernel: usize,
    pub stride: usize,
    pub pad: [usize; 4],
}

impl Pool2d {
    pub const fn new(mode: PoolMode, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { mode, kernel, stride, pad: [padding; 4] }
    }

    /// Kernel 2, stride 1, one extra row/column at the bottom/right: output
    /// size equals input size.
    pub const fn max_same() -> Self {
        Self { mode: PoolMode::Max, kernel: 2, stride: 1, pad: [0, 0, 1, 1] }
    }

    /// Kernel 2, stride 2: halves both spatial dims.
    pub const fn halving(mode: PoolMode) -> Self {
        Self::new(mode, 2, 2, 0)
    }

    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let [top, left, bottom, right] = self.pad;
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Invalid("pool kernel and stride must be positive".into()));
        }
        if top.max(bottom).max(left).max(right) >= self.kernel {
            return Err(Error::Invalid("pool padding must be smaller than the kernel".into()));
        }
        let ph = h + top + bottom;
        let pw = w + left + right;
        if ph < self.kernel || pw < self.kernel || h == 0 || w == 0 {
            return Err(Error::EmptyOutput { op: "pool2d", input: alloc::vec![h, w] });
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    /// Valid input rows/cols `[y0, y1) x [x0, x1)` covered by output `(oy, ox)`.
    pub(crate) fn window(&self, oy: usize, ox: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let [top, left, ..] = self.pad;
        let ys = (oy * self.stride) as isize - top as isize;
        let xs = (ox * self.stride) as isize - left as isize;
        let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize) as usize;
        (
            clamp(ys, h),
            clamp(ys + self.kernel as isize, h),
            clamp(xs, w),
            clamp(xs + self.kernel as isize, w),
        )
    }
}
