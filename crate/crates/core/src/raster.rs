//! 8-bit RGB images, binary masks and resampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(any(feature = "std", test)))]
use num_traits::Float;

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.width > 0 && self.height > 0 && self.x + self.width <= width && self.y + self.height <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub(crate) fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(Error::OutOfBounds { region: [self.x, self.y, self.width, self.height], width, height })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Invalid(format!("{}x{} RGB image needs {} bytes", width, height, width * height * 3)));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let data = color.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn crop(&self, r: Rect) -> Result<Self> {
        r.check(self.width, self.height)?;
        let mut data = Vec::with_capacity(r.area() * 3);
        for y in r.y..r.y + r.height {
            let start = (y * self.width + r.x) * 3;
            data.extend_from_slice(&self.data[start..start + r.width * 3]);
        }
        Ok(Self { width: r.width, height: r.height, data })
    }

    /// Overwrite the area at `(x, y)` with `patch`.
    pub fn paste(&mut self, patch: &RgbImage, x: usize, y: usize) -> Result<()> {
        Rect::new(x, y, patch.width, patch.height).check(self.width, self.height)?;
        for row in 0..patch.height {
            let dst = ((y + row) * self.width + x) * 3;
            let src = row * patch.width * 3;
            self.data[dst..dst + patch.width * 3].copy_from_slice(&patch.data[src..src + patch.width * 3]);
        }
        Ok(())
    }

    /// Bilinear resampling with half-pixel centres; an equal-size resize
    /// reproduces the input exactly.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        let planar = self.resample_f64(width, height)?;
        let data = planar.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        Ok(Self { width, height, data })
    }

    /// Bilinear resample into interleaved `f64` values on the 0..=255 scale.
    pub fn resample_f64(&self, width: usize, height: usize) -> Result<Vec<f64>> {
        if width == 0 || height == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("resize to or from an empty image".into()));
        }
        let xs = axis_weights(self.width, width);
        let ys = axis_weights(self.height, height);
        let mut out = Vec::with_capacity(width * height * 3);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                for c in 0..3 {
                    let at = |x: usize, y: usize| self.data[(y * self.width + x) * 3 + c] as f64;
                    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                    out.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        Ok(out)
    }
}

/// Source taps and weight of each destination coordinate.
fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

fn nearest_index(d: usize, src: usize, dst: usize) -> usize {
    (((d as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)
}

/// Binary mask, `1` marks forged pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Invalid(format!("{}x{} mask needs {} values", width, height, width * height)));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::NonBinary);
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn from_rect(width: usize, height: usize, r: Rect) -> Result<Self> {
        r.check(width, height)?;
        let mut m = Self::empty(width, height);
        for y in r.y..r.y + r.height {
            m.data[y * width + r.x..y * width + r.x + r.width].fill(1);
        }
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn forged_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn crop(&self, r: Rect) -> Result<Self> {
        r.check(self.width, self.height)?;
        let mut data = Vec::with_capacity(r.area());
        for y in r.y..r.y + r.height {
            data.extend_from_slice(&self.data[y * self.width + r.x..y * self.width + r.x + r.width]);
        }
        Ok(Self { width: r.width, height: r.height, data })
    }

    /// Nearest-neighbour resampling; values stay in {0, 1}.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid("resize to an empty mask".into()));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = nearest_index(y, self.height, height);
            for x in 0..width {
                data.push(self.data[sy * self.width + nearest_index(x, self.width, width)]);
            }
        }
        Ok(Self { width, height, data })
    }
}

/// Centered window keeping `fraction` of each side.
pub fn centered_window(width: usize, height: usize, fraction: f64) -> Rect {
    let w = ((width as f64 * fraction).round() as usize).clamp(1, width);
    let h = ((height as f64 * fraction).round() as usize).clamp(1, height);
    Rect::new((width - w) / 2, (height - h) / 2, w, h)
}
