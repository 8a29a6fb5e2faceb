//! Synthetic document rendering and tampering.
//!
//! Documents are drawn from a [`DocumentTemplate`]: a near-white page,
//! filled shapes standing in for logos and stamps, and text in the built-in
//! 5x7 font. A smooth illumination gradient and a per-page grain make every
//! page slightly different, so pasted regions carry traces of their source.
//!
//! Tampering is labelled by region: the whole target rectangle is marked
//! forged even where the pasted pixels happen to equal the originals.

pub mod glyphs;
mod sampler;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(any(feature = "std", test)))]
use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::metrics::{categorize, ratio_fake};
use crate::raster::{Mask, Rect, RgbImage};
use crate::seed;

pub use sampler::{random_template, synthesize, Forgery, SynthConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TextLine {
    pub text: String,
    pub x: usize,
    pub y: usize,
    /// Integer magnification of the 5x7 glyphs.
    pub scale: usize,
    pub ink: [u8; 3],
}

impl TextLine {
    pub fn bounds(&self) -> Rect {
        let n = self.text.chars().count();
        Rect::new(self.x, self.y, glyphs::text_width(n, self.scale), glyphs::GLYPH_HEIGHT * self.scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Box,
    Disc,
    Ring,
}

/// Filled primitive standing in for a brand mark or stamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Icon {
    pub shape: Shape,
    pub bounds: Rect,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentTemplate {
    pub width: usize,
    pub height: usize,
    pub background: [u8; 3],
    /// Relative brightness change from the left to the right edge, and from
    /// the top to the bottom edge.
    pub illumination: [f64; 2],
    /// Amplitude of uniform per-pixel grain, in 8-bit levels.
    pub grain: u8,
    pub icons: Vec<Icon>,
    pub text: Vec<TextLine>,
}

impl DocumentTemplate {
    /// A flat page with no content.
    pub fn blank(width: usize, height: usize, background: [u8; 3]) -> Self {
        Self { width, height, background, illumination: [0.0; 2], grain: 0, icons: Vec::new(), text: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("empty canvas".into()));
        }
        if self.illumination.iter().any(|v| !v.is_finite() || v.abs() >= 1.0) {
            return Err(Error::Invalid(format!("illumination {:?} outside (-1, 1)", self.illumination)));
        }
        for icon in &self.icons {
            icon.bounds.check(self.width, self.height)?;
        }
        for line in &self.text {
            if line.scale == 0 {
                return Err(Error::Invalid("text scale must be positive".into()));
            }
            if let Some(c) = line.text.chars().find(|&c| glyphs::glyph(c).is_none()) {
                return Err(Error::Invalid(format!("no glyph for {c:?}")));
            }
            if !line.text.is_empty() {
                line.bounds().check(self.width, self.height)?;
            }
        }
        Ok(())
    }
}

fn fill_icon(img: &mut RgbImage, icon: &Icon) {
    let r = icon.bounds;
    // Twice the offsets so the centre and radius stay integral.
    let (cx, cy) = (2 * r.x + r.width - 1, 2 * r.y + r.height - 1);
    let radius = r.width.min(r.height) as i64;
    let inner = radius * 3 / 5;
    for y in r.y..r.y + r.height {
        for x in r.x..r.x + r.width {
            let (dx, dy) = (2 * x as i64 - cx as i64, 2 * y as i64 - cy as i64);
            let d2 = dx * dx + dy * dy;
            let inside = match icon.shape {
                Shape::Box => true,
                Shape::Disc => d2 <= radius * radius,
                Shape::Ring => d2 <= radius * radius && d2 >= inner * inner,
            };
            if inside {
                img.put(x, y, icon.color);
            }
        }
    }
}

fn draw_text(img: &mut RgbImage, line: &TextLine) {
    let s = line.scale;
    for (i, c) in line.text.chars().enumerate() {
        let Some(rows) = glyphs::glyph(c) else { continue };
        let left = line.x + i * glyphs::ADVANCE * s;
        for row in 0..glyphs::GLYPH_HEIGHT {
            for col in 0..glyphs::GLYPH_WIDTH {
                if !glyphs::lit(&rows, col, row) {
                    continue;
                }
                for y in 0..s {
                    for x in 0..s {
                        img.put(left + col * s + x, line.y + row * s + y, line.ink);
                    }
                }
            }
        }
    }
}

/// Rasterize a template: background, icons, text, then illumination and
/// grain. `seed` only drives the grain.
pub fn render_document(template: &DocumentTemplate, seed_value: u64) -> Result<RgbImage> {
    template.validate()?;
    let (w, h) = (template.width, template.height);
    let mut img = RgbImage::filled(w, h, template.background);
    for icon in &template.icons {
        fill_icon(&mut img, icon);
    }
    for line in &template.text {
        draw_text(&mut img, line);
    }

    let [ix, iy] = template.illumination;
    if ix != 0.0 || iy != 0.0 {
        let rel = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
        for y in 0..h {
            for x in 0..w {
                let gain = 1.0 + ix * rel(x, w) + iy * rel(y, h);
                let p = img.pixel(x, y).map(|v| (v as f64 * gain).round().clamp(0.0, 255.0) as u8);
                img.put(x, y, p);
            }
        }
    }

    if template.grain > 0 {
        let g = template.grain as i16;
        let mut rng = seed::rng(seed_value);
        for px in img.data_mut().chunks_exact_mut(3) {
            let d: i16 = rng.random_range(-g..=g);
            for v in px {
                *v = (*v as i16 + d).clamp(0, 255) as u8;
            }
        }
    }
    Ok(img)
}

/// Exact copy of `region`.
pub fn crop_donor(image: &RgbImage, region: Rect) -> Result<RgbImage> {
    image.crop(region)
}

/// Paste `patch` over `target` and mark the whole target forged.
pub fn splice(donee: &RgbImage, patch: &RgbImage, target: Rect) -> Result<(RgbImage, Mask)> {
    if (patch.width(), patch.height()) != (target.width, target.height) {
        return Err(shape_err(
            "splice",
            format!("patch {}x{} vs target {}x{}", patch.width(), patch.height(), target.width, target.height),
        ));
    }
    let mut out = donee.clone();
    out.paste(patch, target.x, target.y)?;
    let mask = Mask::from_rect(donee.width(), donee.height(), target)?;
    Ok((out, mask))
}

/// Duplicate `src` onto `dst` within one image. Content is always read from
/// the untouched input, so overlapping regions are well defined.
pub fn copy_move(image: &RgbImage, src: Rect, dst: Rect) -> Result<(RgbImage, Mask)> {
    if (src.width, src.height) != (dst.width, dst.height) {
        return Err(shape_err(
            "copy_move",
            format!("source {}x{} vs destination {}x{}", src.width, src.height, dst.width, dst.height),
        ));
    }
    if src == dst {
        return Err(Error::Invalid("copy-move source and destination are identical".into()));
    }
    let patch = image.crop(src)?;
    splice(image, &patch, dst)
}

/// Add independent N(0, sigma^2) noise to every channel value, rounding and
/// clipping to 8 bits. `sigma == 0` returns the input unchanged.
pub fn add_gaussian_noise(image: &RgbImage, sigma: f64, seed_value: u64) -> Result<RgbImage> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Invalid(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    let mut out = image.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Invalid(format!("{e}")))?;
    let mut rng = seed::rng(seed_value);
    for v in out.data_mut() {
        *v = (*v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

/// Simulate photographing a page: resample down by `scale` and back up to
/// the original size. Finer strokes and grain are smoothed away.
pub fn recapture(image: &RgbImage, scale: f64) -> Result<RgbImage> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Invalid(format!("recapture scale {scale} outside (0, 1]")));
    }
    let (w, h) = (image.width(), image.height());
    let sw = ((w as f64 * scale).round() as usize).max(1);
    let sh = ((h as f64 * scale).round() as usize).max(1);
    image.resize_bilinear(sw, sh)?.resize_bilinear(w, h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ForgeryKind {
    Splice,
    CopyMove,
}

impl ForgeryKind {
    pub fn name(self) -> &'static str {
        match self {
            ForgeryKind::Splice => "splice",
            ForgeryKind::CopyMove => "copy_move",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "splice" => Some(ForgeryKind::Splice),
            "copy_move" => Some(ForgeryKind::CopyMove),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DonorSource {
    /// Copy-move within the donee itself.
    SelfImage,
    /// A separately rendered document, identified by its seed.
    Document { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgeryRecipe {
    pub kind: ForgeryKind,
    pub donor: DonorSource,
    pub donor_region: Rect,
    pub target_region: Rect,
    /// Downscale factor of the donor's recapture pass; `None` when the
    /// donor was not recaptured.
    pub recapture_scale: Option<f64>,
    pub noise_sigma: f64,
    pub jpeg_quality: Option<u8>,
    pub seed: u64,
}

/// A tampered image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentSample {
    pub id: u64,
    pub image: RgbImage,
    pub mask: Mask,
    pub recipe: ForgeryRecipe,
    pub ratio_fake: f64,
    pub category: u8,
}

impl DocumentSample {
    /// Bundle an image and mask, deriving the fake ratio and category from
    /// the mask. An all-forged mask gets an infinite ratio (category 4).
    pub fn new(id: u64, image: RgbImage, mask: Mask, recipe: ForgeryRecipe) -> Result<Self> {
        if (image.width(), image.height()) != (mask.width(), mask.height()) {
            return Err(shape_err(
                "document_sample",
                format!("image {}x{} vs mask {}x{}", image.width(), image.height(), mask.width(), mask.height()),
            ));
        }
        let ratio = match ratio_fake(mask.data()) {
            Ok(r) => r,
            Err(Error::AllFake) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        Ok(Self { id, image, mask, recipe, ratio_fake: ratio, category: categorize(ratio) })
    }
}
