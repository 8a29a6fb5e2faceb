//! Random templates, tamper-region sampling and whole-sample synthesis.

use alloc::format;
use alloc::string::String;

#[cfg(not(any(feature = "std", test)))]
use num_traits::Float;
use rand::Rng as _;

use super::glyphs::{text_width, GLYPH_HEIGHT, LINE_HEIGHT};
use super::{
    add_gaussian_noise, copy_move, crop_donor, recapture, render_document, splice, DocumentTemplate, DonorSource,
    ForgeryKind, ForgeryRecipe, Icon, Shape, TextLine,
};
use crate::error::{Error, Result};
use crate::metrics::categorize;
use crate::raster::{Mask, Rect, RgbImage};
use crate::seed::{self, Rng};

const WORDS: &[&str] = &[
    "NOTARY", "ADDRESS", "DATE", "NO.", "TRADEMARK", "REG.", "CLASS", "OWNER", "CO.,LTD", "ROAD", "CITY", "TEL:",
    "GOODS", "SERVICES", "SEAL", "OFFICE", "APPLICANT", "FILED", "VALID", "ISSUED", "BY", "OF", "THE", "AND",
];

/// Largest fake ratio the category-4 sampler aims for, so a target region
/// never covers the whole page.
const MAX_RATIO: f64 = 3.0;
const REGION_ATTEMPTS: usize = 64;

/// Generator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Probability that a sample is a splice rather than a copy-move.
    pub splice_fraction: f64,
    /// Target share of categories 1 to 4.
    pub category_mix: [f64; 4],
    /// Smallest fake ratio drawn for category 1.
    pub min_ratio: f64,
    /// Noise sigma range, drawn uniformly.
    pub noise_sigma: (f64, f64),
    /// JPEG quality range, drawn uniformly; `None` disables compression.
    pub jpeg_quality: Option<(u8, u8)>,
    /// Range of the donor recapture scale for splices, drawn uniformly;
    /// `None` pastes donor pixels as rendered.
    pub recapture_scale: Option<(f64, f64)>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            splice_fraction: 0.5,
            category_mix: [0.38, 0.35, 0.24, 0.03],
            min_ratio: 0.02,
            noise_sigma: (0.0, 8.0),
            jpeg_quality: Some((70, 95)),
            recapture_scale: Some((0.4, 0.7)),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.width < 16 || self.height < 16 {
            return bad(format!("canvas {}x{} smaller than 16x16", self.width, self.height));
        }
        if !(0.0..=1.0).contains(&self.splice_fraction) {
            return bad(format!("splice_fraction {} outside [0, 1]", self.splice_fraction));
        }
        let total: f64 = self.category_mix.iter().sum();
        if self.category_mix.iter().any(|&p| p.is_nan() || p < 0.0) || total.is_nan() || total <= 0.0 {
            return bad(format!("category_mix {:?} must be non-negative with a positive sum", self.category_mix));
        }
        if !(self.min_ratio > 0.0 && self.min_ratio < 0.1) {
            return bad(format!("min_ratio {} outside (0, 0.1)", self.min_ratio));
        }
        let (lo, hi) = self.noise_sigma;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("noise sigma range ({lo}, {hi}) invalid"));
        }
        if let Some((lo, hi)) = self.jpeg_quality {
            if lo == 0 || hi > 100 || lo > hi {
                return bad(format!("JPEG quality range ({lo}, {hi}) outside 1..=100"));
            }
        }
        if let Some((lo, hi)) = self.recapture_scale {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(format!("recapture scale range ({lo}, {hi}) outside (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Everything produced for one generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Forgery {
    pub id: u64,
    pub pristine: RgbImage,
    /// Tampered image before any post-processing.
    pub tampered: RgbImage,
    /// `tampered` with noise added; JPEG is applied by the caller.
    pub noisy: RgbImage,
    pub mask: Mask,
    pub recipe: ForgeryRecipe,
    pub ratio_fake: f64,
    pub category: u8,
}

fn jitter(rng: &mut Rng, base: [u8; 3], spread: i16) -> [u8; 3] {
    base.map(|v| (v as i16 + rng.random_range(-spread..=spread)).clamp(0, 255) as u8)
}

fn random_line(rng: &mut Rng, max_chars: usize) -> String {
    let mut s = String::new();
    loop {
        let word: String = if rng.random_bool(0.25) {
            let digits = rng.random_range(2..=6);
            let mut d = String::with_capacity(digits);
            for _ in 0..digits {
                d.push(char::from(b'0' + rng.random_range(0..10u8)));
            }
            d
        } else {
            WORDS[rng.random_range(0..WORDS.len())].into()
        };
        let extra = word.len() + usize::from(!s.is_empty());
        if s.len() + extra > max_chars {
            if s.is_empty() {
                s.push_str(&word[..max_chars.min(word.len())]);
            }
            return s;
        }
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(&word);
        if rng.random_bool(0.2) {
            return s;
        }
    }
}

/// A random page: tinted near-white paper, one or two coloured marks and
/// lines of dark text down the page.
pub fn random_template(config: &SynthConfig, rng: &mut Rng) -> DocumentTemplate {
    let (w, h) = (config.width, config.height);
    let unit = (w.min(h) / 128).max(1);
    // Pages come from different captures: white balance, exposure and
    // sensor grain all vary from one document to the next.
    let paper = rng.random_range(205..=250u8);
    let mut t = DocumentTemplate::blank(w, h, jitter(rng, [paper; 3], 16).map(|v| v.max(190)));
    t.illumination = [rng.random_range(-0.3..=0.3), rng.random_range(-0.3..=0.3)];
    t.grain = rng.random_range(0..=8);

    const PALETTE: [[u8; 3]; 3] = [[200, 30, 40], [30, 60, 170], [30, 130, 60]];
    for _ in 0..rng.random_range(1..=2) {
        let side = rng.random_range(10 * unit..=(30 * unit).min(w.min(h) / 3));
        let shape = [Shape::Box, Shape::Disc, Shape::Ring][rng.random_range(0..3)];
        let bounds = Rect::new(rng.random_range(0..=w - side), rng.random_range(0..=h - side), side, side);
        let base = PALETTE[rng.random_range(0..PALETTE.len())];
        let color = jitter(rng, base, 20);
        t.icons.push(Icon { shape, bounds, color });
    }

    let margin = 4 * unit;
    let ink = jitter(rng, [30; 3], 30);
    let mut y = margin + rng.random_range(0..=4 * unit);
    loop {
        let scale = unit * if rng.random_bool(0.7) { 1 } else { 2 };
        if y + GLYPH_HEIGHT * scale + margin > h {
            break;
        }
        let x = margin + rng.random_range(0..=8 * unit);
        let room = w.saturating_sub(x + margin);
        let max_chars = (0..).take_while(|&n| text_width(n, scale) <= room).last().unwrap_or(0);
        if max_chars > 0 {
            let text = random_line(rng, max_chars);
            t.text.push(TextLine { text, x, y, scale, ink });
        }
        y += LINE_HEIGHT * scale + rng.random_range(2 * unit..=6 * unit);
    }
    t
}

fn draw_category(mix: &[f64; 4], rng: &mut Rng) -> u8 {
    let total: f64 = mix.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (k, &p) in mix.iter().enumerate() {
        if u < p {
            return k as u8 + 1;
        }
        u -= p;
    }
    mix.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u8 + 1
}

fn region_ratio(w: usize, h: usize, total: usize) -> f64 {
    (w * h) as f64 / (total - w * h) as f64
}

/// Width and height of a text-like (wider than tall) region whose fake
/// ratio falls in `category`. Gives up after a bounded number of attempts
/// and returns the last candidate.
fn region_size(config: &SynthConfig, category: u8, rng: &mut Rng) -> (usize, usize) {
    let (w_max, h_max) = (config.width, config.height);
    let total = w_max * h_max;
    let (lo, hi) = match category {
        1 => (config.min_ratio, 0.10),
        2 => (0.10, 0.20),
        3 => (0.20, 0.50),
        _ => (0.50, MAX_RATIO),
    };
    let mut best = (1, 1);
    for _ in 0..REGION_ATTEMPTS {
        let r = rng.random_range(lo..=hi);
        let area = r * total as f64 / (1.0 + r);
        let aspect = rng.random_range(1.0..=4.0);
        let w = ((area * aspect).sqrt().round() as usize).clamp(1, w_max);
        let h = ((area / w as f64).round() as usize).clamp(1, h_max);
        if w * h >= total {
            continue;
        }
        best = (w, h);
        if categorize(region_ratio(w, h, total)) == category {
            break;
        }
    }
    best
}

/// Place a `w x h` region vertically centred on a random text line, or
/// anywhere on a page without text.
fn place_near_text(t: &DocumentTemplate, w: usize, h: usize, rng: &mut Rng) -> Rect {
    let x = rng.random_range(0..=t.width - w);
    let y = if t.text.is_empty() {
        rng.random_range(0..=t.height - h)
    } else {
        let line = &t.text[rng.random_range(0..t.text.len())];
        let centre = line.y + GLYPH_HEIGHT * line.scale / 2;
        centre.saturating_sub(h / 2).min(t.height - h)
    };
    Rect::new(x, y, w, h)
}

fn draw_quality(config: &SynthConfig, rng: &mut Rng) -> Option<u8> {
    config.jpeg_quality.map(|(lo, hi)| rng.random_range(lo..=hi))
}

/// Generate sample `id`. The result depends only on `(config, id, seed)`.
pub fn synthesize(config: &SynthConfig, id: u64, seed_value: u64) -> Result<Forgery> {
    config.validate()?;
    let s = seed::derive(seed_value, id);
    let donee = random_template(config, &mut seed::rng(seed::derive(s, 1)));
    let pristine = render_document(&donee, seed::derive(s, 2))?;

    let mut rng = seed::rng(seed::derive(s, 3));
    let kind = if rng.random_bool(config.splice_fraction) { ForgeryKind::Splice } else { ForgeryKind::CopyMove };
    let category = draw_category(&config.category_mix, &mut rng);
    let (w, h) = region_size(config, category, &mut rng);
    let target = place_near_text(&donee, w, h, &mut rng);

    let (donor, donor_region, recapture_scale, (tampered, mask)) = match kind {
        ForgeryKind::Splice => {
            let donor_seed = seed::derive(s, 4);
            let donor_t = random_template(config, &mut seed::rng(seed::derive(donor_seed, 1)));
            let mut donor_img = render_document(&donor_t, seed::derive(donor_seed, 2))?;
            let region = place_near_text(&donor_t, w, h, &mut rng);
            let scale = config.recapture_scale.map(|(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo });
            if let Some(scale) = scale {
                donor_img = recapture(&donor_img, scale)?;
            }
            let patch = crop_donor(&donor_img, region)?;
            (DonorSource::Document { seed: donor_seed }, region, scale, splice(&pristine, &patch, target)?)
        }
        ForgeryKind::CopyMove => {
            let mut src = place_near_text(&donee, w, h, &mut rng);
            while src == target {
                src = Rect::new(rng.random_range(0..=donee.width - w), rng.random_range(0..=donee.height - h), w, h);
            }
            (DonorSource::SelfImage, src, None, copy_move(&pristine, src, target)?)
        }
    };

    let (lo, hi) = config.noise_sigma;
    let noise_sigma = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let jpeg_quality = draw_quality(config, &mut rng);
    let noisy = add_gaussian_noise(&tampered, noise_sigma, seed::derive(s, 5))?;

    let ratio_fake = crate::metrics::ratio_fake(mask.data())?;
    let recipe = ForgeryRecipe {
        kind,
        donor,
        donor_region,
        target_region: target,
        recapture_scale,
        noise_sigma,
        jpeg_quality,
        seed: s,
    };
    Ok(Forgery { id, pristine, tampered, noisy, mask, recipe, ratio_fake, category: categorize(ratio_fake) })
}
