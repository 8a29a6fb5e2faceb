//! PNG and JPEG codecs, post-processing and checkpoint files.

use std::fs;
use std::path::Path;

use ctpnet_core::model::Model;
use ctpnet_core::raster::{Mask, RgbImage};
use ctpnet_core::synth::add_gaussian_noise;
use ctpnet_core::Error as CoreError;
use image::{GrayImage, ImageFormat};
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};

use crate::error::{AppError, Result};

/// Qualities at or above this keep full-resolution chroma.
pub const FULL_CHROMA_QUALITY: u8 = 95;

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, ImageFormat::Png).map_err(AppError::image(path))
}

/// Any format the `image` crate can decode, converted to 8-bit RGB.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(AppError::image(path))?.into_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::new(w as usize, h as usize, img.into_raw())?)
}

/// Masks are stored as 8-bit grayscale with forged = 255.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes = mask.data().iter().map(|&v| v * 255).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes).expect("buffer length matches dimensions");
    buf.save_with_format(path, ImageFormat::Png).map_err(AppError::image(path))
}

/// Reads a `{0, 255}` grayscale mask. Any other gray level is rejected.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(AppError::image(path))?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| match v {
            0 => Ok(0),
            255 => Ok(1),
            _ => Err(CoreError::NonBinary),
        })
        .collect::<std::result::Result<Vec<u8>, _>>()?;
    Ok(Mask::new(w as usize, h as usize, data)?)
}

/// Grayscale PNG of values in `[0, 1]`, scaled to 0..=255.
pub fn write_prob_png(path: &Path, width: usize, height: usize, prob: &[f32]) -> Result<()> {
    let bytes = prob.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| AppError::Core(CoreError::Invalid(format!("{} values for a {width}x{height} map", prob.len()))))?;
    buf.save_with_format(path, ImageFormat::Png).map_err(AppError::image(path))
}

fn check_quality(quality: u8) -> Result<()> {
    if (1..=100).contains(&quality) {
        Ok(())
    } else {
        Err(CoreError::Invalid(format!("jpeg quality {quality} outside 1..=100")).into())
    }
}

/// Baseline JPEG bytes. Chroma is subsampled 4:2:0 below
/// [`FULL_CHROMA_QUALITY`] and kept at 4:4:4 from there up.
pub fn encode_jpeg(img: &RgbImage, quality: u8) -> Result<Vec<u8>> {
    check_quality(quality)?;
    let (w, h) = (img.width(), img.height());
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(AppError::Jpeg(format!("{w}x{h} exceeds the JPEG size limit")));
    }
    let mut out = Vec::new();
    let mut enc = Encoder::new(&mut out, quality);
    enc.set_sampling_factor(if quality < FULL_CHROMA_QUALITY { SamplingFactor::R_4_2_0 } else { SamplingFactor::R_4_4_4 });
    enc.encode(img.data(), w as u16, h as u16, ColorType::Rgb).map_err(|e| AppError::Jpeg(e.to_string()))?;
    Ok(out)
}

pub fn decode_jpeg(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Jpeg)
        .map_err(|e| AppError::Jpeg(e.to_string()))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::new(w as usize, h as usize, img.into_raw())?)
}

/// Encode and decode once at `quality`.
pub fn jpeg_roundtrip(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    decode_jpeg(&encode_jpeg(img, quality)?)
}

/// Gaussian noise (clamped to 0..=255) followed by an optional JPEG pass.
/// Dimensions never change; masks are not involved.
pub fn post_process(img: &RgbImage, noise_sigma: f64, jpeg_quality: Option<u8>, seed: u64) -> Result<RgbImage> {
    if let Some(q) = jpeg_quality {
        check_quality(q)?;
    }
    let noisy = add_gaussian_noise(img, noise_sigma, seed)?;
    match jpeg_quality {
        Some(q) => jpeg_roundtrip(&noisy, q),
        None => Ok(noisy),
    }
}

pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    fs::write(path, model.to_checkpoint_bytes()).map_err(AppError::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    Ok(Model::from_checkpoint_bytes(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> RgbImage {
        let data = (0..w * h).flat_map(|i| [(i % w * 8) as u8, (i / w * 8) as u8, 128]).collect();
        RgbImage::new(w, h, data).unwrap()
    }

    #[test]
    fn identity_post_process() {
        let img = gradient(17, 9);
        assert_eq!(post_process(&img, 0.0, None, 3).unwrap(), img);
    }

    #[test]
    fn jpeg_keeps_dimensions_and_rejects_bad_quality() {
        let img = gradient(21, 13);
        for q in [10, 75, 95, 100] {
            let out = jpeg_roundtrip(&img, q).unwrap();
            assert_eq!((out.width(), out.height()), (21, 13));
        }
        assert!(encode_jpeg(&img, 0).is_err());
        assert!(post_process(&img, 1.0, Some(101), 0).is_err());
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient(10, 6);
        let p = dir.path().join("a.png");
        write_rgb_png(&p, &img).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), img);

        let mask = Mask::new(3, 2, vec![0, 1, 1, 0, 0, 1]).unwrap();
        let m = dir.path().join("m.png");
        write_mask_png(&m, &mask).unwrap();
        assert_eq!(read_mask_png(&m).unwrap(), mask);
    }
}
