//! Generating datasets to disk and reading them back.

use std::fs;
use std::path::{Path, PathBuf};

use ctpnet_core::metrics::ratio_fake;
use ctpnet_core::raster::RgbImage;
use ctpnet_core::synth::{synthesize, DocumentSample, Forgery, SynthConfig};
use rayon::prelude::*;

use crate::error::{AppError, Result};
use crate::io;
use crate::manifest::{read_manifest, write_manifest, ManifestRecord};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
/// Environment variable capping generation threads.
pub const THREADS_VAR: &str = "CTPN_THREADS";

/// A synthesized forgery together with its post-processed image.
#[derive(Clone, Debug)]
pub struct Generated {
    pub forgery: Forgery,
    /// Noise and JPEG applied; this is what gets stored and evaluated.
    pub image: RgbImage,
}

impl Generated {
    pub fn sample(&self) -> Result<DocumentSample> {
        let f = &self.forgery;
        Ok(DocumentSample::new(f.id, self.image.clone(), f.mask.clone(), f.recipe.clone())?)
    }
}

/// Synthesize one sample and run the JPEG stage on its noisy image.
pub fn generate_one(config: &SynthConfig, id: u64, seed: u64) -> Result<Generated> {
    let forgery = synthesize(config, id, seed)?;
    let image = match forgery.recipe.jpeg_quality {
        Some(q) => io::jpeg_roundtrip(&forgery.noisy, q)?,
        None => forgery.noisy.clone(),
    };
    Ok(Generated { forgery, image })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| AppError::Config(format!("{THREADS_VAR}={v:?} is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| AppError::Config(format!("thread pool: {e}")))
}

/// Samples `0..count` in memory, post-processed, in id order.
pub fn generate_samples(config: &SynthConfig, count: usize, seed: u64) -> Result<Vec<DocumentSample>> {
    config.validate()?;
    thread_pool()?.install(|| {
        (0..count as u64).into_par_iter().map(|id| generate_one(config, id, seed)?.sample()).collect()
    })
}

fn file_name(id: u64) -> String {
    format!("{id:06}.png")
}

/// Write `count` samples under `out`: `images/`, `masks/`, `pristine/` and
/// `manifest.jsonl`. Manifest lines are in id order regardless of how the
/// work was scheduled.
pub fn generate_dataset(config: &SynthConfig, count: usize, seed: u64, out: &Path) -> Result<Vec<ManifestRecord>> {
    if count == 0 {
        return Err(AppError::Config("count must be at least 1".into()));
    }
    config.validate()?;
    for sub in ["images", "masks", "pristine"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(AppError::io(&dir))?;
    }
    let records: Vec<ManifestRecord> = thread_pool()?.install(|| {
        (0..count as u64)
            .into_par_iter()
            .map(|id| {
                let g = generate_one(config, id, seed)?;
                let f = &g.forgery;
                let name = file_name(id);
                let image_path = format!("images/{name}");
                let mask_path = format!("masks/{name}");
                io::write_rgb_png(&out.join(&image_path), &g.image)?;
                io::write_mask_png(&out.join(&mask_path), &f.mask)?;
                io::write_rgb_png(&out.join("pristine").join(&name), &f.pristine)?;
                Ok(ManifestRecord::new(id, image_path, mask_path, &f.recipe, f.ratio_fake, f.category))
            })
            .collect::<Result<_>>()
    })?;
    write_manifest(&out.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

/// Accepts either a dataset directory or a manifest path.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Load every sample listed in a manifest. The stored mask must agree with
/// the manifest's ratio and category.
pub fn load_dataset(path: &Path) -> Result<Vec<DocumentSample>> {
    let manifest = manifest_path(path);
    let root = manifest.parent().unwrap_or(Path::new("."));
    let records = read_manifest(&manifest)?;
    if records.is_empty() {
        return Err(AppError::Manifest { path: manifest, line: 0, message: "no records".into() });
    }
    records
        .par_iter()
        .enumerate()
        .map(|(line, r)| {
            let fail = |message: String| AppError::Manifest { path: manifest.clone(), line: line + 1, message };
            let recipe = r.recipe().map_err(fail)?;
            let image = io::read_rgb(&root.join(&r.image_path))?;
            let mask = io::read_mask_png(&root.join(&r.mask_path))?;
            let sample = DocumentSample::new(r.id, image, mask, recipe)?;
            let ratio = ratio_fake(sample.mask.data())?;
            if ratio != r.ratio_fake || sample.category != r.category {
                return Err(fail(format!(
                    "mask gives ratio {ratio} / category {}, manifest says {} / {}",
                    sample.category, r.ratio_fake, r.category
                )));
            }
            Ok(sample)
        })
        .collect()
}
