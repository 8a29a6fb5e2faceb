//! Line-delimited JSON manifests describing generated datasets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ctpnet_core::raster::Rect;
use ctpnet_core::synth::{DonorSource, ForgeryKind, ForgeryRecipe};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// One generated sample. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: u64,
    pub image_path: String,
    pub mask_path: String,
    pub kind: String,
    pub noise_sigma: f64,
    pub jpeg_quality: Option<u8>,
    pub ratio_fake: f64,
    pub category: u8,
    pub seed: u64,
    /// Seed of the donor document for splices; absent for copy-move.
    #[serde(default)]
    pub donor_seed: Option<u64>,
    /// `[x, y, width, height]`
    pub donor_region: [usize; 4],
    /// `[x, y, width, height]`
    pub target_region: [usize; 4],
    #[serde(default)]
    pub recapture_scale: Option<f64>,
}

fn rect_fields(r: Rect) -> [usize; 4] {
    [r.x, r.y, r.width, r.height]
}

fn rect_of(f: [usize; 4]) -> Rect {
    Rect::new(f[0], f[1], f[2], f[3])
}

impl ManifestRecord {
    pub fn new(id: u64, image_path: String, mask_path: String, recipe: &ForgeryRecipe, ratio_fake: f64, category: u8) -> Self {
        Self {
            id,
            image_path,
            mask_path,
            kind: recipe.kind.name().to_owned(),
            noise_sigma: recipe.noise_sigma,
            jpeg_quality: recipe.jpeg_quality,
            ratio_fake,
            category,
            seed: recipe.seed,
            donor_seed: match recipe.donor {
                DonorSource::Document { seed } => Some(seed),
                DonorSource::SelfImage => None,
            },
            donor_region: rect_fields(recipe.donor_region),
            target_region: rect_fields(recipe.target_region),
            recapture_scale: recipe.recapture_scale,
        }
    }

    pub fn recipe(&self) -> std::result::Result<ForgeryRecipe, String> {
        let kind = ForgeryKind::parse(&self.kind).ok_or_else(|| format!("unknown forgery kind {:?}", self.kind))?;
        let donor = match (kind, self.donor_seed) {
            (ForgeryKind::Splice, Some(seed)) => DonorSource::Document { seed },
            (ForgeryKind::CopyMove, None) => DonorSource::SelfImage,
            _ => return Err(format!("donor_seed does not match kind {}", self.kind)),
        };
        Ok(ForgeryRecipe {
            kind,
            donor,
            donor_region: rect_of(self.donor_region),
            target_region: rect_of(self.target_region),
            recapture_scale: self.recapture_scale,
            noise_sigma: self.noise_sigma,
            jpeg_quality: self.jpeg_quality,
            seed: self.seed,
        })
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = File::create(path).map_err(AppError::io(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("manifest records always serialize");
        writeln!(out, "{line}").map_err(AppError::io(path))?;
    }
    out.flush().map_err(AppError::io(path))
}

/// Blank lines are skipped; anything else must parse as a record.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = File::open(path).map_err(AppError::io(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(AppError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| AppError::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
