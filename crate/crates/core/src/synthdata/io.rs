//! Dataset directory layout: `manifest.csv` plus 8-bit binary PGM files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PlaqueClass, Sample};
use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::pgm;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    image_path: String,
    mask_path: String,
    class_label: usize,
    pixel_spacing_mm: f64,
}

/// Writes `samples` into `dir` (created if needed). Images go to
/// `images/<id>.pgm`, masks to `masks/<id>.pgm` with values {0, 255}.
pub fn save_dataset(samples: &[Sample], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Invalid(format!("duplicate sample id {}", s.id)));
        }
    }
    for sub in ["images", "masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut written = Vec::with_capacity(2 * samples.len() + 1);
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut wtr = csv::Writer::from_path(&manifest_path).map_err(|e| Error::Manifest(e.to_string()))?;
    for s in samples {
        let image_rel = format!("images/{}.pgm", s.id);
        let mask_rel = format!("masks/{}.pgm", s.id);
        let image_bytes: Vec<u8> = s.image.data.iter().map(|&v| pgm::to_byte(v)).collect();
        let mask_bytes: Vec<u8> = s.mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
        pgm::write(&dir.join(&image_rel), s.image.width, s.image.height, &image_bytes)?;
        pgm::write(&dir.join(&mask_rel), s.mask.width, s.mask.height, &mask_bytes)?;
        written.push(dir.join(&image_rel));
        written.push(dir.join(&mask_rel));
        wtr.serialize(ManifestRow {
            id: s.id.clone(),
            image_path: image_rel,
            mask_path: mask_rel,
            class_label: s.class_label.index(),
            pixel_spacing_mm: s.pixel_spacing,
        })
        .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::io(&manifest_path, e))?;
    written.push(manifest_path);
    Ok(written)
}

/// Loads every sample listed in `dir/manifest.csv`, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    if entries.count() == 0 {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(&manifest_path).map_err(|e| Error::Manifest(e.to_string()))?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| Error::Manifest(e.to_string()))?;
        if !seen.insert(row.id.clone()) {
            return Err(Error::ManifestMismatch(format!("duplicate id {}", row.id)));
        }
        let class_label = PlaqueClass::from_index(row.class_label).map_err(|e| Error::Manifest(e.to_string()))?;
        if !(row.pixel_spacing_mm > 0.0) {
            return Err(Error::Manifest(format!("non-positive spacing for {}", row.id)));
        }
        let image_path = dir.join(&row.image_path);
        let mask_path = dir.join(&row.mask_path);
        let (iw, ih, image_bytes) = pgm::read(&image_path)?;
        let (mw, mh, mask_bytes) = pgm::read(&mask_path)?;
        if (iw, ih) != (mw, mh) {
            return Err(Error::ManifestMismatch(format!(
                "{}: image is {iw}x{ih} but mask is {mw}x{mh}",
                row.id
            )));
        }
        let mut mask = Vec::with_capacity(mask_bytes.len());
        for &b in &mask_bytes {
            match b {
                0 => mask.push(0),
                255 => mask.push(1),
                other => {
                    return Err(Error::CorruptImage {
                        path: mask_path,
                        reason: format!("mask value {other} is neither 0 nor 255"),
                    })
                }
            }
        }
        samples.push(Sample {
            id: row.id,
            image: Image::new(ih, iw, image_bytes.iter().map(|&b| pgm::from_byte(b)).collect())?,
            mask: Mask::new(mh, mw, mask)?,
            class_label,
            pixel_spacing: row.pixel_spacing_mm,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    Ok(samples)
}
