//! Synthetic ultrasound-phantom plaque dataset.
//!
//! Each [`Sample`] is a plaque-centred region of interest: a speckled
//! grayscale image, a binary plaque mask and the echogenicity class of the
//! plaque. Samples are generated deterministically from a [`PhantomConfig`]
//! and persisted as PGM files plus a `manifest.csv`.

mod io;
mod phantom;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};

pub use io::{load_dataset, save_dataset, MANIFEST_FILE};
pub use phantom::{generate_dataset, generate_phantom, sample_rng};
pub use split::{split_dataset, split_sizes, DatasetSplit};

/// Plaque echogenicity class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaqueClass {
    Hyperechoic = 0,
    Hypoechoic = 1,
    Mixed = 2,
}

impl PlaqueClass {
    pub const ALL: [PlaqueClass; 3] = [Self::Hyperechoic, Self::Hypoechoic, Self::Mixed];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("class label {i} is not one of 0, 1, 2")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Hyperechoic => "hyperechoic",
            Self::Hypoechoic => "hypoechoic",
            Self::Mixed => "mixed",
        }
    }

    /// One-hot encoding.
    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for PlaqueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlaqueClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" | "hyperechoic" => Ok(Self::Hyperechoic),
            "1" | "hypoechoic" => Ok(Self::Hypoechoic),
            "2" | "mixed" => Ok(Self::Mixed),
            other => Err(Error::Invalid(format!("unknown plaque class {other:?}"))),
        }
    }
}

/// Mean plaque and background intensity for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub plaque: f64,
    pub background: f64,
}

impl Contrast {
    pub const fn new(plaque: f64, background: f64) -> Self {
        Self { plaque, background }
    }
}

/// Per-class contrasts. One field per class, so the key set is always
/// exactly the three classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassContrasts {
    pub hyperechoic: Contrast,
    pub hypoechoic: Contrast,
    pub mixed: Contrast,
}

impl ClassContrasts {
    pub fn get(&self, class: PlaqueClass) -> Contrast {
        match class {
            PlaqueClass::Hyperechoic => self.hyperechoic,
            PlaqueClass::Hypoechoic => self.hypoechoic,
            PlaqueClass::Mixed => self.mixed,
        }
    }
}

impl Default for ClassContrasts {
    fn default() -> Self {
        Self {
            hyperechoic: Contrast::new(0.80, 0.35),
            hypoechoic: Contrast::new(0.12, 0.35),
            mixed: Contrast::new(0.45, 0.35),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// mm per pixel, isotropic.
    pub pixel_spacing: f64,
    pub class_contrasts: ClassContrasts,
    /// Standard deviation of the multiplicative speckle factor.
    pub speckle_scale: f64,
    /// Plaque area bounds in mm².
    pub area_range: (f64, f64),
    /// Half the intensity gap between the bright and dark parts of a
    /// mixed-echoic plaque.
    pub mixed_split: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            image_height: 96,
            image_width: 144,
            pixel_spacing: 0.1,
            class_contrasts: ClassContrasts::default(),
            speckle_scale: 0.25,
            area_range: (8.0, 40.0),
            mixed_split: 0.3,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if !(self.pixel_spacing > 0.0 && self.pixel_spacing.is_finite()) {
            return Err(Error::Config("pixel_spacing must be positive".into()));
        }
        let (lo, hi) = self.area_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::Config(format!("area_range ({lo}, {hi}) must satisfy 0 <= min < max")));
        }
        for class in PlaqueClass::ALL {
            let c = self.class_contrasts.get(class);
            for v in [c.plaque, c.background] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("{class} contrast {v} outside [0, 1]")));
                }
            }
        }
        if !(self.speckle_scale >= 0.0 && self.speckle_scale.is_finite()) {
            return Err(Error::Config("speckle_scale must be non-negative".into()));
        }
        if !(self.mixed_split >= 0.0 && self.mixed_split.is_finite()) {
            return Err(Error::Config("mixed_split must be non-negative".into()));
        }
        Ok(())
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_spacing * self.pixel_spacing
    }
}

/// One image with its plaque mask and class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
    pub class_label: PlaqueClass,
    /// mm per pixel.
    pub pixel_spacing: f64,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn validate(&self) -> Result<()> {
        if !self.image.data.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!("sample {} has non-finite pixels", self.id)));
        }
        if self.image.height != self.mask.height || self.image.width != self.mask.width {
            return Err(Error::Invalid(format!("sample {} image/mask size mismatch", self.id)));
        }
        if self.mask.is_empty() {
            return Err(Error::Invalid(format!("sample {} has an empty mask", self.id)));
        }
        if !(self.pixel_spacing > 0.0) {
            return Err(Error::Invalid(format!("sample {} has non-positive spacing", self.id)));
        }
        Ok(())
    }
}

/// Per-class sample counts in class-index order.
pub fn class_histogram(samples: &[Sample]) -> [usize; 3] {
    let mut h = [0; 3];
    for s in samples {
        h[s.class_label.index()] += 1;
    }
    h
}
