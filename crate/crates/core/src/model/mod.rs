//! The shared-encoder multi-task network.
//!
//! [`Network`] holds the layer wiring; trainable tensors live in a separate
//! [`ParamStore`] so one network can run against f32 training weights or an
//! f64 copy for gradient checks. A forward pass records onto a
//! [`Session`], whose graph the loss terms extend before the backward
//! sweep.

mod layers;
mod network;
mod params;

use rccm_autograd::{Real, Tensor};
use serde::{Deserialize, Serialize};

pub use layers::{Conv, Linear, Mode, Norm, ResidualBlock, Session};
pub use network::{ForwardVars, FusionOptions, Network};
pub use params::{NormId, Param, ParamId, ParamStore, RunningStats, NORM_MOMENTUM};

use crate::error::{Error, Result};
use crate::synthdata::Sample;

/// Number of deep-supervision segmentation outputs.
pub const SEG_OUTPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of encoder levels.
    pub depth: usize,
    /// Channels at the first level; doubled at every level below.
    pub base_channels: usize,
    pub num_classes: usize,
    pub seg_channels: usize,
    /// `(channels, height, width)` of one input image.
    pub input_shape: (usize, usize, usize),
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            base_channels: 16,
            num_classes: 3,
            seg_channels: 2,
            input_shape: (1, 96, 144),
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn tiny(depth: usize, base_channels: usize, height: usize, width: usize) -> Self {
        Self {
            depth,
            base_channels,
            input_shape: (1, height, width),
            ..Self::default()
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial size of the deepest encoder map.
    pub fn deepest_size(&self) -> (usize, usize) {
        let f = 1 << (self.depth - 1);
        (self.input_shape.1 / f, self.input_shape.2 / f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth < 2 {
            return bad(format!("depth {} must be at least 2", self.depth));
        }
        if self.depth > 12 {
            return bad(format!("depth {} is unreasonably large", self.depth));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.seg_channels != 2 {
            return bad(format!("seg_channels must be 2, got {}", self.seg_channels));
        }
        if self.num_classes != 3 {
            return bad(format!("num_classes must be 3, got {}", self.num_classes));
        }
        let (c, h, w) = self.input_shape;
        if c != 1 {
            return bad(format!("input must have one channel, got {c}"));
        }
        let f = 1usize << (self.depth - 1);
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return bad(format!(
                "input {h}x{w} is not divisible by 2^(depth-1) = {f}"
            ));
        }
        Ok(())
    }
}

/// Feature maps of every encoder level, shallowest first.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFeatures<T> {
    pub levels: Vec<Tensor<T>>,
}

impl<T> EncoderFeatures<T> {
    /// The deepest map `M`.
    pub fn m(&self) -> &Tensor<T> {
        self.levels.last().expect("encoder has levels")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutputs<T> {
    /// `s₁..s₄`, each `N×2×H×W`.
    pub seg_logits: [Tensor<T>; SEG_OUTPUTS],
    /// `N×3`.
    pub cls_logits: Tensor<T>,
}

impl<T: Real> ForwardOutputs<T> {
    pub fn check_finite(&self) -> Result<()> {
        if self.seg_logits.iter().all(|t| t.all_finite()) && self.cls_logits.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("network outputs".into()))
        }
    }
}

/// A standalone residual block with its own seeded parameters.
pub fn residual_block<T: Real>(
    in_channels: usize,
    out_channels: usize,
    projection: bool,
    seed: u64,
) -> Result<(ResidualBlock, ParamStore<T>)> {
    let mut b = params::ParamBuilder::new(seed);
    let block = ResidualBlock::with_shortcut(&mut b, "block", in_channels, out_channels, projection)?;
    Ok((block, b.finish()))
}

/// Stacks sample images into an `N×1×H×W` batch.
pub fn image_batch<T: Real>(samples: &[&Sample]) -> Result<Tensor<T>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::Invalid(format!(
                "sample {} is {}x{}, batch is {h}x{w}",
                s.id,
                s.height(),
                s.width()
            )));
        }
        data.extend(s.image.data.iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Ok(Tensor::new(&[samples.len(), 1, h, w], data)?)
}
