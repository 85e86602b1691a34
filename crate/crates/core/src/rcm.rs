//! Region confidence module.
//!
//! The four deep-supervision segmentation maps are reduced to the spatial
//! size of the deepest encoder feature map `M`, turned into per-pixel
//! probability maps `p₁..p₄`, and used as spatial weights:
//!
//! ```text
//! pᵢ  = exp(down(sᵢ)) / Σₖ exp(down(sₖ))      (softmax over the four levels)
//! FM  = Σᵢ αᵢ · pᵢ ⊙ M                         (pᵢ broadcast over channels)
//! ```
//!
//! `down(sᵢ)` takes the plaque-class logit channel and resizes it
//! bilinearly. The `Classes` axis variant instead normalizes each level
//! over its two segmentation classes and keeps the plaque probability.

use rccm_autograd::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the plaque logit in a two-channel segmentation map.
pub const PLAQUE_CHANNEL: usize = 1;
pub const LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxAxis {
    /// Normalize across the four decoder levels at each pixel.
    #[default]
    Levels,
    /// Normalize each level across its two segmentation classes.
    Classes,
}

/// Fixed fusion weights `α₁..α₄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcmWeights(pub [f64; LEVELS]);

impl Default for RcmWeights {
    fn default() -> Self {
        Self([0.1, 0.2, 0.3, 0.4])
    }
}

impl RcmWeights {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|a| a.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("rcm.alpha {:?} must be finite", self.0)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RcmConfig {
    pub alpha: RcmWeights,
    pub softmax_axis: SoftmaxAxis,
}

/// Per-level probability maps at the resolution of `M`, each `N×1×h×w`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionProbabilityMaps<T> {
    pub maps: [Tensor<T>; LEVELS],
}

/// The fused map `FM`, shaped like `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatureMap<T>(pub Tensor<T>);

fn check_target<T: Real>(g: &Graph<T>, s: Var, target: (usize, usize)) -> Result<()> {
    let (_, c, h, w) = g.value(s).dims4()?;
    if c <= PLAQUE_CHANNEL {
        return Err(Error::Invalid(format!("segmentation map has {c} channels, need 2")));
    }
    if target.0 == 0 || target.1 == 0 || target.0 > h || target.1 > w {
        return Err(Error::Invalid(format!(
            "cannot downsample {h}x{w} logits to {}x{}",
            target.0, target.1
        )));
    }
    Ok(())
}

/// Records `down(s)`: the plaque logit channel resized to `target`.
pub fn record_downsample_logits<T: Real>(g: &mut Graph<T>, s: Var, target: (usize, usize)) -> Result<Var> {
    check_target(g, s, target)?;
    let plaque = g.select_channel(s, PLAQUE_CHANNEL)?;
    Ok(g.resize_bilinear(plaque, target.0, target.1)?)
}

pub fn record_region_probability_maps<T: Real>(
    g: &mut Graph<T>,
    seg: &[Var; LEVELS],
    target: (usize, usize),
    axis: SoftmaxAxis,
) -> Result<[Var; LEVELS]> {
    for &s in seg {
        if !g.value(s).all_finite() {
            return Err(Error::NonFinite("segmentation logits".into()));
        }
    }
    match axis {
        SoftmaxAxis::Levels => {
            let mut down = [seg[0]; LEVELS];
            for (d, &s) in down.iter_mut().zip(seg) {
                *d = record_downsample_logits(g, s, target)?;
            }
            let stacked = g.concat_channels(&down)?;
            let probs = g.softmax(stacked)?;
            let mut out = [probs; LEVELS];
            for (i, o) in out.iter_mut().enumerate() {
                *o = g.select_channel(probs, i)?;
            }
            Ok(out)
        }
        SoftmaxAxis::Classes => {
            let mut out = [seg[0]; LEVELS];
            for (o, &s) in out.iter_mut().zip(seg) {
                check_target(g, s, target)?;
                let small = g.resize_bilinear(s, target.0, target.1)?;
                let probs = g.softmax(small)?;
                *o = g.select_channel(probs, PLAQUE_CHANNEL)?;
            }
            Ok(out)
        }
    }
}

/// Records `FM = Σ αᵢ pᵢ ⊙ M`. The weights are summed into one spatial map
/// before the channel broadcast, which is the same linear map.
pub fn record_fuse_features<T: Real>(
    g: &mut Graph<T>,
    probs: &[Var; LEVELS],
    m: Var,
    alpha: &RcmWeights,
) -> Result<Var> {
    let (n, _, h, w) = g.value(m).dims4()?;
    for &p in probs {
        if g.value(p).shape() != [n, 1, h, w] {
            return Err(Error::Invalid(format!(
                "probability map {:?} does not match feature map {:?}",
                g.value(p).shape(),
                g.value(m).shape()
            )));
        }
    }
    let terms: Vec<(Var, T)> = probs
        .iter()
        .zip(alpha.0)
        .map(|(&p, a)| (p, T::from_f64_lossy(a)))
        .collect();
    let weight_map = g.weighted_sum(&terms)?;
    Ok(g.channel_broadcast_mul(weight_map, m)?)
}

/// Plaque channel of `s` resized to `target`.
pub fn downsample_logits<T: Real>(s: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.constant(s.clone());
    let out = record_downsample_logits(&mut g, v, target)?;
    Ok(g.value(out).clone())
}

pub fn region_probability_maps<T: Real>(
    seg: &[Tensor<T>; LEVELS],
    target: (usize, usize),
    axis: SoftmaxAxis,
) -> Result<RegionProbabilityMaps<T>> {
    let mut g = Graph::new();
    let vars = seg.clone().map(|t| g.constant(t));
    let out = record_region_probability_maps(&mut g, &vars, target, axis)?;
    Ok(RegionProbabilityMaps {
        maps: out.map(|v| g.value(v).clone()),
    })
}

pub fn fuse_features<T: Real>(
    probs: &RegionProbabilityMaps<T>,
    m: &Tensor<T>,
    alpha: &RcmWeights,
) -> Result<FusedFeatureMap<T>> {
    let mut g = Graph::new();
    let pv = probs.maps.clone().map(|t| g.constant(t));
    let mv = g.constant(m.clone());
    let out = record_fuse_features(&mut g, &pv, mv, alpha)?;
    Ok(FusedFeatureMap(g.value(out).clone()))
}
