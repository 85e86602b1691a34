//! Category confidence module.
//!
//! Each sample's segmentation loss is scaled by the KL divergence between
//! its one-hot class label `y` and the predicted class distribution `g`:
//!
//! ```text
//! ω = Σⱼ yⱼ · ln(yⱼ / gⱼ) = −ln g_c      (c = true class)
//! ```
//!
//! Weights are plain numbers computed from the current forward pass, so no
//! gradient flows from the segmentation loss back into the classifier
//! through them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::PlaqueClass;

pub const DEFAULT_EPSILON: f64 = 1e-7;
const NORMALIZATION_TOL: f64 = 1e-4;

/// Mapping from the divergence `ω` to the loss weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CcmTransform {
    /// Use `ω` itself: poorly classified samples weigh more.
    #[default]
    Identity,
    /// Use `e^{−ω} = g_c`: confidently classified samples weigh more.
    ExpNeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcmConfig {
    pub transform: CcmTransform,
    /// Rescale each batch's weights to mean one.
    pub normalize_mean_one: bool,
    /// Lower clamp on `g` before taking logs.
    pub epsilon: f64,
}

impl Default for CcmConfig {
    fn default() -> Self {
        Self {
            transform: CcmTransform::Identity,
            normalize_mean_one: false,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl CcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("ccm.epsilon {} must lie in (0, 1)", self.epsilon)));
        }
        Ok(())
    }
}

/// Predicted class probabilities `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub g: [f64; PlaqueClass::COUNT],
}

impl ClassPrediction {
    pub fn new(g: [f64; PlaqueClass::COUNT]) -> Result<Self> {
        if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(format!("class probabilities {g:?} must be finite and non-negative")));
        }
        let sum: f64 = g.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Invalid(format!("class probabilities {g:?} sum to {sum}")));
        }
        Ok(Self { g })
    }

    /// Softmax of one row of classification logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() != PlaqueClass::COUNT || logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("bad classification logits {logits:?}")));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(Self {
            g: [e[0] / z, e[1] / z, e[2] / z],
        })
    }

    pub fn argmax(&self) -> PlaqueClass {
        let mut best = 0;
        for j in 1..PlaqueClass::COUNT {
            if self.g[j] > self.g[best] {
                best = j;
            }
        }
        PlaqueClass::ALL[best]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleWeight {
    pub omega: f64,
}

fn check_one_hot(y: &[f64; PlaqueClass::COUNT]) -> Result<usize> {
    let ones: Vec<usize> = (0..y.len()).filter(|&j| y[j] == 1.0).collect();
    if ones.len() != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid(format!("label {y:?} is not one-hot")));
    }
    Ok(ones[0])
}

/// `KL(y ‖ g)` with `0 · ln(0 / ·) = 0` and `g` clamped below at `eps`.
pub fn sample_weight(y: &[f64; PlaqueClass::COUNT], g: &ClassPrediction, eps: f64) -> Result<SampleWeight> {
    check_one_hot(y)?;
    ClassPrediction::new(g.g)?;
    let mut omega = 0.0;
    for (&yj, &gj) in y.iter().zip(&g.g) {
        if yj > 0.0 {
            omega += yj * (yj / gj.max(eps)).ln();
        }
    }
    Ok(SampleWeight { omega })
}

/// Per-sample loss weights for a batch.
///
/// With `normalize_mean_one` the weights are divided by their mean; a batch
/// whose weights are all zero is left unchanged.
pub fn batch_weights(labels: &[PlaqueClass], predictions: &[ClassPrediction], cfg: &CcmConfig) -> Result<Vec<f64>> {
    if labels.len() != predictions.len() {
        return Err(Error::Invalid(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut w = Vec::with_capacity(labels.len());
    for (label, g) in labels.iter().zip(predictions) {
        let omega = sample_weight(&label.one_hot(), g, cfg.epsilon)?.omega;
        w.push(match cfg.transform {
            CcmTransform::Identity => omega,
            CcmTransform::ExpNeg => (-omega).exp(),
        });
    }
    if cfg.normalize_mean_one && !w.is_empty() {
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        if mean > 0.0 {
            for v in &mut w {
                *v /= mean;
            }
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(g: [f64; 3]) -> ClassPrediction {
        ClassPrediction::new(g).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let y = [1.0, 0.0, 0.0];
        let w = sample_weight(&y, &pred([0.5, 0.25, 0.25]), 1e-7).unwrap();
        assert!((w.omega - std::f64::consts::LN_2).abs() < 1e-15);
        let third = 1.0 / 3.0;
        let w = sample_weight(&y, &pred([third, third, third]), 1e-7).unwrap();
        assert!((w.omega - 3f64.ln()).abs() < 1e-15);
        let w = sample_weight(&y, &pred([1.0, 0.0, 0.0]), 1e-7).unwrap();
        assert!(w.omega.abs() <= 1e-6);
    }

    #[test]
    fn confident_wrong_prediction_is_clamped() {
        let w = sample_weight(&[0.0, 0.0, 1.0], &pred([1.0, 0.0, 0.0]), 1e-7).unwrap();
        assert!((w.omega - (1e7f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn exp_neg_recovers_true_class_probability() {
        let cfg = CcmConfig {
            transform: CcmTransform::ExpNeg,
            ..CcmConfig::default()
        };
        let w = batch_weights(&[PlaqueClass::Hypoechoic], &[pred([0.25, 0.5, 0.25])], &cfg).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let labels = PlaqueClass::ALL;
        let preds = labels.map(|c| pred(c.one_hot()));
        let id = batch_weights(&labels, &preds, &CcmConfig::default()).unwrap();
        assert!(id.iter().all(|&w| w.abs() <= 1e-6));
        let cfg = CcmConfig {
            transform: CcmTransform::ExpNeg,
            ..CcmConfig::default()
        };
        let en = batch_weights(&labels, &preds, &cfg).unwrap();
        assert!(en.iter().all(|&w| (w - 1.0).abs() <= 1e-6));
    }

    #[test]
    fn mean_one_normalization() {
        let cfg = CcmConfig {
            normalize_mean_one: true,
            ..CcmConfig::default()
        };
        let labels = [PlaqueClass::Hyperechoic; 2];
        let w = batch_weights(&labels, &[pred([0.5, 0.25, 0.25]), pred([0.25, 0.5, 0.25])], &cfg).unwrap();
        assert!((w.iter().sum::<f64>() / 2.0 - 1.0).abs() < 1e-12);
        assert!(w[1] > w[0]);
    }

    #[test]
    fn validation_errors() {
        assert!(sample_weight(&[1.0, 1.0, 0.0], &pred([0.5, 0.25, 0.25]), 1e-7).is_err());
        assert!(sample_weight(&[0.5, 0.5, 0.0], &pred([0.5, 0.25, 0.25]), 1e-7).is_err());
        assert!(ClassPrediction::new([0.5, 0.5, 0.5]).is_err());
        assert!(batch_weights(&[PlaqueClass::Mixed], &[], &CcmConfig::default()).is_err());
    }
}
