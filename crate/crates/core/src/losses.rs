//! Loss terms of the joint objective.
//!
//! ```text
//! L_seg = mean over outputs sᵢ of ω-weighted pixel CE  +  w_s · entropy(s)
//! L_cls = CE(cls, y)                                   +  w_c · entropy(cls)
//! total = L_seg + λ · L_cls
//! ```
//!
//! Every term is a mean over the batch. The `record_*` functions extend a
//! forward graph so the total can be differentiated; the plain functions
//! evaluate the same terms on tensors.

use rccm_autograd::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::model::{ForwardOutputs, SEG_OUTPUTS};
use crate::synthdata::PlaqueClass;

pub const DEFAULT_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight `λ` of the classification loss.
    pub lambda: f64,
    pub entropy_weight_seg: f64,
    pub entropy_weight_cls: f64,
    /// Lower clamp on probabilities inside logs.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            entropy_weight_seg: 1.0,
            entropy_weight_cls: 1.0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda) || !ok(self.entropy_weight_seg) || !ok(self.entropy_weight_cls) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("loss.epsilon {} must lie in (0, 1)", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_wce: f64,
    pub l_ent_seg: f64,
    pub l_ce: f64,
    pub l_ent_cls: f64,
    pub l_seg: f64,
    pub l_cls: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.l_wce,
            self.l_ent_seg,
            self.l_ce,
            self.l_ent_cls,
            self.l_seg,
            self.l_cls,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            l_wce: avg(|b| b.l_wce),
            l_ent_seg: avg(|b| b.l_ent_seg),
            l_ce: avg(|b| b.l_ce),
            l_ent_cls: avg(|b| b.l_ent_cls),
            l_seg: avg(|b| b.l_seg),
            l_cls: avg(|b| b.l_cls),
            total: avg(|b| b.total),
        }
    }
}

/// Class indices for the segmentation and classification targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// One entry per sample and pixel, `0` background, `1` plaque.
    pub pixels: Vec<u32>,
    /// One entry per sample.
    pub classes: Vec<u32>,
}

impl Targets {
    pub fn from_samples(masks: &[&Mask], labels: &[PlaqueClass]) -> Result<Self> {
        if masks.len() != labels.len() {
            return Err(Error::Invalid(format!("{} masks but {} labels", masks.len(), labels.len())));
        }
        Ok(Self {
            pixels: masks.iter().flat_map(|m| m.data.iter().map(|&v| v as u32)).collect(),
            classes: labels.iter().map(|c| c.index() as u32).collect(),
        })
    }

    /// From a one-hot `N×2×H×W` mask tensor and a one-hot `N×3` label
    /// tensor.
    pub fn from_one_hot<T: Real>(z: &Tensor<T>, y: &Tensor<T>) -> Result<Self> {
        Ok(Self {
            pixels: one_hot_indices(z, 2)?,
            classes: one_hot_indices(y, PlaqueClass::COUNT)?,
        })
    }
}

/// Index of the hot entry along axis 1 at every position.
fn one_hot_indices<T: Real>(t: &Tensor<T>, k: usize) -> Result<Vec<u32>> {
    let (n, kk, s) = match *t.shape() {
        [n, kk] => (n, kk, 1),
        [n, kk, h, w] => (n, kk, h * w),
        _ => return Err(Error::Invalid(format!("one-hot tensor has shape {:?}", t.shape()))),
    };
    if kk != k {
        return Err(Error::Invalid(format!("one-hot axis has {kk} entries, expected {k}")));
    }
    let d = t.data();
    let mut out = Vec::with_capacity(n * s);
    for b in 0..n {
        for p in 0..s {
            let mut hot = None;
            for c in 0..k {
                let v = d[(b * k + c) * s + p];
                if v == T::one() {
                    if hot.is_some() {
                        return Err(Error::Invalid(format!("sample {b} position {p} has several hot entries")));
                    }
                    hot = Some(c as u32);
                } else if v != T::zero() {
                    return Err(Error::Invalid(format!("sample {b} position {p} is not one-hot")));
                }
            }
            out.push(hot.ok_or_else(|| Error::Invalid(format!("sample {b} position {p} has no hot entry")))?);
        }
    }
    Ok(out)
}

fn check_weights<T: Real>(weights: &[T], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Invalid(format!("{} sample weights for a batch of {n}", weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
        return Err(Error::Invalid("sample weights must be finite and non-negative".into()));
    }
    Ok(())
}

/// Mean over the four outputs of the sample-weighted pixel cross entropy.
pub fn record_weighted_ce_seg<T: Real>(
    g: &mut Graph<T>,
    seg: &[Var; SEG_OUTPUTS],
    pixels: &[u32],
    weights: &[T],
    eps: f64,
) -> Result<Var> {
    check_weights(weights, g.value(seg[0]).shape()[0])?;
    let share = T::from_f64_lossy(1.0 / SEG_OUTPUTS as f64);
    let mut terms = Vec::with_capacity(SEG_OUTPUTS);
    for &s in seg {
        terms.push((g.cross_entropy(s, pixels, weights, T::from_f64_lossy(eps))?, share));
    }
    Ok(g.weighted_sum(&terms)?)
}

/// Mean pixel entropy over the four outputs.
pub fn record_entropy_seg<T: Real>(g: &mut Graph<T>, seg: &[Var; SEG_OUTPUTS], eps: f64) -> Result<Var> {
    let share = T::from_f64_lossy(1.0 / SEG_OUTPUTS as f64);
    let mut terms = Vec::with_capacity(SEG_OUTPUTS);
    for &s in seg {
        terms.push((g.entropy(s, T::from_f64_lossy(eps))?, share));
    }
    Ok(g.weighted_sum(&terms)?)
}

pub fn record_ce_cls<T: Real>(g: &mut Graph<T>, cls: Var, classes: &[u32], eps: f64) -> Result<Var> {
    let n = g.value(cls).dims2()?.0;
    let ones = vec![T::one(); n];
    Ok(g.cross_entropy(cls, classes, &ones, T::from_f64_lossy(eps))?)
}

pub fn record_entropy_cls<T: Real>(g: &mut Graph<T>, cls: Var, eps: f64) -> Result<Var> {
    Ok(g.entropy(cls, T::from_f64_lossy(eps))?)
}

/// Handles of every recorded term.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_wce: Var,
    pub l_ent_seg: Var,
    pub l_ce: Var,
    pub l_ent_cls: Var,
    pub l_seg: Var,
    pub l_cls: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<T: Real>(&self, g: &Graph<T>) -> LossBreakdown {
        let v = |x: Var| g.value(x).data()[0].as_f64();
        LossBreakdown {
            l_wce: v(self.l_wce),
            l_ent_seg: v(self.l_ent_seg),
            l_ce: v(self.l_ce),
            l_ent_cls: v(self.l_ent_cls),
            l_seg: v(self.l_seg),
            l_cls: v(self.l_cls),
            total: v(self.total),
        }
    }
}

pub fn record_total_loss<T: Real>(
    g: &mut Graph<T>,
    seg: &[Var; SEG_OUTPUTS],
    cls: Var,
    targets: &Targets,
    weights: &[T],
    cfg: &LossConfig,
) -> Result<LossVars> {
    cfg.validate()?;
    let (n, c, h, w) = g.value(seg[0]).dims4()?;
    if c != 2 || targets.pixels.len() != n * h * w || targets.classes.len() != n {
        return Err(Error::Invalid(format!(
            "targets ({} pixels, {} labels) do not match outputs {:?}",
            targets.pixels.len(),
            targets.classes.len(),
            g.value(seg[0]).shape()
        )));
    }
    if targets.pixels.iter().any(|&t| t > 1) || targets.classes.iter().any(|&t| t as usize >= PlaqueClass::COUNT) {
        return Err(Error::Invalid("target index out of range".into()));
    }
    let t = T::from_f64_lossy;
    let l_wce = record_weighted_ce_seg(g, seg, &targets.pixels, weights, cfg.epsilon)?;
    let l_ent_seg = record_entropy_seg(g, seg, cfg.epsilon)?;
    let l_ce = record_ce_cls(g, cls, &targets.classes, cfg.epsilon)?;
    let l_ent_cls = record_entropy_cls(g, cls, cfg.epsilon)?;
    let l_seg = g.weighted_sum(&[(l_wce, T::one()), (l_ent_seg, t(cfg.entropy_weight_seg))])?;
    let l_cls = g.weighted_sum(&[(l_ce, T::one()), (l_ent_cls, t(cfg.entropy_weight_cls))])?;
    let total = g.weighted_sum(&[(l_seg, T::one()), (l_cls, t(cfg.lambda))])?;
    Ok(LossVars {
        l_wce,
        l_ent_seg,
        l_ce,
        l_ent_cls,
        l_seg,
        l_cls,
        total,
    })
}

fn seg_constants<T: Real>(g: &mut Graph<T>, seg_logits: &[Tensor<T>; SEG_OUTPUTS]) -> Result<[Var; SEG_OUTPUTS]> {
    let shape = seg_logits[0].shape();
    if seg_logits.iter().any(|s| s.shape() != shape) {
        return Err(Error::Invalid("segmentation outputs differ in shape".into()));
    }
    Ok(seg_logits.clone().map(|s| g.constant(s)))
}

fn scalar<T: Real>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).data()[0].as_f64()
}

/// `z` is a one-hot `N×2×H×W` mask tensor, `omega` one weight per sample.
pub fn weighted_ce_seg<T: Real>(seg_logits: &[Tensor<T>; SEG_OUTPUTS], z: &Tensor<T>, omega: &[f64]) -> Result<f64> {
    let pixels = one_hot_indices(z, 2)?;
    let mut g = Graph::new();
    let seg = seg_constants(&mut g, seg_logits)?;
    if z.shape() != g.value(seg[0]).shape() {
        return Err(Error::Invalid(format!("mask {:?} vs logits {:?}", z.shape(), seg_logits[0].shape())));
    }
    let w: Vec<T> = omega.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let v = record_weighted_ce_seg(&mut g, &seg, &pixels, &w, DEFAULT_EPSILON)?;
    Ok(scalar(&g, v))
}

pub fn entropy_seg<T: Real>(seg_logits: &[Tensor<T>; SEG_OUTPUTS]) -> Result<f64> {
    let mut g = Graph::new();
    let seg = seg_constants(&mut g, seg_logits)?;
    let v = record_entropy_seg(&mut g, &seg, DEFAULT_EPSILON)?;
    Ok(scalar(&g, v))
}

/// `y` is a one-hot `N×3` label tensor.
pub fn ce_cls<T: Real>(cls_logits: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let classes = one_hot_indices(y, PlaqueClass::COUNT)?;
    let mut g = Graph::new();
    let c = g.constant(cls_logits.clone());
    if classes.len() != g.value(c).dims2()?.0 {
        return Err(Error::Invalid("label count does not match logits".into()));
    }
    let v = record_ce_cls(&mut g, c, &classes, DEFAULT_EPSILON)?;
    Ok(scalar(&g, v))
}

pub fn entropy_cls<T: Real>(cls_logits: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::new();
    let c = g.constant(cls_logits.clone());
    let v = record_entropy_cls(&mut g, c, DEFAULT_EPSILON)?;
    Ok(scalar(&g, v))
}

pub fn total_loss<T: Real>(
    outputs: &ForwardOutputs<T>,
    z: &Tensor<T>,
    y: &Tensor<T>,
    omega: &[f64],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let targets = Targets::from_one_hot(z, y)?;
    let mut g = Graph::new();
    let seg = seg_constants(&mut g, &outputs.seg_logits)?;
    let cls = g.constant(outputs.cls_logits.clone());
    let w: Vec<T> = omega.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let vars = record_total_loss(&mut g, &seg, cls, &targets, &w, cfg)?;
    Ok(vars.breakdown(&g))
}

/// One-hot `N×2×H×W` tensor of a batch of masks.
pub fn mask_one_hot<T: Real>(masks: &[&Mask]) -> Result<Tensor<T>> {
    let first = masks.first().ok_or_else(|| Error::Invalid("no masks".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(masks.len() * 2 * h * w);
    for m in masks {
        if (m.height, m.width) != (h, w) {
            return Err(Error::Invalid("masks differ in size".into()));
        }
        data.extend(m.data.iter().map(|&v| if v == 0 { T::one() } else { T::zero() }));
        data.extend(m.data.iter().map(|&v| if v == 0 { T::zero() } else { T::one() }));
    }
    Ok(Tensor::new(&[masks.len(), 2, h, w], data)?)
}

/// One-hot `N×3` tensor of class labels.
pub fn label_one_hot<T: Real>(labels: &[PlaqueClass]) -> Result<Tensor<T>> {
    let data = labels
        .iter()
        .flat_map(|c| c.one_hot().map(T::from_f64_lossy))
        .collect();
    Ok(Tensor::new(&[labels.len(), PlaqueClass::COUNT], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_seg(n: usize, h: usize, w: usize) -> [Tensor<f64>; 4] {
        std::array::from_fn(|_| Tensor::zeros(&[n, 2, h, w]))
    }

    fn plaque_everywhere(n: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut d = Vec::new();
        for _ in 0..n {
            d.extend(std::iter::repeat_n(0.0, h * w));
            d.extend(std::iter::repeat_n(1.0, h * w));
        }
        Tensor::new(&[n, 2, h, w], d).unwrap()
    }

    #[test]
    fn uniform_segmentation_values() {
        let seg = uniform_seg(2, 3, 4);
        let z = plaque_everywhere(2, 3, 4);
        let ln2 = std::f64::consts::LN_2;
        assert!((weighted_ce_seg(&seg, &z, &[1.0, 1.0]).unwrap() - ln2).abs() < 1e-12);
        assert!((entropy_seg(&seg).unwrap() - ln2).abs() < 1e-12);
        assert_eq!(weighted_ce_seg(&seg, &z, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn confident_correct_segmentation_is_near_zero() {
        let mut seg = uniform_seg(1, 2, 2);
        for s in &mut seg {
            s.data_mut()[4..].fill(40.0);
        }
        let z = plaque_everywhere(1, 2, 2);
        assert!(weighted_ce_seg(&seg, &z, &[3.0]).unwrap() < 1e-12);
        assert!(entropy_seg(&seg).unwrap() < 1e-12);
    }

    #[test]
    fn classification_closed_forms() {
        let y = label_one_hot::<f64>(&[PlaqueClass::Hyperechoic]).unwrap();
        let l = Tensor::new(&[1, 3], vec![10.0, 0.0, 0.0]).unwrap();
        let want = (1.0 + 2.0 * (-10f64).exp()).ln();
        assert!((ce_cls(&l, &y).unwrap() - want).abs() < 1e-15);
        assert!((want - 9.1e-5).abs() < 1e-6);
        let zero = Tensor::zeros(&[1, 3]);
        assert!((ce_cls(&zero, &y).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!((entropy_cls(&zero).unwrap() - 3f64.ln()).abs() < 1e-12);
        let shifted = l.map(|v| v + 123.0);
        assert!((ce_cls(&shifted, &y).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn one_hot_validation() {
        let bad_y = Tensor::new(&[1, 3], vec![1.0, 1.0, 0.0]).unwrap();
        assert!(ce_cls(&Tensor::zeros(&[1, 3]), &bad_y).is_err());
        let mut z = plaque_everywhere(1, 2, 2);
        z.data_mut()[0] = 0.5;
        assert!(weighted_ce_seg(&uniform_seg(1, 2, 2), &z, &[1.0]).is_err());
        let none = Tensor::new(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        assert!(ce_cls(&Tensor::zeros(&[1, 3]), &none).is_err());
    }

    #[test]
    fn negative_weights_are_rejected() {
        let seg = uniform_seg(1, 2, 2);
        assert!(weighted_ce_seg(&seg, &plaque_everywhere(1, 2, 2), &[-1.0]).is_err());
    }
}
