//! One forward pass with its loss, shared by the trainer and the
//! gradient checks, plus the prediction rules used at evaluation.

use rccm_autograd::{Real, Tensor};

use super::config::{PredictionHead, TrainConfig};
use crate::ccm::{self, CcmConfig, ClassPrediction};
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::losses::{record_total_loss, LossConfig, LossVars, Targets};
use crate::model::{ForwardVars, FusionOptions, Mode, Network, ParamStore, Session};
use crate::synthdata::PlaqueClass;

/// Everything that shapes the training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub fusion: FusionOptions,
    pub use_ccm: bool,
    pub ccm: CcmConfig,
    pub loss: LossConfig,
}

impl Objective {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            fusion: cfg.fusion(),
            use_ccm: cfg.ablation.use_ccm,
            ccm: cfg.ccm,
            loss: cfg.loss,
        }
    }
}

pub struct BatchLoss<'s, T: Real> {
    pub session: Session<'s, T>,
    pub forward: ForwardVars,
    pub loss: LossVars,
    /// Per-sample segmentation weights that were used.
    pub weights: Vec<f64>,
}

/// Class probabilities of every row of `N×3` logits.
pub fn class_predictions<T: Real>(logits: &Tensor<T>) -> Result<Vec<ClassPrediction>> {
    let (n, k) = logits.dims2()?;
    (0..n)
        .map(|i| {
            let row: Vec<f64> = logits.data()[i * k..(i + 1) * k].iter().map(|v| v.as_f64()).collect();
            ClassPrediction::from_logits(&row)
        })
        .collect()
}

/// Records the forward pass and total loss of one batch.
///
/// Sample weights come from this same forward pass when CCM is on and are
/// 1 otherwise. `fixed_weights` overrides them, which lets a gradient check
/// hold the weights at their value at the base point.
#[allow(clippy::too_many_arguments)]
pub fn record_batch_loss<'s, T: Real>(
    network: &Network,
    store: &'s ParamStore<T>,
    images: &Tensor<T>,
    targets: &Targets,
    objective: &Objective,
    mode: Mode,
    trainable: bool,
    fixed_weights: Option<&[f64]>,
) -> Result<BatchLoss<'s, T>> {
    let mut session = Session::new(store, mode, trainable);
    let x = session.graph.constant(images.clone());
    let forward = network.multitask_forward(&mut session, x, &objective.fusion)?;
    let finite = |v| session.graph.value(v).all_finite();
    if !(forward.seg.iter().all(|&v| finite(v)) && finite(forward.cls)) {
        return Err(Error::NonFinite("network outputs".into()));
    }
    let weights = match fixed_weights {
        Some(w) => w.to_vec(),
        None if objective.use_ccm => {
            let labels = targets
                .classes
                .iter()
                .map(|&c| PlaqueClass::from_index(c as usize))
                .collect::<Result<Vec<_>>>()?;
            let preds = class_predictions(session.graph.value(forward.cls))?;
            ccm::batch_weights(&labels, &preds, &objective.ccm)?
        }
        None => vec![1.0; targets.classes.len()],
    };
    let w: Vec<T> = weights.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let loss = record_total_loss(&mut session.graph, &forward.seg, forward.cls, targets, &w, &objective.loss)?;
    Ok(BatchLoss {
        session,
        forward,
        loss,
        weights,
    })
}

/// Model output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mask: Mask,
    pub class: PlaqueClass,
    pub probs: [f64; PlaqueClass::COUNT],
}

/// Masks and classes for a batch, evaluated with frozen normalization.
pub fn predict_batch<T: Real>(
    network: &Network,
    store: &ParamStore<T>,
    images: &Tensor<T>,
    fusion: &FusionOptions,
    head: PredictionHead,
) -> Result<Vec<Prediction>> {
    let out = network.infer(store, images, fusion, Mode::Eval)?;
    let (n, c, h, w) = out.seg_logits[0].dims4()?;
    if c != 2 {
        return Err(Error::Invalid(format!("expected 2 segmentation channels, got {c}")));
    }
    let classes = class_predictions(&out.cls_logits)?;
    let hw = h * w;
    let mut preds = Vec::with_capacity(n);
    for (i, cls) in classes.into_iter().enumerate() {
        let data = match head {
            PredictionHead::Deepest => {
                let s = &out.seg_logits[3];
                let (bg, fg) = (s.plane(i, 0), s.plane(i, 1));
                bg.iter().zip(fg).map(|(b, f)| (f > b) as u8).collect()
            }
            PredictionHead::Average => {
                let mut p = vec![0.0f64; hw];
                for s in &out.seg_logits {
                    let (bg, fg) = (s.plane(i, 0), s.plane(i, 1));
                    for (acc, (b, f)) in p.iter_mut().zip(bg.iter().zip(fg)) {
                        // sigmoid of the logit gap is the two-way softmax
                        *acc += 0.25 / (1.0 + (b.as_f64() - f.as_f64()).exp());
                    }
                }
                p.iter().map(|&v| (v > 0.5) as u8).collect()
            }
        };
        preds.push(Prediction {
            mask: Mask::new(h, w, data)?,
            class: cls.argmax(),
            probs: cls.g,
        });
    }
    Ok(preds)
}
