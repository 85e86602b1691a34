use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classification::{confusion_and_scores, Averaging, ConfusionMatrix};
use super::segmentation::{area_diff, dice, surface_distances, AreaMeasure};
use super::stats::{bland_altman, pearson_test, BlandAltman, Correlation, MeanSd};
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::synthdata::PlaqueClass;

/// One evaluated sample: reference annotation and model output.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedSample {
    pub id: String,
    pub spacing: f64,
    pub truth_mask: Mask,
    pub pred_mask: Mask,
    pub truth_class: PlaqueClass,
    pub pred_class: PlaqueClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    /// Percent.
    pub dsc: f64,
    /// Absent when the predicted mask is empty.
    pub assd_mm: Option<f64>,
    pub hd_mm: Option<f64>,
    pub d_pa_mm2: f64,
    pub pa_alg_mm2: f64,
    pub pa_man_mm2: f64,
    pub true_class: PlaqueClass,
    pub pred_class: PlaqueClass,
}

impl SampleMetrics {
    pub fn compute(s: &EvaluatedSample) -> Result<Self> {
        if s.truth_mask.is_empty() {
            return Err(Error::Invalid(format!("sample {} has an empty reference mask", s.id)));
        }
        let pa_alg = AreaMeasure::of(&s.pred_mask, s.spacing).pa;
        let pa_man = AreaMeasure::of(&s.truth_mask, s.spacing).pa;
        let (assd_mm, hd_mm) = if s.pred_mask.is_empty() {
            (None, None)
        } else {
            let d = surface_distances(&s.pred_mask, &s.truth_mask, s.spacing)?;
            (Some(d.assd), Some(d.hausdorff))
        };
        Ok(Self {
            id: s.id.clone(),
            dsc: dice(&s.pred_mask, &s.truth_mask)?,
            assd_mm,
            hd_mm,
            d_pa_mm2: area_diff(&s.pred_mask, &s.truth_mask, s.spacing)?,
            pa_alg_mm2: pa_alg,
            pa_man_mm2: pa_man,
            true_class: s.truth_class,
            pred_class: s.pred_class,
        })
    }
}

/// Segmentation and classification statistics over a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    /// Sorted by sample id.
    pub per_sample: Vec<SampleMetrics>,
    pub dsc: MeanSd,
    /// `None` when every prediction was empty.
    pub assd_mm: Option<MeanSd>,
    pub hd_mm: Option<MeanSd>,
    pub d_pa_mm2: MeanSd,
    /// Samples left out of the distance statistics for an empty prediction.
    pub distance_exclusions: usize,
    /// Correlation of predicted against reference plaque areas.
    pub pcc: Option<Correlation>,
    /// Predicted minus reference plaque area.
    pub bland_altman: BlandAltman,
    pub confusion_matrix: ConfusionMatrix,
    pub acc: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub precision_micro: f64,
    pub recall_micro: f64,
    pub f1_micro: f64,
    pub kappa: f64,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn build(samples: &[EvaluatedSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("cannot build a metrics report from zero samples".into()));
        }
        let mut per_sample = samples.iter().map(SampleMetrics::compute).collect::<Result<Vec<_>>>()?;
        per_sample.sort_by(|a, b| a.id.cmp(&b.id));

        let col = |f: fn(&SampleMetrics) -> f64| per_sample.iter().map(f).collect::<Vec<_>>();
        let assd: Vec<f64> = per_sample.iter().filter_map(|s| s.assd_mm).collect();
        let hd: Vec<f64> = per_sample.iter().filter_map(|s| s.hd_mm).collect();
        let pa_alg = col(|s| s.pa_alg_mm2);
        let pa_man = col(|s| s.pa_man_mm2);

        let mut warnings = Vec::new();
        let pcc = match pearson_test(&pa_alg, &pa_man) {
            Ok(c) => Some(c),
            Err(e) => {
                warnings.push(format!("area correlation undefined: {e}"));
                None
            }
        };

        let truth: Vec<_> = per_sample.iter().map(|s| s.true_class).collect();
        let pred: Vec<_> = per_sample.iter().map(|s| s.pred_class).collect();
        let macro_scores = confusion_and_scores(&truth, &pred, Averaging::Macro)?;
        let micro_scores = confusion_and_scores(&truth, &pred, Averaging::Micro)?;
        warnings.extend(macro_scores.warnings.iter().cloned());

        Ok(Self {
            n_samples: per_sample.len(),
            dsc: MeanSd::of(&col(|s| s.dsc)).expect("nonempty"),
            assd_mm: MeanSd::of(&assd),
            hd_mm: MeanSd::of(&hd),
            d_pa_mm2: MeanSd::of(&col(|s| s.d_pa_mm2)).expect("nonempty"),
            distance_exclusions: per_sample.len() - assd.len(),
            pcc,
            bland_altman: bland_altman(&pa_alg, &pa_man)?,
            confusion_matrix: macro_scores.confusion_matrix,
            acc: macro_scores.acc,
            precision_macro: macro_scores.precision,
            recall_macro: macro_scores.recall,
            f1_macro: macro_scores.f1,
            precision_micro: micro_scores.precision,
            recall_micro: micro_scores.recall,
            f1_micro: micro_scores.f1,
            kappa: macro_scores.kappa,
            per_sample,
            warnings,
        })
    }

    /// Precision and F1 under the chosen averaging.
    pub fn precision_f1(&self, averaging: Averaging) -> (f64, f64) {
        match averaging {
            Averaging::Macro => (self.precision_macro, self.f1_macro),
            Averaging::Micro => (self.precision_micro, self.f1_micro),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }

    pub fn write_per_sample_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        for s in &self.per_sample {
            w.serialize(s).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, truth: Mask, pred: Mask, c: PlaqueClass, p: PlaqueClass) -> EvaluatedSample {
        EvaluatedSample {
            id: id.into(),
            spacing: 0.1,
            truth_mask: truth,
            pred_mask: pred,
            truth_class: c,
            pred_class: p,
        }
    }

    #[test]
    fn empty_prediction_is_excluded_from_distances() {
        let truth = Mask::from_fn(10, 10, |y, x| y < 4 && x < 5);
        let pred = Mask::from_fn(10, 10, |y, x| y < 5 && x < 5);
        let r = MetricsReport::build(&[
            sample("b", truth.clone(), Mask::empty(10, 10), PlaqueClass::Mixed, PlaqueClass::Mixed),
            sample("a", truth.clone(), pred, PlaqueClass::Hypoechoic, PlaqueClass::Mixed),
        ])
        .unwrap();
        assert_eq!(r.per_sample[0].id, "a");
        assert_eq!(r.distance_exclusions, 1);
        assert_eq!(r.assd_mm.unwrap().n, 1);
        let empty = &r.per_sample[1];
        assert_eq!(empty.dsc, 0.0);
        assert_eq!(empty.assd_mm, None);
        assert!((empty.d_pa_mm2 - empty.pa_man_mm2).abs() < 1e-15);
        let row_sums: Vec<u64> = r.confusion_matrix.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(row_sums, vec![0, 1, 1]);
    }

    #[test]
    fn rejects_empty_set() {
        assert!(MetricsReport::build(&[]).is_err());
    }
}
