//! Three-class confusion statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::PlaqueClass;

const K: usize = PlaqueClass::COUNT;

/// Rows are true classes, columns predicted classes.
pub type ConfusionMatrix = [[u64; K]; K];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub confusion_matrix: ConfusionMatrix,
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub kappa: f64,
    pub per_class_precision: [f64; K],
    pub per_class_recall: [f64; K],
    pub per_class_f1: [f64; K],
    /// Classes whose precision or recall had a zero denominator and was
    /// set to 0.
    pub warnings: Vec<String>,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn confusion_matrix(truth: &[PlaqueClass], pred: &[PlaqueClass]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Invalid(format!("{} labels but {} predictions", truth.len(), pred.len())));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("classification scores of an empty set".into()));
    }
    let mut cm = [[0u64; K]; K];
    for (t, p) in truth.iter().zip(pred) {
        cm[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// Cohen's kappa. A matrix concentrated on one class in both truth and
/// prediction has `p_e = 1`; it is perfect agreement and scores 1.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> f64 {
    let n: u64 = cm.iter().flatten().sum();
    let n = n as f64;
    let p_o = (0..K).map(|i| cm[i][i] as f64).sum::<f64>() / n;
    let p_e = (0..K)
        .map(|i| {
            let row: u64 = cm[i].iter().sum();
            let col: u64 = cm.iter().map(|r| r[i]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return 1.0;
    }
    (p_o - p_e) / (1.0 - p_e)
}

pub fn confusion_and_scores(truth: &[PlaqueClass], pred: &[PlaqueClass], averaging: Averaging) -> Result<ClassificationScores> {
    let cm = confusion_matrix(truth, pred)?;
    let n = truth.len() as f64;
    let correct: u64 = (0..K).map(|i| cm[i][i]).sum();
    let acc = correct as f64 / n;
    let mut warnings = Vec::new();
    let mut precision = [0.0; K];
    let mut recall = [0.0; K];
    let mut f1 = [0.0; K];
    for class in PlaqueClass::ALL {
        let c = class.index();
        let predicted: u64 = cm.iter().map(|r| r[c]).sum();
        let actual: u64 = cm[c].iter().sum();
        if predicted == 0 {
            warnings.push(format!("no samples predicted as {class}; its precision is set to 0"));
        } else {
            precision[c] = cm[c][c] as f64 / predicted as f64;
        }
        if actual == 0 {
            warnings.push(format!("no samples of class {class}; its recall is set to 0"));
        } else {
            recall[c] = cm[c][c] as f64 / actual as f64;
        }
        f1[c] = f1_score(precision[c], recall[c]);
    }
    let mean = |v: &[f64; K]| v.iter().sum::<f64>() / K as f64;
    let (p, r, f) = match averaging {
        Averaging::Macro => (mean(&precision), mean(&recall), mean(&f1)),
        // single-label micro averages all collapse to accuracy
        Averaging::Micro => (acc, acc, acc),
    };
    Ok(ClassificationScores {
        confusion_matrix: cm,
        acc,
        precision: p,
        recall: r,
        f1: f,
        kappa: cohen_kappa(&cm),
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        warnings,
    })
}
