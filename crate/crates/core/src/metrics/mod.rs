//! Evaluation statistics: overlap, area and surface distances for the
//! segmentation task, confusion-based scores for classification, and the
//! area agreement analyses.

mod classification;
mod edt;
mod report;
mod segmentation;
mod stats;

pub use classification::{cohen_kappa, confusion_and_scores, confusion_matrix, f1_score, Averaging, ClassificationScores, ConfusionMatrix};
pub use report::{EvaluatedSample, MetricsReport, SampleMetrics};
pub use segmentation::{area_diff, assd, contour_of, dice, hausdorff, surface_distances, AreaMeasure, Contour, SurfaceDistances};
pub use stats::{bland_altman, pearson, pearson_test, BlandAltman, Correlation, MeanSd};
