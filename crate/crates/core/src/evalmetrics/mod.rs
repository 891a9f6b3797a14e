//! Multiclass evaluation: confusion matrices, one-vs-rest tallies,
//! accuracy, precision, recall, F-measure, ROC curves and report output.

mod metrics;
mod report;
mod roc;

pub use metrics::{
    accuracy, binary_tallies, f_measure, f_measure_of, normalize_rows, precision, recall, BinaryTally,
    ConfusionMatrix, NormalizedMatrix, Score,
};
pub use report::{build_report, build_report_with_beta, Aggregate, ClassMetrics, EvalReport, PredictionTable};
pub use roc::{micro_average_roc, roc_curve, RocCurve, RocPoint};
