//! Rotated IoU, greedy matching, average precision and the evaluation report.

pub mod ap;
pub mod geometry;
pub mod matching;
pub mod report;

pub use ap::average_precision;
pub use geometry::{bev_iou, iou3d};
pub use matching::{match_detections, Criterion, MatchConfig, MatchMode, Matching};
pub use report::{evaluate, evaluate_files, ClassReport, EvalReport};
