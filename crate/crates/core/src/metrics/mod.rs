//! Event rolls, DCASE-style annotations and frame-based F1 / error rate.

mod annotation;
mod report;
mod roll;

pub use annotation::{
    annotations_to_roll, format_annotations, parse_annotations, roll_to_annotations, Annotation,
};
pub use report::{
    frame_metrics, per_class_metrics, report_csv, segment_metrics, MetricsReport, REPORT_HEADER,
};
pub use roll::EventRoll;
