//! Frozen-encoder evaluation: labels, classifier, metrics and protocols.

pub mod classifier;
pub mod labels;
pub mod metrics;
pub mod protocol;

pub use classifier::{train_classifier, Classifier, ClassifierConfig, Dataset};
pub use labels::{sample_labels, LabelSet, Part};
pub use metrics::{f1_score, format_table, AveragedReport, Confusion, MetricsReport, Protocol};
pub use protocol::{classify_split, run_once, run_protocol, stream_rng, ClassifierSource, Piece, ProtocolConfig, RunOutcome, Variant};
