//! Evaluation against bar annotations and synthetic test material.

mod corpus;
mod metrics;
mod pairs;
mod synth;

pub use corpus::{labeled_sequences, read_labels, read_labeled_dir, write_labeled_dir, write_labels, write_scenario};
pub use metrics::{
    align_errors, error_curve_csv, read_annotations, read_error_curve, read_report, read_sections, summarize,
    write_annotations, write_report, write_sections, BarAnnotation, BarError, EvaluationReport, TracePoint,
};
pub use pairs::{smooth_feature_pair, stretched_pair, FeaturePair, PairSpec};
pub use synth::{
    frame_labels, generate_corpus, generate_scenario, inserted_duration, jump_scenario, render_material, CorpusSpec,
    LabelSegment, LabeledClip, Material, RenderedStream, Scenario, ScenarioScript, SectionSpec, Segment, Style,
    SYNTH_RATE,
};

use crate::audio::AudioError;
use crate::features::FeatureError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("no bars to evaluate")]
    NoBars,
    #[error("target has {target} bars but the reference has {reference}")]
    MismatchedBars { target: usize, reference: usize },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("invalid scenario: {0}")]
    InvalidScript(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
