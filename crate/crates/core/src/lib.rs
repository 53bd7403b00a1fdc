//! Detection post-processing toolkit.
//!
//! The crate covers four related jobs:
//!
//! - COCO-style Average Precision ([`ap`]), including 101-point interpolated
//!   precision and size-stratified AP.
//! - AP-maximizing rescoring targets built from ground truth ([`matching`]),
//!   either by IoU-prioritized greedy matching or by confidence-prioritized
//!   matching.
//! - A contextual rescoring network ([`model`]) that reads only the
//!   confidence, class and box geometry of every detection in an image and
//!   predicts a new confidence per detection, plus its training loop
//!   ([`training`]).
//! - Diagnostics: error breakdown by accumulated confidence
//!   ([`error_analysis`]), class co-occurrence ([`cooccurrence`]) and
//!   per-image ranking of confidence changes ([`rank`]).
//!
//! [`synth`] generates synthetic scenes and holds the exhaustive AP oracle used
//! to check the greedy target construction.

pub mod ap;
pub mod bbox;
pub mod cooccurrence;
pub mod dataset;
pub mod error;
pub mod error_analysis;
pub mod matching;
pub mod model;
pub mod rank;
pub mod synth;
pub mod training;

pub use ap::{evaluate, ApReport, EvalParams};
pub use bbox::{iou, BBox};
pub use dataset::{CategoryTable, Detection, GroundTruth, ImageRecord};
pub use error::{Error, Result};
pub use matching::{MatchingMode, TargetConfig, TargetMode};
pub use model::{ModelConfig, RescoringModel};
