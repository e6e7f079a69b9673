//! Score-level fusion of heterogeneous object detectors.
//!
//! Every detector's raw score is mapped through a confidence model built
//! from its validation precision-recall sweep to a basic probability
//! assignment over {target, non-target, intermediate}. Masses from all
//! detectors that agree on an object are merged with Dempster's rule and
//! ranked by `belief(target) - belief(non-target)`.
//!
//! Modules, roughly in pipeline order:
//!
//! - [`geometry`]: boxes and IoU
//! - [`dataset`]: JSON-lines detections and groundtruth
//! - [`evaluation`]: matching, precision-recall sweeps, AP and mAP
//! - [`confidence`]: confidence models and basic probability assignment
//! - [`fusion`]: clustering, Dempster combination, refinement and NMS
//! - [`baselines`]: Platt, weighted-sum and naive Bayes fusers
//! - [`synth`]: synthetic worlds for experiments
//! - [`pipeline`]: the end-to-end commands behind the `dbf` binary

pub mod baselines;
pub mod confidence;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod pipeline;
pub mod synth;

pub use confidence::{ConfidenceModel, Exponent, MassFunction, Observation};
pub use dataset::{DetectionRecord, DetectorDump, GroundTruthRecord, Scope};
pub use error::{Error, Result};
pub use evaluation::ApMode;
pub use fusion::{ConfidenceModelSet, FusedDetection, FusionParams};
pub use geometry::BBox;
