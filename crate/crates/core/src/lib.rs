//! Geometry and post-processing for two-stage word detection in natural scene
//! images.
//!
//! The crate covers everything around the neural scorer: prior box lattices,
//! IoU-based label assignment with an ambiguous-text class, box regression
//! coding, greedy NMS, iterative voting over detection sets, nested-box
//! filtering, multi-level ROI max pooling, loss evaluation with gradient
//! checks, and recall/precision evaluation. A synthetic scene generator with
//! an IoU oracle scorer stands in for the network so that the full pipeline
//! can be run and tested end to end.

pub mod codec;
pub mod error;
pub mod evaluation;
pub mod formats;
pub mod geometry;
pub mod labeling;
pub mod losses;
pub mod mlrp;
pub mod pipeline;
pub mod priors;
pub mod suppression;
pub mod synth;

pub use codec::{decode, encode, RegressionOffsets};
pub use error::{Error, Result};
pub use geometry::{contains, iou, BBox, CenterBox, ScoredBox};
pub use suppression::DetectionSet;
