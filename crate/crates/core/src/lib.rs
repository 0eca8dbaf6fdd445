//! Building blocks for polygon-based few-shot segmentation with a language model.
//!
//! The crate covers everything in that pipeline that does not need a trained
//! network:
//!
//! - [`geometry`]: Bézier contours, scanline fill, polar 16-vertex polygon
//!   ground truth and mask IoU.
//! - [`synthesis`]: pseudo support/query episodes filled with Gaussian noise
//!   under RGB-mean distance constraints.
//! - [`curriculum`]: the per-step difficulty schedule used while pretraining on
//!   those episodes.
//! - [`tablegen`]: the region/attribute corresponding table and the
//!   expert-guided refinement loop, against pluggable embedder and chat
//!   backends.
//! - [`instruction`]: instruction templates, coordinate tokens and the parser
//!   for polygon tuples emitted by the model.
//! - [`eval`]: bipartite matching of predictions to ground truth and IoU
//!   reports.

pub mod curriculum;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod instruction;
pub mod rng;
pub mod synthesis;
pub mod tablegen;

pub use error::{Error, Result};
