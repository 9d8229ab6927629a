//! Pixelwise microstructure segmentation and metrology.
//!
//! A small hypercolumn network (convolutional backbone, sparse bilinear
//! feature sampling, MLP pixel classifier) is trained on micrograph/label
//! pairs. Predicted label maps are turned into per-class segmentation
//! metrics, particle size distributions and denuded-zone width
//! distributions. A procedural scene generator provides exact ground truth
//! for tests and for desk-scale training.

pub mod augment;
pub mod dzone;
pub mod error;
pub mod imagecore;
pub mod metrics;
pub mod metrology;
pub mod net;
pub mod real;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
pub use imagecore::{ClassTaxonomy, LabelMap, Micrograph};
pub use real::Real;
