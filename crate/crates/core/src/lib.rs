//! Multi-task plaque segmentation and echogenicity classification.
//!
//! A residual-encoder nested U-Net produces four deep-supervision
//! segmentation maps and a plaque class from one shared encoder pass. The
//! region confidence module ([`rcm`]) turns the segmentation maps into
//! spatial weights for the classification features; the category
//! confidence module ([`ccm`]) turns the classification output into
//! per-sample weights for the segmentation loss.

pub mod alloc;
pub mod ccm;
pub mod error;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pgm;
pub mod rcm;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
