//! FANet: a single-stage face detector built on agglomerated feature
//! hierarchies, at a scale that trains on one CPU core.
//!
//! The pipeline is trunk ([`backbone`]) → hierarchy ([`neck`],
//! [`agglomeration`]) → per-level heads ([`model`]) → hierarchical multibox
//! loss ([`loss`]) for training, and level-m heads → decode → NMS
//! ([`inference`]) for testing.

pub mod agglomeration;
pub mod anchors;
pub mod backbone;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod gradsuite;
pub mod inference;
pub mod loss;
pub mod model;
pub mod neck;
pub mod nn;
pub mod trainer;

pub use error::{FanetError, Result};

/// Detection layers in the trunk.
pub const NUM_LAYERS: usize = 6;
/// Stride of each detection layer in input pixels.
pub const STRIDES: [usize; NUM_LAYERS] = [4, 8, 16, 32, 64, 128];
