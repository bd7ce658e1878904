//! Region-level semantic annotation of natural scene images.
//!
//! Images are cut into a fixed 10×10 grid. Each grid cell is described by a
//! concept-based bag of visual words (CBOW) built from DoG/SIFT keypoints
//! quantized against k-means vocabularies, optionally fused with HSV color
//! and Haar wavelet texture features, and annotated with a local semantic
//! concept by a prototype nearest-neighbour classifier or a one-vs-one SVM
//! with a histogram intersection kernel.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Every parallel reduction is ordered, so results do not depend on the
//! number of worker threads.

pub mod analysis;
pub mod annotators;
pub mod cbow;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod keypoints;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod vocabulary;

pub use error::{Error, Result};
