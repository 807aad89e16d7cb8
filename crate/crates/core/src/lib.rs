//! Evaluation harness for panoptic histopathology segmentation.
//!
//! Tissue masks are scored with per-class Dice, nuclei with per-class
//! detection F1 after one-to-one, radius-constrained matching. Around the
//! metrics sit annotation parsing, rasterization, a masked cross-entropy
//! reference, reproducible dataset splits, an external-inference runner,
//! a synthetic case generator and challenge-style reports.

pub mod annotations;
pub mod dataset;
pub mod evaluate;
pub mod loss;
pub mod mask_io;
pub mod metrics;
pub mod raster;
pub mod report;
pub mod rng;
pub mod runner;
pub mod splits;
pub mod synthgen;
pub mod taxonomy;

pub use annotations::{Annotation, AnnotationSet, Geometry, Layer, Point};
pub use raster::{Connectivity, InstanceMask, LabelMask, NucleiSet, Nucleus};
pub use taxonomy::{ClassIndex, Taxonomy, TaxonomyMapping};
