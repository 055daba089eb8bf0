//! Two-stage classification of oriented, texture-defined structures in
//! large images.
//!
//! A first CNN classifies small oriented patches. A rotation-sweep scanner
//! slides a window over a large image, evaluates every window at a set of
//! rotation angles and assembles a 4-D probability map
//! (angle × row × column × category). A second CNN classifies the whole map.
//! Synthetic "cyst wall" images stand in for real microscopy so the pipeline
//! can be trained and checked end to end on a desktop.
//!
//! Module map:
//!
//! - [`image`]: rasters, Netpbm codecs, crop/resize/rotate, color statistics
//! - [`synth`]: procedural large images with masks and placement logs
//! - [`patch`]: oriented (method 1) and random (method 2) patch extraction
//! - [`nn`]: layers, training, gradient checking, `KCNN` weight files
//! - [`scan`]: scan grid, rotation sweep, `FMAP` feature maps, heatmaps
//! - [`eval`]: ROC/AUC and thresholded metrics
//! - [`introspect`]: filter landscapes, gradient-ascent preimages, overlays
//! - [`pipeline`]: splits, training recipes, feature datasets, experiments
//! - [`cli`]: the `keratoscan` command-line front end

pub mod cli;
pub mod error;
pub mod eval;
pub mod image;
pub mod introspect;
pub mod nn;
pub mod patch;
pub mod pipeline;
pub mod scan;
pub mod synth;

pub use error::{Error, Result};
