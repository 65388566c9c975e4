//! Document image enhancement and binarization.
//!
//! The pipeline: a patch-level encoder-decoder network predicts the negated
//! degradation of a document image and adds it back onto the input, applied
//! either recurrently (one network, many passes) or as a stack (one network
//! per pass). The enhanced, locally uniform image is then binarized with a
//! classical global (Otsu) or local (Sauvola) threshold, and results are
//! scored with the standard document-binarization contest metrics.
//!
//! Modules:
//! - [`image`] — grayscale rasters, PGM I/O, patches, stitching, resampling
//! - [`synth`] — synthetic degraded-document corpus generation
//! - [`tensor`] / [`net`] — minimal NCHW tensor engine and the network
//! - [`refine`] — iterative residual enhancement and its training loop
//! - [`threshold`] — Otsu and Sauvola binarization
//! - [`metrics`] — F-measure, pseudo F-measure, PSNR, DRD
//! - [`model`] — chain serialization (the `INKW` model file)

pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod net;
pub mod refine;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod threshold;

pub use error::{Error, Result};
