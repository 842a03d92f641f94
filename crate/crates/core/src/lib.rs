//! Attack-agnostic morphing attack detection.
//!
//! Detectors operate on pre-extracted feature vectors. Two families are
//! provided:
//!
//! * supervised linear probes: PCA truncated at an explained-variance
//!   threshold followed by a binary linear SVM ([`svm`]);
//! * one-class detectors: PCA followed by a Gaussian mixture fitted to
//!   bonafide features only, scored by negative log-likelihood ([`gmm`]).
//!
//! Every detector score follows one polarity: higher means more attack-like.
//! Performance is measured with the detection equal error rate ([`metrics`]),
//! and the [`scenario`] module runs the five generalization protocols
//! (baseline, unseen attack, cross source, print-scan, one-class) and renders
//! their result tables.

#![allow(clippy::needless_range_loop)]

pub mod detector;
pub mod error;
pub mod feature_store;
pub mod gmm;
pub mod io;
pub mod metrics;
pub mod pca;
pub mod scenario;
pub mod seed;
pub mod svm;

pub use error::{Error, ErrorKind, Result};
