//! Segmentation-based handwritten word spotting.
//!
//! The crate is organized around a small set of building blocks:
//!
//! - [`phoc`] — the pyramidal histogram-of-characters (PHOC) string
//!   embedding used as the attribute target for training and as the
//!   query representation for string-based retrieval.
//! - [`diffcore`] — a minimal reverse-mode differentiable-computation
//!   core: double-precision arrays, a tape of layer operations
//!   (convolution, pooling, temporal pyramid pooling, dropout, ...),
//!   binary cross-entropy, Adam, He initialization and a
//!   finite-difference gradient checker.
//! - [`arch`] — four word-spotting CNN blueprints (a small LeNet-style
//!   net, a VGG-style net with temporal pyramid pooling, a residual
//!   bottleneck net and a densely connected net) with shape inference
//!   and parameter accounting, plus [`arch::Network`] which executes a
//!   blueprint on the tape.
//! - [`retrieval`] — query-by-example / query-by-string retrieval over
//!   predicted attribute vectors and interpolated mean-average-precision
//!   evaluation.
//! - [`data`] — manifest ingestion, cross-validation folds, pixel
//!   normalization and class-balanced affine augmentation, plus a
//!   bundled synthetic toy corpus for desk-scale experiments.
//! - [`harness`] — the experiment harness: run configuration, the
//!   training loop, checkpointing, descriptor extraction and result
//!   tables.

pub mod arch;
pub mod data;
pub mod diffcore;
pub mod harness;
pub mod phoc;
pub mod retrieval;

pub use diffcore::Array;
pub use phoc::{PhocConfig, PhocVector};
