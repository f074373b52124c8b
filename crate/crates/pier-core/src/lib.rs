//! Core algorithms for learning and evaluating contextual representations of
//! potentially idiomatic expressions (PIEs).
//!
//! The crate is organized around five building blocks:
//!
//! * [`numerics`] — flat-buffer tensors and a tape-based reverse-mode
//!   autodiff engine; every kernel carries a backward rule that is verified
//!   against central finite differences.
//! * [`model`] — a small encoder-decoder transformer, bottleneck adapters,
//!   and the per-layer attention fusion that routes between the frozen base
//!   and frozen adapter representations.
//! * [`training`] — the copy, cosine-similarity, and prompt-infilling
//!   objectives plus the staged trainer (base, adapter, fusion).
//! * [`corpus`] — a deterministic synthetic PIE corpus generator with
//!   sense-correlated context cues and meaning groups.
//! * [`evaluation`] — intrinsic (clustering, differentiation) and extrinsic
//!   (sense classification, span detection) protocols and report assembly.
//!
//! Everything here is `no_std` + `alloc`; file formats, configs, and the CLI
//! live in the companion `pier` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod checksum;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gradsuite;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use error::CoreError;
pub use numerics::real::Real;
pub use numerics::tape::{Tape, Var};
pub use numerics::tensor::Tensor;
pub use rng::Rng;
