//! Joint entity and relation extraction with a copy-mechanism
//! sequence-to-sequence decoder and a CRF tagging head (CopyMTL-style).
//!
//! The crate implements the full pipeline from scratch: a small
//! reverse-mode autodiff core, a bidirectional LSTM encoder, a decoder
//! that emits (relation, head, tail) triplets every three steps through
//! either the degenerate linear copy scorer or the fused non-linear one,
//! a BIO CRF tagger whose output completes multi-token entity spans, and
//! the multi-task training loop tying them together.

pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod extraction;
pub mod checkpoint;
pub mod model;
pub mod numerics;
pub mod tagger;
pub mod train;

pub use error::{Error, Result};
