//! Streaming speech recognition built around a word-boundary scout network
//! and a CTC/triggered-attention recognition network.
//!
//! The scout is a causal classifier that flags word-end frames with no
//! look-ahead beyond its convolutional frontend. Detected boundaries drive an
//! adaptive attention mask in the recognition encoder, and a frame-synchronous
//! joint CTC/attention beam search decodes each segment as soon as its
//! boundary lands. Training and evaluation run end to end on a synthetic
//! corpus with exact word alignments.

pub mod ctc;
pub mod data;
pub mod decoding;
pub mod encoder;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod numerics;
pub mod scout;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
