//! Digital-drug music detection.
//!
//! Audio is decoded and conditioned ([`audio_io`]), summarized as a
//! 34-element feature vector ([`spectral`], [`features`]) and classified by
//! a random forest ([`forest`]). [`evalkit`] scores a model, [`pipeline`]
//! runs corpus-scale extraction and [`synth`] produces labeled test audio.

pub mod audio_io;
pub mod evalkit;
pub mod features;
pub mod forest;
pub mod label;
pub mod pipeline;
pub mod seed;
pub mod spectral;
pub mod synth;

pub use label::Label;
