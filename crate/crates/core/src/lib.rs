//! Spatial-spectral-temporal attention fusion (SSTAF) for motor-imagery EEG.
//!
//! The crate covers the whole decoding pipeline: EDF ingestion and epoch
//! extraction ([`ingest`]), signal conditioning ([`dsp`]), STFT power
//! features ([`stft`]), the attention + transformer classifier ([`model`],
//! built on the autodiff core in [`tensor`]), AdamW training ([`train`]),
//! subject-aware cross-validation ([`eval`]) and a synthetic EEG generator
//! ([`synth`]) for exercising all of it without the public datasets.

pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod stft;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
