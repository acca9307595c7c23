//! Analysis and resynthesis of one-shot drum sounds as sinusoids, filtered
//! noise and a FiLM-conditioned transient network.
//!
//! The crate is organised bottom-up:
//!
//! * [`audio`]: WAV I/O, preprocessing, dataset manifests and splits, and a
//!   synthetic drum generator.
//! * [`timefreq`]: STFT and constant-Q transform.
//! * [`sinusoidal`]: CQT peak picking, partial tracking and oscillator-bank
//!   resynthesis.
//! * [`noise`]: differentiable filtered-noise generator.
//! * [`diff`]: tensors with reverse-mode differentiation, layers, Adam.
//! * [`neural`]: noise/transient encoders, FiLM MLPs and the transient TCN.
//! * [`metrics`]: multi-resolution spectral loss, LSD and spectral-flux error.
//! * [`pipeline`]: mixing strategies, training, evaluation, embedding export.

pub mod audio;
pub mod diff;
mod error;
pub mod metrics;
pub mod neural;
pub mod noise;
pub mod pipeline;
mod real;
pub mod sinusoidal;
pub mod timefreq;

pub use audio::{AudioBuffer, DatasetItem, Instrument, Source};
pub use error::{Error, Result};
pub use metrics::{MetricsReport, MssConfig};
pub use neural::{DrumModel, ModelConfig};
pub use pipeline::{MixingStrategy, TrainConfig};
pub use real::Real;
pub use sinusoidal::{PartialTrack, SinusoidalBank};
pub use noise::NoiseFrames;

pub const DEFAULT_SAMPLE_RATE: u32 = 48_000;
