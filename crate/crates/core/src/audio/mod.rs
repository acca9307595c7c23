//! Audio buffers, WAV I/O, preprocessing, dataset manifests and the
//! synthetic drum generator.

mod dataset;
mod synth;
mod wav;

pub use dataset::{
    generate_synthetic_dataset, read_manifest, split_dataset, write_manifest, DatasetItem,
    DatasetSplit, Instrument, Source,
};
pub use synth::{generate_synthetic_drum, synth_instrument, DrumKind, SynthParams};
pub use wav::{load_wav, save_wav, save_wav_as, WavEncoding};

use crate::error::{invalid, Error, Result};

/// Mono audio at a known sample rate. Samples are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }
}

/// Result of [`preprocess`].
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub buffer: AudioBuffer,
    /// The whole input was at or below the silence threshold.
    pub all_silent: bool,
}

/// Removes leading silence and pads or truncates to `target_seconds`.
///
/// Everything before the first sample whose magnitude exceeds
/// `10^(silence_db / 20)` is dropped. An input that never crosses the
/// threshold becomes an all-zero buffer and is flagged, not rejected.
pub fn preprocess(buffer: &AudioBuffer, target_seconds: f64, silence_db: f64) -> Result<Preprocessed> {
    if !(target_seconds > 0.0) {
        return Err(invalid(format!("target length must be positive, got {target_seconds}")));
    }
    let sr = buffer.sample_rate;
    let target = (target_seconds * sr as f64).round() as usize;
    let threshold = 10f64.powf(silence_db / 20.0) as f32;
    match buffer.samples.iter().position(|v| v.abs() > threshold) {
        Some(start) => {
            let mut samples: Vec<f32> = buffer.samples[start..].iter().take(target).copied().collect();
            samples.resize(target, 0.0);
            Ok(Preprocessed {
                buffer: AudioBuffer {
                    samples,
                    sample_rate: sr,
                },
                all_silent: false,
            })
        }
        None => {
            log::warn!("input never exceeds {silence_db} dBFS; returning silence");
            Ok(Preprocessed {
                buffer: AudioBuffer::silence(target, sr),
                all_silent: true,
            })
        }
    }
}
