//! Synthetic one-shot drums for desk-scale experiments.
//!
//! Membranophones are a handful of decaying inharmonic modes with a short
//! pitch drop, a filtered noise burst and a 2 ms click. Idiophones are a
//! dense bank of decaying high partials over a long high-passed noise tail.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AudioBuffer, Instrument, Source};

const PEAK: f64 = 0.9;

// Ideal circular membrane mode ratios.
const MEMBRANE_MODES: [f64; 8] = [1.0, 1.594, 2.136, 2.296, 2.653, 2.918, 3.156, 3.501];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrumKind {
    Membranophone,
    Idiophone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub seconds: f64,
    pub sample_rate: u32,
    /// Fundamental (membranophone) or lowest partial (idiophone) range in Hz.
    pub pitch_range: (f64, f64),
    /// Decay time constant range in seconds.
    pub decay_range: (f64, f64),
    pub partial_count: (usize, usize),
    /// Noise level relative to the tonal part.
    pub noise_level: (f64, f64),
    /// Maximum relative pitch drop at the onset (membranophones).
    pub max_glide: f64,
    /// Add the onset click (membranophones).
    pub click: bool,
}

impl SynthParams {
    pub fn membranophone(seed: u64) -> Self {
        Self {
            seed,
            seconds: 2.0,
            sample_rate: crate::DEFAULT_SAMPLE_RATE,
            pitch_range: (40.0, 300.0),
            decay_range: (0.15, 0.8),
            partial_count: (3, 8),
            noise_level: (0.1, 0.5),
            max_glide: 0.3,
            click: true,
        }
    }

    pub fn idiophone(seed: u64) -> Self {
        Self {
            seed,
            seconds: 2.0,
            sample_rate: crate::DEFAULT_SAMPLE_RATE,
            pitch_range: (2_000.0, 16_000.0),
            decay_range: (0.2, 1.5),
            partial_count: (40, 80),
            noise_level: (0.3, 0.8),
            max_glide: 0.0,
            click: false,
        }
    }

    pub fn for_kind(kind: DrumKind, seed: u64) -> Self {
        match kind {
            DrumKind::Membranophone => Self::membranophone(seed),
            DrumKind::Idiophone => Self::idiophone(seed),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Renders one drum hit, peak-normalised to 0.9. Deterministic in `params`.
pub fn generate_synthetic_drum(kind: DrumKind, params: &SynthParams) -> AudioBuffer {
    let sr = params.sample_rate as f64;
    let n = (params.seconds * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = vec![0.0f64; n];
    match kind {
        DrumKind::Membranophone => render_membrane(&mut out, sr, params, &mut rng),
        DrumKind::Idiophone => render_plate(&mut out, sr, params, &mut rng),
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { PEAK / peak } else { 0.0 };
    let samples = out.iter().map(|v| (v * gain) as f32).collect();
    AudioBuffer::new(samples, params.sample_rate).expect("synthesis produces finite samples")
}

fn render_membrane(out: &mut [f64], sr: f64, p: &SynthParams, rng: &mut ChaCha8Rng) {
    let nyquist = sr / 2.0;
    let f0 = uniform(rng, p.pitch_range);
    let decay = uniform(rng, p.decay_range);
    let glide = uniform(rng, (0.0, p.max_glide));
    let glide_tau = 0.03;
    let partials = count(rng, p.partial_count).clamp(1, MEMBRANE_MODES.len());
    for (j, ratio) in MEMBRANE_MODES.iter().take(partials).enumerate() {
        let f = f0 * ratio * (1.0 + uniform(rng, (-0.02, 0.02)));
        if f * (1.0 + glide) >= nyquist * 0.95 {
            continue;
        }
        let amp = uniform(rng, (0.6, 1.0)) / (j as f64 + 1.0).powf(0.7);
        let tau = decay / (1.0 + 0.5 * j as f64);
        let mut phase = uniform(rng, (0.0, 2.0 * PI));
        for (i, o) in out.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let inst = f * (1.0 + glide * (-t / glide_tau).exp());
            *o += amp * (-t / tau).exp() * phase.sin();
            phase += 2.0 * PI * inst / sr;
        }
    }

    // Filtered noise burst.
    let level = uniform(rng, p.noise_level);
    let tau = uniform(rng, (0.01, 0.06));
    let cutoff = uniform(rng, (2_000.0, 8_000.0));
    let a = (-2.0 * PI * cutoff / sr).exp();
    let mut lp = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let env = (-t / tau).exp();
        if env < 1e-6 {
            break;
        }
        lp = (1.0 - a) * rng.gen_range(-1.0..1.0) + a * lp;
        *o += level * 2.0 * env * lp;
    }

    if p.click {
        let len = ((0.002 * sr).round() as usize).min(out.len());
        let amp = uniform(rng, (0.5, 1.0));
        for (i, o) in out.iter_mut().take(len).enumerate() {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos();
            *o += amp * w * rng.gen_range(-1.0..1.0);
        }
    }
}

fn render_plate(out: &mut [f64], sr: f64, p: &SynthParams, rng: &mut ChaCha8Rng) {
    let nyquist = sr / 2.0;
    let (lo, hi) = (p.pitch_range.0.max(1.0), p.pitch_range.1.min(nyquist * 0.95));
    let partials = count(rng, p.partial_count);
    let decay = uniform(rng, p.decay_range);
    for _ in 0..partials {
        let f = (uniform(rng, (lo.ln(), hi.ln()))).exp();
        let amp = uniform(rng, (0.2, 1.0));
        let tau = decay * uniform(rng, (0.3, 1.0));
        let phase = uniform(rng, (0.0, 2.0 * PI));
        let w = 2.0 * PI * f / sr;
        let k = (-1.0 / (tau * sr)).exp();
        let mut env = amp;
        for (i, o) in out.iter_mut().enumerate() {
            *o += env * (w * i as f64 + phase).sin();
            env *= k;
        }
    }

    // High-passed noise tail (one-pole low-pass subtracted from its input).
    let level = uniform(rng, p.noise_level) * (partials as f64).sqrt();
    let tau = decay * uniform(rng, (0.5, 1.0));
    let cutoff = 4_000.0;
    let a = (-2.0 * PI * cutoff / sr).exp();
    let mut lp = 0.0;
    let k = (-1.0 / (tau * sr)).exp();
    let mut env = 1.0;
    for o in out.iter_mut() {
        let x: f64 = rng.gen_range(-1.0..1.0);
        lp = (1.0 - a) * x + a * lp;
        *o += level * env * (x - lp);
        env *= k;
    }
}

/// A drum matching `instrument`, with electronic sources rendered cleaner
/// (fewer partials, no mode jitter, deeper pitch drop).
pub fn synth_instrument(instrument: Instrument, source: Source, seed: u64, seconds: f64) -> AudioBuffer {
    let electronic = source == Source::Electronic;
    let (kind, mut params) = match instrument {
        Instrument::Kick => {
            let mut p = SynthParams::membranophone(seed);
            p.pitch_range = (40.0, 80.0);
            p.decay_range = (0.3, 0.9);
            p.noise_level = (0.05, 0.2);
            (DrumKind::Membranophone, p)
        }
        Instrument::Snare => {
            let mut p = SynthParams::membranophone(seed);
            p.pitch_range = (150.0, 250.0);
            p.decay_range = (0.1, 0.3);
            p.noise_level = (0.5, 1.0);
            (DrumKind::Membranophone, p)
        }
        Instrument::Tom => {
            let mut p = SynthParams::membranophone(seed);
            p.pitch_range = (80.0, 200.0);
            p.decay_range = (0.3, 0.8);
            (DrumKind::Membranophone, p)
        }
        Instrument::Other => {
            let mut p = SynthParams::membranophone(seed);
            p.pitch_range = (200.0, 300.0);
            (DrumKind::Membranophone, p)
        }
        Instrument::Hihat => {
            let mut p = SynthParams::idiophone(seed);
            p.decay_range = (0.05, 0.3);
            (DrumKind::Idiophone, p)
        }
        Instrument::Cymbal => {
            let mut p = SynthParams::idiophone(seed);
            p.decay_range = (0.5, 1.5);
            (DrumKind::Idiophone, p)
        }
    };
    params.seconds = seconds;
    if electronic {
        match kind {
            DrumKind::Membranophone => {
                params.partial_count = (3, 4);
                params.max_glide = 0.6;
            }
            DrumKind::Idiophone => params.partial_count = (40, 50),
        }
    }
    generate_synthetic_drum(kind, &params)
}
