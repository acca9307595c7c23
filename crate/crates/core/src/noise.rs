//! Filtered-noise generator driven by frame-wise band gains.
//!
//! Each frame's gains are a zero-phase magnitude response on linearly spaced
//! bands from DC to Nyquist. The inverse DFT gives a symmetric impulse
//! response of length `2·bands`, which is rotated to linear phase and
//! Hann-tapered. One shared white-noise stream is convolved with each frame's
//! response, and the results are overlap-added under Hann windows of length
//! `2·hop` centred on `frame·hop`.
//!
//! Two routes compute the impulse responses: an FFT for plain evaluation and a
//! fixed cosine basis (`ir = gains · Bᵀ`) on the gradient tape.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::diff::Var;
use crate::error::{invalid, shape_err, Error, Result};
use crate::timefreq::hann;
use crate::Real;

pub const DEFAULT_BANDS: usize = 128;
pub const DEFAULT_HOP: usize = 128;

/// Frame-wise band gains `[n_frames, n_bands]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFrames {
    pub gains: Vec<f64>,
    pub n_frames: usize,
    pub n_bands: usize,
    pub hop: usize,
}

impl NoiseFrames {
    pub fn new(gains: Vec<f64>, n_bands: usize, hop: usize) -> Result<Self> {
        if n_bands == 0 || hop == 0 || gains.len() % n_bands != 0 {
            return Err(invalid(format!(
                "{} gains do not form rows of {n_bands} bands",
                gains.len()
            )));
        }
        if let Some(g) = gains.iter().find(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("noise gain {g}")));
        }
        if let Some(g) = gains.iter().find(|g| **g < 0.0) {
            return Err(invalid(format!("negative noise gain {g}")));
        }
        Ok(Self {
            n_frames: gains.len() / n_bands,
            gains,
            n_bands,
            hop,
        })
    }

    /// Gains constant over `n_frames` frames.
    pub fn constant(row: &[f64], n_frames: usize, hop: usize) -> Result<Self> {
        Self::new(row.repeat(n_frames), row.len(), hop)
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.gains[i * self.n_bands..(i + 1) * self.n_bands]
    }

    pub fn frames_for(n_samples: usize, hop: usize) -> usize {
        n_samples.div_ceil(hop)
    }
}

/// Impulse response of length `2·nu.len()` for one gain vector.
///
/// The Nyquist bin, which has no band of its own, repeats the last gain.
pub fn gains_to_ir(nu: &[f64]) -> Result<Vec<f64>> {
    if nu.is_empty() {
        return Err(invalid("gain vector is empty"));
    }
    if let Some(g) = nu.iter().find(|g| !(**g >= 0.0)) {
        return Err(invalid(format!("noise gain {g} is negative or NaN")));
    }
    let n = nu.len();
    let len = 2 * n;
    let mut spec = vec![Complex::new(0.0, 0.0); len];
    for k in 0..=n {
        let g = nu[k.min(n - 1)];
        spec[k] = Complex::new(g, 0.0);
        if k > 0 && k < n {
            spec[len - k] = Complex::new(g, 0.0);
        }
    }
    FftPlanner::<f64>::new().plan_fft_inverse(len).process(&mut spec);
    let w: Vec<f64> = hann(len);
    Ok((0..len)
        .map(|i| spec[(i + n) % len].re / len as f64 * w[i])
        .collect())
}

/// White noise uniform on `[−1, 1]`, deterministic in `seed`.
pub fn noise_stream(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Cached basis and windows for one (bands, hop) configuration.
#[derive(Debug, Clone)]
pub struct NoiseSynth<T: Real> {
    n_bands: usize,
    hop: usize,
    /// Length of the zero-padded impulse response, `max(2·bands, 2·hop)`.
    ir_len: usize,
    /// `[n_bands, ir_len]`: row `k` is the response to a unit gain in band `k`.
    basis_t: Vec<T>,
    window: Vec<T>,
}

impl<T: Real> NoiseSynth<T> {
    pub fn new(n_bands: usize, hop: usize) -> Result<Self> {
        if n_bands == 0 || hop == 0 {
            return Err(invalid("noise bands and hop must be positive"));
        }
        let len = 2 * n_bands;
        let ir_len = len.max(2 * hop);
        let offset = (ir_len - len) / 2;
        let taper: Vec<f64> = hann(len);
        let mut basis_t = vec![T::zero(); n_bands * ir_len];
        for k in 0..n_bands {
            for i in 0..len {
                let d = i as f64 - n_bands as f64;
                let mut v = if k == 0 {
                    1.0
                } else {
                    2.0 * (PI * k as f64 * d / n_bands as f64).cos()
                };
                if k == n_bands - 1 {
                    // Nyquist bin carries the last gain
                    v += (PI * d).cos();
                }
                basis_t[k * ir_len + offset + i] = T::of(v / len as f64 * taper[i]);
            }
        }
        Ok(Self {
            n_bands,
            hop,
            ir_len,
            basis_t,
            window: hann(2 * hop),
        })
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn ir_len(&self) -> usize {
        self.ir_len
    }

    /// Noise stream long enough for `n_samples` outputs with no start-up zeros.
    pub fn noise(&self, seed: u64, n_samples: usize) -> Vec<T> {
        noise_stream(seed, n_samples + self.ir_len - 1)
            .into_iter()
            .map(T::of)
            .collect()
    }

    /// Impulse responses `[L, ir_len]` for gains `[L, n_bands]`.
    pub fn irs_var<'t>(&self, gains: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = gains.shape();
        if shape.len() != 2 || shape[1] != self.n_bands {
            return Err(shape_err("noise_irs", format!("gains {shape:?}, bands {}", self.n_bands)));
        }
        let basis = gains
            .tape()
            .constant(self.basis_t.clone(), &[self.n_bands, self.ir_len])?;
        gains.matmul(basis)
    }

    /// Filtered noise `[n_samples]` for gains `[L, n_bands]` on the tape.
    pub fn render_var<'t>(&self, gains: Var<'t, T>, noise: &[T], n_samples: usize) -> Result<Var<'t, T>> {
        let irs = self.irs_var(gains)?;
        self.overlap_add_var(irs, noise, n_samples)
    }

    /// Convolves `noise` with each row of `irs` and overlap-adds under the
    /// frame windows.
    pub fn overlap_add_var<'t>(&self, irs: Var<'t, T>, noise: &[T], n_samples: usize) -> Result<Var<'t, T>> {
        let shape = irs.shape();
        let n_frames = NoiseFrames::frames_for(n_samples, self.hop);
        if shape != [n_frames, self.ir_len] {
            return Err(shape_err(
                "overlap_add",
                format!("irs {shape:?}, expected [{n_frames}, {}]", self.ir_len),
            ));
        }
        if noise.len() < n_samples + self.ir_len - 1 {
            return Err(invalid(format!(
                "noise stream of {} samples is shorter than {}",
                noise.len(),
                n_samples + self.ir_len - 1
            )));
        }
        let out = overlap_add(&irs.data(), noise, &self.window, self.hop, self.ir_len, n_samples);
        let noise = noise[..n_samples + self.ir_len - 1].to_vec();
        let window = self.window.clone();
        let (hop, k) = (self.hop, self.ir_len);
        Ok(irs.tape().record(out, vec![n_samples], &[irs], move |a, g| {
            g[0] = Some(overlap_add_grad(a.grad, &noise, &window, hop, k, n_frames));
        }))
    }

    /// Plain evaluation with FFT-built impulse responses.
    pub fn render(&self, frames: &NoiseFrames, noise: &[T], n_samples: usize) -> Result<Vec<T>> {
        if frames.n_bands != self.n_bands || frames.hop != self.hop {
            return Err(invalid(format!(
                "frames have {} bands at hop {}, generator {} at {}",
                frames.n_bands, frames.hop, self.n_bands, self.hop
            )));
        }
        let expected = NoiseFrames::frames_for(n_samples, self.hop);
        if frames.n_frames != expected {
            return Err(invalid(format!(
                "{} frames given, {n_samples} samples at hop {} need {expected}",
                frames.n_frames, self.hop
            )));
        }
        if noise.len() < n_samples + self.ir_len - 1 {
            return Err(invalid(format!(
                "noise stream of {} samples is shorter than {}",
                noise.len(),
                n_samples + self.ir_len - 1
            )));
        }
        let offset = (self.ir_len - 2 * self.n_bands) / 2;
        let mut irs = vec![T::zero(); frames.n_frames * self.ir_len];
        for i in 0..frames.n_frames {
            let ir = gains_to_ir(frames.frame(i))?;
            for (j, v) in ir.into_iter().enumerate() {
                irs[i * self.ir_len + offset + j] = T::of(v);
            }
        }
        Ok(overlap_add(&irs, noise, &self.window, self.hop, self.ir_len, n_samples))
    }
}

/// Frame `i` covers samples `[(i−1)·hop, (i+1)·hop)`, clipped to the output.
#[inline]
fn frame_span(i: usize, hop: usize, n_samples: usize) -> (usize, usize, usize) {
    let start = (i * hop) as isize - hop as isize;
    let lo = start.max(0) as usize;
    let hi = ((i + 1) * hop).min(n_samples);
    (lo, hi, (lo as isize - start) as usize)
}

fn overlap_add<T: Real>(irs: &[T], noise: &[T], window: &[T], hop: usize, k: usize, n_samples: usize) -> Vec<T> {
    let n_frames = irs.len() / k;
    let mut out = vec![T::zero(); n_samples];
    let mut acc = vec![T::zero(); 2 * hop];
    for i in 0..n_frames {
        let ir = &irs[i * k..(i + 1) * k];
        let (lo, hi, w0) = frame_span(i, hop, n_samples);
        if lo >= hi {
            continue;
        }
        let acc = &mut acc[..hi - lo];
        acc.fill(T::zero());
        // output n uses noise[n − m + k − 1]
        for (m, &h) in ir.iter().enumerate() {
            if h == T::zero() {
                continue;
            }
            let src = &noise[lo + k - 1 - m..hi + k - 1 - m];
            for (a, &e) in acc.iter_mut().zip(src) {
                *a = *a + h * e;
            }
        }
        for (j, &a) in acc.iter().enumerate() {
            out[lo + j] = out[lo + j] + window[w0 + j] * a;
        }
    }
    out
}

fn overlap_add_grad<T: Real>(grad: &[T], noise: &[T], window: &[T], hop: usize, k: usize, n_frames: usize) -> Vec<T> {
    let n_samples = grad.len();
    let mut g_ir = vec![T::zero(); n_frames * k];
    let mut gw = vec![T::zero(); 2 * hop];
    for i in 0..n_frames {
        let (lo, hi, w0) = frame_span(i, hop, n_samples);
        if lo >= hi {
            continue;
        }
        let gw = &mut gw[..hi - lo];
        for (j, v) in gw.iter_mut().enumerate() {
            *v = grad[lo + j] * window[w0 + j];
        }
        for m in 0..k {
            let src = &noise[lo + k - 1 - m..hi + k - 1 - m];
            g_ir[i * k + m] = gw.iter().zip(src).fold(T::zero(), |s, (&a, &b)| s + a * b);
        }
    }
    g_ir
}

/// Filtered noise with the default generator for `frames`; `n_samples` must
/// match the frame count.
pub fn filtered_noise(frames: &NoiseFrames, n_samples: usize, seed: u64, sample_rate: u32) -> Result<AudioBuffer> {
    let synth = NoiseSynth::<f64>::new(frames.n_bands, frames.hop)?;
    let noise = synth.noise(seed, n_samples);
    let y = synth.render(frames, &noise, n_samples)?;
    AudioBuffer::new(y.into_iter().map(|v| v as f32).collect(), sample_rate)
}

/// Tape version of [`filtered_noise`] for gains already on `tape`.
pub fn filtered_noise_var<'t, T: Real>(
    synth: &NoiseSynth<T>,
    gains: Var<'t, T>,
    n_samples: usize,
    seed: u64,
) -> Result<Var<'t, T>> {
    let noise = synth.noise(seed, n_samples);
    synth.render_var(gains, &noise, n_samples)
}
