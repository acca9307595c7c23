//! Short-time Fourier transform and constant-Q transform.
//!
//! STFT frames are centred: the signal is reflect-padded by `win_size / 2` on
//! both ends so frame `t` is centred on sample `t·hop`. The window occupies the
//! first `win_size` samples of each `fft_size` buffer.
//!
//! The CQT evaluates per-bin Hann-windowed complex exponentials directly at
//! frame centres. Kernels that run past either end of the signal are
//! renormalised over the part that overlaps it, so a stationary sinusoid reads
//! the same magnitude in edge frames as in interior ones.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::diff::Var;
use crate::error::{invalid, Result};
use crate::Real;

pub type Complex64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrogramKind {
    /// Linearly spaced bins (STFT).
    Linear,
    /// Logarithmically spaced bins (CQT).
    Log,
}

/// Frame-major complex time-frequency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    /// `values[frame * n_bins + bin]`.
    pub values: Vec<Complex64>,
    pub frame_rate: f64,
    /// Centre frequency of every bin in Hz, strictly increasing.
    pub freqs: Vec<f64>,
    pub kind: SpectrogramKind,
    /// Length of the analysed signal in samples.
    pub n_samples: usize,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn magnitude(&self, t: usize, bin: usize) -> f64 {
        self.values[t * self.n_bins + bin].norm()
    }

    pub fn frame_magnitudes(&self, t: usize) -> Vec<f64> {
        self.frame(t).iter().map(|c| c.norm()).collect()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    /// Debug dump with one `frame,bin,value` row per cell (magnitudes).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "frame,bin,value")?;
        for t in 0..self.n_frames {
            for (b, c) in self.frame(t).iter().enumerate() {
                writeln!(w, "{t},{b},{}", c.norm())?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Periodic Hann window: `0.5 − 0.5·cos(2πm / len)`.
pub fn hann<T: Real>(len: usize) -> Vec<T> {
    (0..len)
        .map(|m| T::of(0.5 - 0.5 * (2.0 * PI * m as f64 / len as f64).cos()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_size: usize,
    pub hop: usize,
}

impl StftConfig {
    pub fn new(fft_size: usize, win_size: usize, hop: usize) -> Self {
        Self {
            fft_size,
            win_size,
            hop,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.win_size / 2
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.win_size == 0 || self.win_size > self.fft_size {
            return Err(invalid(format!(
                "window size {} must be in 1..={}",
                self.win_size, self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.win_size {
            return Err(invalid(format!(
                "hop {} must be in 1..={} (window size)",
                self.hop, self.win_size
            )));
        }
        if len <= self.pad() {
            return Err(invalid(format!(
                "signal of {len} samples is too short for reflect padding of {}",
                self.pad()
            )));
        }
        Ok(())
    }

    pub fn n_frames(&self, len: usize) -> usize {
        (len + 2 * self.pad() - self.win_size) / self.hop + 1
    }
}

/// Index into the signal for padded position `j` under reflect padding.
#[inline]
fn reflect(j: isize, len: usize) -> usize {
    let n = len as isize;
    let mut i = j;
    // one reflection suffices because pad < len
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

struct StftPlan<T: Real> {
    cfg: StftConfig,
    window: Vec<T>,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Real> StftPlan<T> {
    fn new(cfg: StftConfig) -> Self {
        let mut planner = FftPlanner::<T>::new();
        Self {
            cfg,
            window: hann(cfg.win_size),
            fft: planner.plan_fft_forward(cfg.fft_size),
        }
    }

    /// Complex one-sided spectra, frame-major, `n_bins` per frame.
    fn forward(&self, x: &[T]) -> Vec<Complex<T>> {
        let cfg = self.cfg;
        let n_frames = cfg.n_frames(x.len());
        let n_bins = cfg.n_bins();
        let pad = cfg.pad() as isize;
        let mut out = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.fft.get_inplace_scratch_len()];
        for t in 0..n_frames {
            buf.fill(Complex::new(T::zero(), T::zero()));
            let start = (t * cfg.hop) as isize - pad;
            for (m, &w) in self.window.iter().enumerate() {
                buf[m] = Complex::new(x[reflect(start + m as isize, x.len())] * w, T::zero());
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            out.extend_from_slice(&buf[..n_bins]);
        }
        out
    }
}

/// Complex STFT of `x` (see module docs for the framing convention).
pub fn stft(x: &AudioBuffer, cfg: StftConfig) -> Result<Spectrogram> {
    stft_samples(&x.to_f64(), x.sample_rate(), cfg)
}

pub fn stft_samples(x: &[f64], sample_rate: u32, cfg: StftConfig) -> Result<Spectrogram> {
    cfg.validate(x.len())?;
    let plan = StftPlan::<f64>::new(cfg);
    let values = plan.forward(x);
    let n_bins = cfg.n_bins();
    Ok(Spectrogram {
        n_frames: values.len() / n_bins,
        n_bins,
        values,
        frame_rate: sample_rate as f64 / cfg.hop as f64,
        freqs: (0..n_bins)
            .map(|k| k as f64 * sample_rate as f64 / cfg.fft_size as f64)
            .collect(),
        kind: SpectrogramKind::Linear,
        n_samples: x.len(),
    })
}

/// STFT magnitudes `[frames, bins]` without a tape.
pub fn stft_magnitude<T: Real>(x: &[T], cfg: StftConfig) -> Result<Vec<T>> {
    cfg.validate(x.len())?;
    Ok(StftPlan::new(cfg).forward(x).iter().map(|c| c.norm()).collect())
}

/// STFT magnitudes `[frames, bins]` of a 1-D signal, recorded on the tape.
///
/// The magnitude's subgradient at exactly zero is taken as 0.
pub fn stft_magnitude_var<'t, T: Real>(x: Var<'t, T>, cfg: StftConfig) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 1 {
        return Err(invalid(format!("stft expects a 1-D signal, got {shape:?}")));
    }
    let len = shape[0];
    cfg.validate(len)?;
    let plan = StftPlan::<T>::new(cfg);
    let spec = plan.forward(&x.data());
    let mags: Vec<T> = spec.iter().map(|c| c.norm()).collect();
    let n_bins = cfg.n_bins();
    let n_frames = spec.len() / n_bins;
    let fwd = plan.fft.clone();
    let window = plan.window.clone();
    Ok(x.tape().record(mags, vec![n_frames, n_bins], &[x], move |a, g| {
        let zero = Complex::new(T::zero(), T::zero());
        let pad = cfg.pad() as isize;
        let mut gx = vec![T::zero(); len];
        let mut buf = vec![zero; cfg.fft_size];
        let mut scratch = vec![zero; fwd.get_inplace_scratch_len()];
        for t in 0..n_frames {
            buf.fill(zero);
            for k in 0..n_bins {
                let xk = spec[t * n_bins + k];
                let mag = a.out[t * n_bins + k];
                if mag > T::zero() {
                    buf[k] = xk.conj() * (a.grad[t * n_bins + k] / mag);
                }
            }
            // Re Σ_k c_k e^{−2πikm/N} is the forward transform of c.
            fwd.process_with_scratch(&mut buf, &mut scratch);
            let start = (t * cfg.hop) as isize - pad;
            for (m, &w) in window.iter().enumerate() {
                let i = reflect(start + m as isize, len);
                gx[i] = gx[i] + w * buf[m].re;
            }
        }
        g[0] = Some(gx);
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqtConfig {
    pub f_min: f64,
    pub bins_per_octave: usize,
    pub n_octaves: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Longest kernel allowed, in seconds; only the lowest bins hit it.
    pub max_kernel_seconds: f64,
}

impl Default for CqtConfig {
    fn default() -> Self {
        Self {
            f_min: 20.0,
            bins_per_octave: 24,
            n_octaves: 10,
            hop: 256,
            sample_rate: crate::DEFAULT_SAMPLE_RATE,
            max_kernel_seconds: 2.0,
        }
    }
}

impl CqtConfig {
    pub fn n_bins(&self) -> usize {
        self.bins_per_octave * self.n_octaves
    }

    /// Quality factor `1 / (2^{1/B} − 1)`.
    pub fn q(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn bin_freq(&self, k: f64) -> f64 {
        self.f_min * 2f64.powf(k / self.bins_per_octave as f64)
    }

    /// Fractional bin index of a frequency.
    pub fn freq_to_bin(&self, f: f64) -> f64 {
        self.bins_per_octave as f64 * (f / self.f_min).log2()
    }

    /// Number of frames for a signal of `len` samples; frame `t` is centred on `t·hop`.
    pub fn n_frames(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            (len / self.hop).max(1)
        }
    }
}

struct Kernel {
    freq: f64,
    len: usize,
    center: usize,
    /// `w[m]·cos(2πf(m − c)/sr)` and `−w[m]·sin(2πf(m − c)/sr)`.
    re: Vec<f64>,
    im: Vec<f64>,
    /// `window_cumsum[m] = Σ_{j<m} w[j]`.
    window_cumsum: Vec<f64>,
}

/// Precomputed constant-Q analysis kernels; immutable and shareable.
pub struct Cqt {
    cfg: CqtConfig,
    kernels: Vec<Kernel>,
}

impl std::fmt::Debug for Cqt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cqt").field("cfg", &self.cfg).finish()
    }
}

impl Cqt {
    pub fn new(cfg: CqtConfig) -> Result<Self> {
        if !(cfg.f_min > 0.0) {
            return Err(invalid(format!("f_min must be positive, got {}", cfg.f_min)));
        }
        if cfg.hop == 0 || cfg.bins_per_octave == 0 || cfg.n_octaves == 0 {
            return Err(invalid("hop, bins per octave and octave count must be positive"));
        }
        let sr = cfg.sample_rate as f64;
        if cfg.f_min * 2f64.powi(cfg.n_octaves as i32) > sr / 2.0 {
            return Err(invalid(format!(
                "{} Hz × 2^{} exceeds Nyquist at {} Hz",
                cfg.f_min, cfg.n_octaves, cfg.sample_rate
            )));
        }
        let q = cfg.q();
        let max_len = (cfg.max_kernel_seconds * sr).round() as usize;
        let kernels = (0..cfg.n_bins())
            .map(|k| {
                let freq = cfg.bin_freq(k as f64);
                let len = (((q * sr / freq).round() as usize).min(max_len).max(2) / 2) * 2;
                let center = len / 2;
                let w: Vec<f64> = hann(len);
                let mut re = Vec::with_capacity(len);
                let mut im = Vec::with_capacity(len);
                for (m, &wm) in w.iter().enumerate() {
                    let ph = 2.0 * PI * freq * (m as f64 - center as f64) / sr;
                    re.push(wm * ph.cos());
                    im.push(-wm * ph.sin());
                }
                let mut window_cumsum = Vec::with_capacity(len + 1);
                let mut acc = 0.0;
                window_cumsum.push(0.0);
                for &wm in &w {
                    acc += wm;
                    window_cumsum.push(acc);
                }
                Kernel {
                    freq,
                    len,
                    center,
                    re,
                    im,
                    window_cumsum,
                }
            })
            .collect();
        Ok(Self { cfg, kernels })
    }

    pub fn config(&self) -> &CqtConfig {
        &self.cfg
    }

    pub fn freqs(&self) -> Vec<f64> {
        self.kernels.iter().map(|k| k.freq).collect()
    }

    pub fn kernel_len(&self, bin: usize) -> usize {
        self.kernels[bin].len
    }

    /// Kernel taps `[m0, m1)` that overlap a signal of `len` samples at frame `t`.
    fn valid_range(&self, bin: usize, t: usize, len: usize) -> (usize, usize) {
        let k = &self.kernels[bin];
        let start = (t * self.cfg.hop) as isize - k.center as isize;
        let m0 = (-start).max(0) as usize;
        let m1 = ((len as isize - start).max(0) as usize).min(k.len);
        (m0.min(m1), m1)
    }

    /// Complex CQT of `x`. Magnitudes of a unit sinusoid at a bin centre are 1.
    pub fn transform(&self, x: &AudioBuffer) -> Result<Spectrogram> {
        if x.sample_rate() != self.cfg.sample_rate {
            return Err(invalid(format!(
                "CQT built for {} Hz, input is {} Hz",
                self.cfg.sample_rate,
                x.sample_rate()
            )));
        }
        Ok(self.transform_samples(&x.to_f64()))
    }

    pub fn transform_samples(&self, x: &[f64]) -> Spectrogram {
        let n_frames = self.cfg.n_frames(x.len());
        let n_bins = self.kernels.len();
        let mut values = vec![Complex64::new(0.0, 0.0); n_frames * n_bins];
        for (b, k) in self.kernels.iter().enumerate() {
            for t in 0..n_frames {
                let (m0, m1) = self.valid_range(b, t, x.len());
                if m0 >= m1 {
                    continue;
                }
                let w_valid = k.window_cumsum[m1] - k.window_cumsum[m0];
                if w_valid <= 0.0 {
                    continue;
                }
                let s0 = t * self.cfg.hop + m0 - k.center;
                let xs = &x[s0..s0 + (m1 - m0)];
                let re = dot(xs, &k.re[m0..m1]);
                let im = dot(xs, &k.im[m0..m1]);
                values[t * n_bins + b] = Complex64::new(re, im) * (2.0 / w_valid);
            }
        }
        Spectrogram {
            n_frames,
            n_bins,
            values,
            frame_rate: self.cfg.sample_rate as f64 / self.cfg.hop as f64,
            freqs: self.freqs(),
            kind: SpectrogramKind::Log,
            n_samples: x.len(),
        }
    }

    /// Normalised response of `bin` at frame `t` to the positive-frequency half
    /// of a sinusoid at `freq`, for a signal of `len` samples:
    /// `Σ_valid w[m]·e^{iα(m − c)} / Σ_valid w[m]` with `α = 2π(freq − f_bin)/sr`.
    ///
    /// A sinusoid `A·sin(θ)` reads `A·e^{iθ_t}·H / i` in that bin, where `θ_t`
    /// is its phase at the frame centre.
    pub fn bin_response(&self, bin: usize, t: usize, len: usize, freq: f64) -> Complex64 {
        let k = &self.kernels[bin];
        let (m0, m1) = self.valid_range(bin, t, len);
        if m0 >= m1 {
            return Complex64::new(0.0, 0.0);
        }
        let alpha = 2.0 * PI * (freq - k.freq) / self.cfg.sample_rate as f64;
        let beta = 2.0 * PI / k.len as f64;
        let sum = geometric(alpha, m0, m1) * 0.5
            - geometric(alpha + beta, m0, m1) * 0.25
            - geometric(alpha - beta, m0, m1) * 0.25;
        let w_valid = k.window_cumsum[m1] - k.window_cumsum[m0];
        sum * Complex64::from_polar(1.0 / w_valid, -alpha * k.center as f64)
    }
}

/// `Σ_{m=m0}^{m1−1} e^{iγm}`.
fn geometric(gamma: f64, m0: usize, m1: usize) -> Complex64 {
    let n = (m1 - m0) as f64;
    let mid = Complex64::from_polar(1.0, gamma * (m0 as f64 + (n - 1.0) / 2.0));
    let half = (gamma / 2.0).sin();
    if half.abs() < 1e-12 {
        // γ is a multiple of 2π; every term equals the first
        let sign = (gamma / (2.0 * PI)).round() as i64 * (n as i64 - 1);
        let s = if sign.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        return mid * (n * s);
    }
    mid * ((gamma * n / 2.0).sin() / half)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for i in 0..4 {
            acc[i] += a[c * 4 + i] * b[c * 4 + i];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// CQT magnitudes with the default 20 Hz / 24 bins per octave / 10 octave layout.
pub fn cqt(x: &AudioBuffer, cfg: CqtConfig) -> Result<Spectrogram> {
    Cqt::new(cfg)?.transform(x)
}
