//! Sinusoidal analysis on the CQT and oscillator-bank resynthesis.
//!
//! Analysis picks spectral peaks per frame, links them into tracks, and then
//! refines every observation against the closed-form kernel response: the
//! frequency from the ratio of the two neighbouring bins, the amplitude from
//! the peak bin, and finally the frequency again from the phase advance
//! between consecutive frames. Track phases are reported at the birth sample.

use std::f64::consts::PI;
use std::path::Path;

use crate::audio::AudioBuffer;
use crate::error::{invalid, Error, Result};
use crate::timefreq::{Complex64, Cqt, CqtConfig, Spectrogram, SpectrogramKind};

/// Lowest and highest frequency a track may take.
pub const MIN_TRACK_FREQ: f64 = 20.0;
pub const MAX_TRACK_FREQ: f64 = 20_480.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PartialTrack {
    /// Linear amplitude per frame, `birth_frame..=death_frame`.
    pub amps: Vec<f64>,
    /// Frequency in Hz per frame.
    pub freqs: Vec<f64>,
    /// Phase at the birth sample, in `[−π, π)`.
    pub phase0: f64,
    pub birth_frame: usize,
    pub death_frame: usize,
}

impl PartialTrack {
    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn birth_amp(&self) -> f64 {
        self.amps.first().copied().unwrap_or(0.0)
    }

    pub fn max_amp(&self) -> f64 {
        self.amps.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_freq(&self) -> f64 {
        self.freqs.iter().sum::<f64>() / self.freqs.len().max(1) as f64
    }

    fn check(&self) -> Result<()> {
        if self.amps.len() != self.freqs.len()
            || self.death_frame < self.birth_frame
            || self.amps.len() != self.death_frame - self.birth_frame + 1
        {
            return Err(invalid(format!(
                "track spans frames {}..={} but has {} amps and {} freqs",
                self.birth_frame,
                self.death_frame,
                self.amps.len(),
                self.freqs.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidalBank {
    pub tracks: Vec<PartialTrack>,
    pub hop: usize,
    pub n_frames: usize,
    pub sample_rate: u32,
}

impl SinusoidalBank {
    pub fn empty(hop: usize, n_frames: usize, sample_rate: u32) -> Self {
        Self {
            tracks: Vec::new(),
            hop,
            n_frames,
            sample_rate,
        }
    }

    /// Writes one `track,frame,amp,freq_hz,phase0` row per track frame.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["track", "frame", "amp", "freq_hz", "phase0"])?;
        for (j, tr) in self.tracks.iter().enumerate() {
            for (i, (a, f)) in tr.amps.iter().zip(&tr.freqs).enumerate() {
                w.write_record(&[
                    j.to_string(),
                    (tr.birth_frame + i).to_string(),
                    a.to_string(),
                    f.to_string(),
                    tr.phase0.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a bank written by [`SinusoidalBank::write_csv`]. Frames of a track
    /// must be contiguous and ascending.
    pub fn read_csv(path: &Path, hop: usize, n_frames: usize, sample_rate: u32) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut tracks: Vec<(usize, PartialTrack)> = Vec::new();
        for row in r.records() {
            let row = row?;
            let field = |i: usize| -> Result<&str> {
                row.get(i).ok_or_else(|| invalid(format!("bank row has {} fields", row.len())))
            };
            let parse = |i: usize| -> Result<f64> {
                field(i)?
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad number {:?}: {e}", row.get(i))))
            };
            let id: usize = field(0)?.parse().map_err(|_| invalid("bad track id"))?;
            let frame: usize = field(1)?.parse().map_err(|_| invalid("bad frame index"))?;
            let (amp, freq, phase0) = (parse(2)?, parse(3)?, parse(4)?);
            match tracks.last_mut() {
                Some((last, tr)) if *last == id => {
                    if frame != tr.death_frame + 1 {
                        return Err(invalid(format!("track {id} skips to frame {frame}")));
                    }
                    tr.amps.push(amp);
                    tr.freqs.push(freq);
                    tr.death_frame = frame;
                }
                _ => tracks.push((
                    id,
                    PartialTrack {
                        amps: vec![amp],
                        freqs: vec![freq],
                        phase0,
                        birth_frame: frame,
                        death_frame: frame,
                    },
                )),
            }
        }
        Ok(Self {
            tracks: tracks.into_iter().map(|(_, t)| t).collect(),
            hop,
            n_frames,
            sample_rate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Integer bin of the local maximum.
    pub bin: usize,
    /// Parabolic offset in bins, within ±0.5.
    pub offset: f64,
    pub freq_hz: f64,
    pub amp: f64,
}

impl Peak {
    pub fn position(&self) -> f64 {
        self.bin as f64 + self.offset
    }
}

/// Local maxima of one CQT magnitude frame with the default bin layout.
pub fn pick_peaks(frame: &[f64], floor_db: f64) -> Vec<Peak> {
    pick_peaks_in(frame, floor_db, &CqtConfig::default())
}

/// Local maxima (strictly above the left neighbour, at least the right one,
/// endpoints excluded) above `max(frame)·10^{floor_db/20}`, refined by a
/// parabola through the three magnitudes around each maximum.
pub fn pick_peaks_in(frame: &[f64], floor_db: f64, layout: &CqtConfig) -> Vec<Peak> {
    let max = frame.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let thr = max * 10f64.powf(floor_db / 20.0);
    let mut peaks = Vec::new();
    for k in 1..frame.len().saturating_sub(1) {
        let (a, b, c) = (frame[k - 1], frame[k], frame[k + 1]);
        if !(b > a && b >= c && b > thr) {
            continue;
        }
        let denom = a - 2.0 * b + c;
        let offset = if denom < 0.0 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        peaks.push(Peak {
            bin: k,
            offset,
            freq_hz: layout.bin_freq(k as f64 + offset),
            amp: b - 0.25 * (a - c) * offset,
        });
    }
    peaks
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub max_tracks: usize,
    /// Peak floor relative to the frame maximum.
    pub floor_db: f64,
    /// Absolute magnitude below which peaks are ignored.
    pub abs_floor: f64,
    /// Matching window in bins (quarter-tones at 24 bins per octave).
    pub match_bins: f64,
    /// A track dies after more than this many consecutive unmatched frames.
    pub max_gap: usize,
    /// Tracks observed in fewer frames are discarded.
    pub min_track_frames: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_tracks: 64,
            floor_db: -60.0,
            abs_floor: 1e-5,
            match_bins: 1.5,
            max_gap: 3,
            min_track_frames: 2,
        }
    }
}

/// A peak must exceed the leakage predicted from louder peaks by this factor.
const LEAKAGE_MARGIN: f64 = 2.0;

const REFINE_PASSES: usize = 3;

const JOINT_PASSES: usize = 2;

#[derive(Debug, Clone, Copy)]
struct Observation {
    frame: usize,
    bin: usize,
    freq: f64,
    amp: f64,
    /// Phase at the frame centre.
    theta: f64,
    /// Bins `bin−1..=bin+1` with the other peaks of the frame removed.
    vals: [Complex64; 3],
}

struct Active {
    obs: Vec<Observation>,
    position: f64,
    missed: usize,
}

/// CQT plus tracker; build once and reuse across signals.
#[derive(Debug)]
pub struct Analyzer {
    cqt: Cqt,
    cfg: TrackerConfig,
}

impl Analyzer {
    pub fn new(cqt_cfg: CqtConfig, cfg: TrackerConfig) -> Result<Self> {
        Ok(Self {
            cqt: Cqt::new(cqt_cfg)?,
            cfg,
        })
    }

    pub fn with_defaults() -> Result<Self> {
        Self::new(CqtConfig::default(), TrackerConfig::default())
    }

    pub fn cqt(&self) -> &Cqt {
        &self.cqt
    }

    pub fn tracker_config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// CQT analysis followed by tracking.
    pub fn analyze(&self, x: &AudioBuffer) -> Result<SinusoidalBank> {
        let spec = self.cqt.transform(x)?;
        self.track(&spec)
    }

    /// Links spectral peaks of a CQT spectrogram into at most `max_tracks` tracks.
    pub fn track(&self, spec: &Spectrogram) -> Result<SinusoidalBank> {
        let layout = self.cqt.config();
        if spec.kind != SpectrogramKind::Log || spec.n_bins != layout.n_bins() {
            return Err(invalid("tracking needs a CQT spectrogram with the analyser's layout"));
        }
        let cfg = &self.cfg;
        let mut active: Vec<Active> = Vec::new();
        let mut done: Vec<Vec<Observation>> = Vec::new();

        for t in 0..spec.n_frames {
            let mags = spec.frame_magnitudes(t);
            let peaks = self.frame_peaks(spec, t, &mags);
            let mut claimed = vec![false; peaks.len()];

            // louder tracks choose first
            let mut order: Vec<usize> = (0..active.len()).collect();
            order.sort_by(|&a, &b| {
                let la = active[a].obs.last().map_or(0.0, |o| o.amp);
                let lb = active[b].obs.last().map_or(0.0, |o| o.amp);
                lb.total_cmp(&la)
            });
            let mut matched = vec![false; active.len()];
            for &ai in &order {
                let pos = active[ai].position;
                let best = peaks
                    .iter()
                    .enumerate()
                    .filter(|(i, p)| !claimed[*i] && (p.0.position() - pos).abs() <= cfg.match_bins)
                    .min_by(|a, b| {
                        (a.1 .0.position() - pos)
                            .abs()
                            .total_cmp(&(b.1 .0.position() - pos).abs())
                    });
                if let Some((pi, p)) = best {
                    claimed[pi] = true;
                    matched[ai] = true;
                    let tr = &mut active[ai];
                    tr.obs.push(p.1);
                    tr.position = p.0.position();
                    tr.missed = 0;
                }
            }

            let mut still = Vec::with_capacity(active.len());
            for (tr, m) in active.drain(..).zip(matched) {
                if m {
                    still.push(tr);
                    continue;
                }
                let mut tr = tr;
                tr.missed += 1;
                if tr.missed > cfg.max_gap {
                    done.push(tr.obs);
                } else {
                    still.push(tr);
                }
            }
            active = still;

            for (p, c) in peaks.iter().zip(claimed) {
                if !c {
                    active.push(Active {
                        obs: vec![p.1],
                        position: p.0.position(),
                        missed: 0,
                    });
                }
            }
        }
        done.extend(active.into_iter().map(|a| a.obs));

        let mut tracks: Vec<PartialTrack> = done
            .into_iter()
            .filter(|obs| obs.len() >= cfg.min_track_frames.max(1))
            .map(|obs| self.finish_track(spec, obs))
            .collect();
        // the cap keeps the tracks that were loudest when they appeared
        tracks.sort_by(|a, b| b.birth_amp().total_cmp(&a.birth_amp()));
        tracks.truncate(cfg.max_tracks);
        tracks.sort_by_key(|t| t.birth_frame);

        Ok(SinusoidalBank {
            tracks,
            hop: layout.hop,
            n_frames: spec.n_frames,
            sample_rate: layout.sample_rate,
        })
    }

    /// Peaks of frame `t` with their refined observations, minus those that
    /// are explained by the kernel leakage of louder peaks.
    ///
    /// Each peak is fitted after subtracting the predicted contribution of
    /// every other peak in the frame, alternating a few times.
    fn frame_peaks(&self, spec: &Spectrogram, t: usize, mags: &[f64]) -> Vec<(Peak, Observation)> {
        let cfg = &self.cfg;
        let row = spec.frame(t);
        let raw = |k: usize| [row[k - 1], row[k], row[k + 1]];
        let mut cands: Vec<(Peak, Observation)> = pick_peaks_in(mags, cfg.floor_db, self.cqt.config())
            .into_iter()
            .filter(|p| p.amp > cfg.abs_floor)
            .map(|p| (p, self.observe(spec, t, &p, raw(p.bin), None)))
            .collect();
        if cands.len() > 1 {
            for _ in 0..JOINT_PASSES {
                let prev: Vec<Observation> = cands.iter().map(|c| c.1).collect();
                for (i, (p, o)) in cands.iter_mut().enumerate() {
                    let mut vals = raw(p.bin);
                    for (j, q) in prev.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        for (d, v) in vals.iter_mut().enumerate() {
                            *v -= self.predict(spec, t, p.bin + d - 1, q);
                        }
                    }
                    *o = self.observe(spec, t, p, vals, Some(o.freq));
                }
            }
        }
        cands.sort_by(|a, b| b.1.amp.total_cmp(&a.1.amp));
        let mut kept: Vec<(Peak, Observation)> = Vec::with_capacity(cands.len());
        for (p, o) in cands {
            let leak: f64 = kept
                .iter()
                .map(|(_, k)| k.amp * self.cqt.bin_response(p.bin, t, spec.n_samples, k.freq).norm())
                .sum();
            if mags[p.bin] > LEAKAGE_MARGIN * leak {
                kept.push((p, o));
            }
        }
        kept.sort_by_key(|(p, _)| p.bin);
        kept
    }

    /// Complex value an observed sinusoid contributes to `bin` at frame `t`.
    fn predict(&self, spec: &Spectrogram, t: usize, bin: usize, o: &Observation) -> Complex64 {
        let z = Complex64::from_polar(o.amp, o.theta);
        let hp = self.cqt.bin_response(bin, t, spec.n_samples, o.freq);
        let hn = self.cqt.bin_response(bin, t, spec.n_samples, -o.freq);
        (z * hp - z.conj() * hn) / Complex64::i()
    }

    /// Frequency, amplitude and frame-centre phase of one picked peak, given
    /// the values of its bin and both neighbours.
    fn observe(&self, spec: &Spectrogram, t: usize, p: &Peak, vals: [Complex64; 3], near: Option<f64>) -> Observation {
        let k = p.bin;
        let freq = self.fit_frequency(spec, t, k, &vals, near).unwrap_or(p.freq_hz);
        let (amp, theta) = self.amp_phase(spec, t, k, vals[1], freq);
        Observation {
            frame: t,
            bin: k,
            freq,
            amp: if amp.is_finite() { amp } else { p.amp },
            theta,
            vals,
        }
    }

    /// Frequency near bin `k` whose sinusoid best explains `vals` (bins
    /// `k−1..=k+1`) in least squares. With `near`, only a narrow bracket
    /// around that frequency is searched.
    fn fit_frequency(
        &self,
        spec: &Spectrogram,
        t: usize,
        k: usize,
        vals: &[Complex64; 3],
        near: Option<f64>,
    ) -> Option<f64> {
        if k == 0 || k + 1 >= spec.n_bins {
            return None;
        }
        let layout = self.cqt.config();
        let (lo, hi, steps) = match near {
            Some(f) => {
                let c = layout.freq_to_bin(f);
                ((c - 0.1).max(k as f64 - 0.75), (c + 0.1).min(k as f64 + 0.75), 4)
            }
            None => (k as f64 - 0.75, k as f64 + 0.75, 24),
        };
        if !(hi > lo) {
            return None;
        }
        let cost = |pos: f64| self.residual(spec, t, k, vals, layout.bin_freq(pos));
        // coarse scan, then golden-section search around the best point
        let step = (hi - lo) / steps as f64;
        let best = (0..=steps)
            .map(|i| lo + step * i as f64)
            .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))?;
        let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let (mut f1, mut f2) = (cost(x1), cost(x2));
        for _ in 0..40 {
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = cost(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = cost(x2);
            }
        }
        Some(layout.bin_freq(0.5 * (a + b)))
    }

    /// Squared misfit of bins `k−1..=k+1` to the best single sinusoid at `freq`.
    fn residual(&self, spec: &Spectrogram, t: usize, k: usize, vals: &[Complex64; 3], freq: f64) -> f64 {
        // i·c_j = Re(z)·P_j + Im(z)·R_j, solved in least squares over the 3 bins
        let mut cols = [[0.0f64; 6]; 2];
        let mut rhs = [0.0f64; 6];
        for (j, bin) in (k - 1..=k + 1).enumerate() {
            let hp = self.cqt.bin_response(bin, t, spec.n_samples, freq);
            let hn = self.cqt.bin_response(bin, t, spec.n_samples, -freq);
            let p = hp - hn;
            let r = Complex64::i() * (hp + hn);
            let y = Complex64::i() * vals[j];
            cols[0][2 * j] = p.re;
            cols[0][2 * j + 1] = p.im;
            cols[1][2 * j] = r.re;
            cols[1][2 * j + 1] = r.im;
            rhs[2 * j] = y.re;
            rhs[2 * j + 1] = y.im;
        }
        let d = |a: &[f64; 6], b: &[f64; 6]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (a00, a01, a11) = (d(&cols[0], &cols[0]), d(&cols[0], &cols[1]), d(&cols[1], &cols[1]));
        let (b0, b1) = (d(&cols[0], &rhs), d(&cols[1], &rhs));
        let det = a00 * a11 - a01 * a01;
        if !(det.abs() > 0.0) {
            return f64::INFINITY;
        }
        let u = (b0 * a11 - b1 * a01) / det;
        let v = (a00 * b1 - a01 * b0) / det;
        (0..6)
            .map(|i| (rhs[i] - u * cols[0][i] - v * cols[1][i]).powi(2))
            .sum()
    }

    /// Amplitude and frame-centre phase of a sinusoid at `freq` seen in bin `k`.
    ///
    /// A real sinusoid `A·sin(θ)` reads `c = (z·H(f) − z̄·H(−f)) / i` with
    /// `z = A·e^{iθ_t}`; both halves matter where the kernel is truncated.
    fn amp_phase(&self, spec: &Spectrogram, t: usize, k: usize, c: Complex64, freq: f64) -> (f64, f64) {
        let hp = self.cqt.bin_response(k, t, spec.n_samples, freq);
        let hn = self.cqt.bin_response(k, t, spec.n_samples, -freq);
        // i·c = Re(z)·(H⁺ − H⁻) + Im(z)·i(H⁺ + H⁻)
        let p = hp - hn;
        let r = Complex64::i() * (hp + hn);
        let rhs = Complex64::i() * c;
        let det = p.re * r.im - r.re * p.im;
        let z = if det.abs() > 1e-12 * p.norm() * r.norm() {
            let u = (rhs.re * r.im - r.re * rhs.im) / det;
            let v = (p.re * rhs.im - rhs.re * p.im) / det;
            Complex64::new(u, v)
        } else {
            rhs / hp
        };
        (z.norm(), z.arg())
    }

    /// Phase-difference frequency refinement, gap filling and clamping.
    fn finish_track(&self, spec: &Spectrogram, mut obs: Vec<Observation>) -> PartialTrack {
        let layout = self.cqt.config();
        let hop = layout.hop as f64;
        let sr = layout.sample_rate as f64;
        let q = layout.q();

        // The phase at truncated edge frames depends on the frequency estimate,
        // so refine a few times.
        for _ in 0..REFINE_PASSES {
            let interval: Vec<Option<f64>> = obs
                .windows(2)
                .map(|w| {
                    let (a, b) = (&w[0], &w[1]);
                    let span = (b.frame - a.frame) as f64 * hop;
                    let guess = 0.5 * (a.freq + b.freq);
                    let expected = 2.0 * PI * guess * span / sr;
                    let advance = expected + wrap(b.theta - a.theta - expected);
                    let f = advance * sr / (2.0 * PI * span);
                    // only trust it when the unwrapping could not have slipped
                    let unambiguous = sr / span;
                    ((f - guess).abs() < (0.5 * guess / q).min(0.25 * unambiguous)).then_some(f)
                })
                .collect();
            for i in 0..obs.len() {
                let left = if i > 0 { interval[i - 1] } else { None };
                let right = interval.get(i).copied().flatten();
                let f = match (left, right) {
                    (Some(l), Some(r)) => 0.5 * (l + r),
                    (Some(v), None) | (None, Some(v)) => v,
                    (None, None) => continue,
                };
                let o = &mut obs[i];
                let (amp, theta) = self.amp_phase(spec, o.frame, o.bin, o.vals[1], f);
                if amp.is_finite() {
                    o.freq = f;
                    o.amp = amp;
                    o.theta = theta;
                }
            }
        }

        let birth = obs[0].frame;
        let death = obs[obs.len() - 1].frame;
        let mut amps = Vec::with_capacity(death - birth + 1);
        let mut freqs = Vec::with_capacity(death - birth + 1);
        for w in obs.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let n = b.frame - a.frame;
            for j in 0..n {
                let u = j as f64 / n as f64;
                amps.push(a.amp + (b.amp - a.amp) * u);
                freqs.push(a.freq + (b.freq - a.freq) * u);
            }
        }
        let last = obs[obs.len() - 1];
        amps.push(last.amp);
        freqs.push(last.freq);
        for f in &mut freqs {
            *f = f.clamp(MIN_TRACK_FREQ, MAX_TRACK_FREQ);
        }

        PartialTrack {
            amps,
            freqs,
            phase0: wrap(obs[0].theta),
            birth_frame: birth,
            death_frame: death,
        }
    }
}

/// Tracks partials of a CQT spectrogram with the default layout and tracker
/// settings apart from `max_tracks`.
pub fn track_partials(spec: &Spectrogram, max_tracks: usize) -> Result<SinusoidalBank> {
    let hop = if spec.frame_rate > 0.0 {
        (CqtConfig::default().sample_rate as f64 / spec.frame_rate).round() as usize
    } else {
        CqtConfig::default().hop
    };
    let cqt_cfg = CqtConfig {
        hop,
        ..CqtConfig::default()
    };
    let analyzer = Analyzer::new(
        cqt_cfg,
        TrackerConfig {
            max_tracks,
            ..TrackerConfig::default()
        },
    )?;
    analyzer.track(spec)
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Phase of `track` at its birth sample, measured with a Hann-weighted inner
/// product against a complex exponential at the birth frequency.
///
/// The window spans two hops or four periods of the birth frequency, whichever
/// is longer, clipped to the signal.
pub fn estimate_initial_phase(x: &AudioBuffer, track: &PartialTrack, hop: usize) -> Result<f64> {
    track.check()?;
    let start = track.birth_frame * hop;
    if start >= x.len() {
        return Err(invalid(format!(
            "track born at sample {start} lies outside a {}-sample signal",
            x.len()
        )));
    }
    let sr = x.sample_rate() as f64;
    let f = track.freqs[0];
    let want = (2 * hop).max((4.0 * sr / f).ceil() as usize);
    let len = want.min(x.len() - start);
    let w: Vec<f64> = crate::timefreq::hann(want);
    let samples = x.samples();
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..len {
        let ph = -2.0 * PI * f * m as f64 / sr;
        acc += Complex64::from_polar(samples[start + m] as f64 * w[m], ph);
    }
    if acc.norm() == 0.0 {
        return Ok(0.0);
    }
    Ok(wrap(acc.arg() + PI / 2.0))
}

/// Oscillator-bank synthesis in double precision.
///
/// Amplitudes and frequencies are linearly interpolated between frame centres
/// (`frame·hop`), and phase is accumulated so that it equals `phase0` at the
/// birth sample. Tracks fade in over the hop before birth and out over the hop
/// after death, except at the first and last analysis frames where the edge
/// values are held instead.
pub fn synthesize_sinusoids_f64(bank: &SinusoidalBank, n_samples: usize) -> Result<Vec<f64>> {
    if n_samples < bank.n_frames * bank.hop {
        return Err(invalid(format!(
            "{n_samples} samples cannot hold {} frames at hop {}",
            bank.n_frames, bank.hop
        )));
    }
    let nyquist = bank.sample_rate as f64 / 2.0;
    for tr in &bank.tracks {
        tr.check()?;
        if let Some(f) = tr.freqs.iter().find(|f| !(**f <= nyquist) || !f.is_finite()) {
            return Err(invalid(format!("track frequency {f} Hz exceeds Nyquist {nyquist} Hz")));
        }
        if tr.amps.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("track amplitude".into()));
        }
    }
    let mut out = vec![0.0; n_samples];
    for tr in &bank.tracks {
        render_track(tr, bank, &mut out);
    }
    Ok(out)
}

pub fn synthesize_sinusoids(bank: &SinusoidalBank, n_samples: usize) -> Result<AudioBuffer> {
    let y = synthesize_sinusoids_f64(bank, n_samples)?;
    AudioBuffer::new(y.into_iter().map(|v| v as f32).collect(), bank.sample_rate)
}

fn render_track(tr: &PartialTrack, bank: &SinusoidalBank, out: &mut [f64]) {
    let hop = bank.hop;
    let n = out.len();
    let sr = bank.sample_rate as f64;
    let birth = tr.birth_frame * hop;
    let death = tr.death_frame * hop;
    let touches_start = tr.birth_frame == 0;
    let touches_end = tr.death_frame + 1 >= bank.n_frames;
    let start = if touches_start { 0 } else { birth.saturating_sub(hop) };
    let end = if touches_end { n } else { (death + hop).min(n) };
    let f0 = tr.freqs[0];
    let a0 = tr.amps[0];

    // fade-in region, phase run backwards from the birth sample
    for s in start..birth.min(end) {
        let phase = tr.phase0 - 2.0 * PI * f0 * (birth - s) as f64 / sr;
        let gain = if touches_start { 1.0 } else { 1.0 - (birth - s) as f64 / hop as f64 };
        out[s] += gain * a0 * phase.sin();
    }

    let mut phase = tr.phase0;
    let last = tr.amps.len() - 1;
    for s in birth..end {
        let (amp, freq, gain) = if s <= death {
            let pos = (s - birth) as f64 / hop as f64;
            let i = (pos.floor() as usize).min(last);
            let u = pos - i as f64;
            if i == last {
                (tr.amps[last], tr.freqs[last], 1.0)
            } else {
                (
                    tr.amps[i] + (tr.amps[i + 1] - tr.amps[i]) * u,
                    tr.freqs[i] + (tr.freqs[i + 1] - tr.freqs[i]) * u,
                    1.0,
                )
            }
        } else {
            let gain = if touches_end { 1.0 } else { 1.0 - (s - death) as f64 / hop as f64 };
            (tr.amps[last], tr.freqs[last], gain)
        };
        if s > birth {
            phase += 2.0 * PI * freq / sr;
        }
        out[s] += gain * amp * phase.sin();
    }
}
