//! Multi-resolution spectral loss, log spectral distance and spectral-flux
//! onset error, plus per-group aggregation of the three.

use std::path::Path;

use rayon::prelude::*;

use crate::audio::{AudioBuffer, Instrument, Source};
use crate::diff::Var;
use crate::error::{invalid, shape_err, Error, Result};
use crate::timefreq::{stft_magnitude, stft_magnitude_var, StftConfig};
use crate::Real;

/// Floor added to magnitudes before taking logs.
pub const LOG_EPS: f64 = 1e-7;
/// Floor on power in the log spectral distance.
pub const LSD_POWER_FLOOR: f64 = 1e-7;

pub const LSD_STFT: StftConfig = StftConfig {
    fft_size: 2048,
    win_size: 2048,
    hop: 512,
};

pub const FLUX_STFT: StftConfig = StftConfig {
    fft_size: 1024,
    win_size: 1024,
    hop: 256,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MssConfig {
    pub resolutions: Vec<StftConfig>,
    pub sc_weight: f64,
    pub log_weight: f64,
    pub eps: f64,
}

impl Default for MssConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![
                StftConfig::new(1024, 600, 120),
                StftConfig::new(2048, 1200, 240),
                StftConfig::new(512, 240, 50),
            ],
            sc_weight: 1.0,
            log_weight: 1.0,
            eps: LOG_EPS,
        }
    }
}

impl MssConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(invalid("MSS needs at least one resolution"));
        }
        for r in &self.resolutions {
            if r.win_size > r.fft_size || r.hop == 0 || r.hop > r.win_size {
                return Err(invalid(format!("bad MSS resolution {r:?}")));
            }
        }
        Ok(())
    }

    /// Shortest signal every resolution can frame.
    pub fn min_len(&self) -> usize {
        self.resolutions.iter().map(|r| r.pad() + 1).max().unwrap_or(1)
    }
}

/// `‖Y − Ŷ‖_F / ‖Y‖_F`.
pub fn spectral_convergence<T: Real>(y: &[T], y_hat: &[T]) -> Result<f64> {
    check_len("spectral_convergence", y.len(), y_hat.len())?;
    let den = y.iter().map(|v| v.f64().powi(2)).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::SilentReference);
    }
    let num = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Mean of `|ln(Y + ε) − ln(Ŷ + ε)|` over all cells.
pub fn log_mag_distance<T: Real>(y: &[T], y_hat: &[T], eps: f64) -> Result<f64> {
    check_len("log_mag_distance", y.len(), y_hat.len())?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| ((a.f64() + eps).ln() - (b.f64() + eps).ln()).abs())
        .sum();
    Ok(s / y.len() as f64)
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(shape_err(op, format!("{a} vs {b} values")));
    }
    Ok(())
}

/// Multi-resolution spectral loss without a tape.
pub fn mss_loss_samples<T: Real>(y: &[T], y_hat: &[T], cfg: &MssConfig) -> Result<f64> {
    check_len("mss_loss", y.len(), y_hat.len())?;
    cfg.validate()?;
    let mut total = 0.0;
    for &r in &cfg.resolutions {
        let a = stft_magnitude(y, r)?;
        let b = stft_magnitude(y_hat, r)?;
        total += cfg.sc_weight * spectral_convergence(&a, &b)? + cfg.log_weight * log_mag_distance(&a, &b, cfg.eps)?;
    }
    Ok(total)
}

pub fn mss_loss(y: &AudioBuffer, y_hat: &AudioBuffer, cfg: &MssConfig) -> Result<f64> {
    mss_loss_samples(&y.to_f64(), &y_hat.to_f64(), cfg)
}

/// Reference spectra for repeated differentiable MSS evaluations.
#[derive(Debug, Clone)]
pub struct MssTarget<T: Real> {
    cfg: MssConfig,
    len: usize,
    mags: Vec<Vec<T>>,
    log_mags: Vec<Vec<T>>,
    norms: Vec<T>,
}

impl<T: Real> MssTarget<T> {
    pub fn new(y: &[T], cfg: &MssConfig) -> Result<Self> {
        cfg.validate()?;
        let eps = T::of(cfg.eps);
        let mut mags = Vec::new();
        let mut log_mags = Vec::new();
        let mut norms = Vec::new();
        for &r in &cfg.resolutions {
            let m = stft_magnitude(y, r)?;
            let norm = m.iter().map(|v| v.f64().powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::SilentReference);
            }
            norms.push(T::of(norm));
            log_mags.push(m.iter().map(|&v| (v + eps).ln()).collect());
            mags.push(m);
        }
        Ok(Self {
            cfg: cfg.clone(),
            len: y.len(),
            mags,
            log_mags,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// MSS between the reference and `y_hat` (shape `[len]`), on the tape.
    pub fn loss_var<'t>(&self, y_hat: Var<'t, T>) -> Result<Var<'t, T>> {
        if y_hat.shape() != [self.len] {
            return Err(shape_err("mss_loss", format!("{:?} vs [{}]", y_hat.shape(), self.len)));
        }
        let tape = y_hat.tape();
        let mut total: Option<Var<'t, T>> = None;
        for (i, &r) in self.cfg.resolutions.iter().enumerate() {
            let m = stft_magnitude_var(y_hat, r)?;
            let shape = m.shape();
            let target = tape.constant(self.mags[i].clone(), &shape)?;
            let sc = m.sub(target)?.norm().scale(T::one() / self.norms[i]);
            let log_target = tape.constant(self.log_mags[i].clone(), &shape)?;
            let lm = m.add_scalar(T::of(self.cfg.eps)).ln().sub(log_target)?.abs().mean();
            let term = sc
                .scale(T::of(self.cfg.sc_weight))
                .add(lm.scale(T::of(self.cfg.log_weight)))?;
            total = Some(match total {
                Some(t) => t.add(term)?,
                None => term,
            });
        }
        total.ok_or_else(|| invalid("MSS needs at least one resolution"))
    }
}

/// Differentiable MSS of `y_hat` against the plain reference `y`.
pub fn mss_loss_var<'t, T: Real>(y: &[T], y_hat: Var<'t, T>, cfg: &MssConfig) -> Result<Var<'t, T>> {
    MssTarget::new(y, cfg)?.loss_var(y_hat)
}

/// Log spectral distance: per frame, the RMS over bins of the log10 power
/// difference; averaged over frames.
pub fn lsd(y: &AudioBuffer, y_hat: &AudioBuffer) -> Result<f64> {
    lsd_samples(&y.to_f64(), &y_hat.to_f64())
}

pub fn lsd_samples(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_len("lsd", y.len(), y_hat.len())?;
    let a = stft_magnitude(y, LSD_STFT)?;
    let b = stft_magnitude(y_hat, LSD_STFT)?;
    let bins = LSD_STFT.n_bins();
    let frames = a.len() / bins;
    let logp = |m: f64| (m * m).max(LSD_POWER_FLOOR).log10();
    let total: f64 = (0..frames)
        .map(|t| {
            let s: f64 = (0..bins)
                .map(|k| (logp(a[t * bins + k]) - logp(b[t * bins + k])).powi(2))
                .sum();
            (s / bins as f64).sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

/// Half-wave rectifier `(x + |x|) / 2`.
pub fn rectify(x: f64) -> f64 {
    (x + x.abs()) / 2.0
}

/// Onset envelope: per frame, the sum over bins of the squared rectified
/// magnitude increase. The frame before the first is taken as all zeros.
pub fn spectral_flux(x: &[f64]) -> Result<Vec<f64>> {
    let m = stft_magnitude(x, FLUX_STFT)?;
    let bins = FLUX_STFT.n_bins();
    let frames = m.len() / bins;
    Ok((0..frames)
        .map(|t| {
            (0..bins)
                .map(|k| {
                    let prev = if t == 0 { 0.0 } else { m[(t - 1) * bins + k] };
                    rectify(m[t * bins + k] - prev).powi(2)
                })
                .sum()
        })
        .collect())
}

/// Mean absolute difference of the two onset envelopes.
pub fn sf_error(y: &AudioBuffer, y_hat: &AudioBuffer) -> Result<f64> {
    sf_error_samples(&y.to_f64(), &y_hat.to_f64())
}

pub fn sf_error_samples(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_len("sf_error", y.len(), y_hat.len())?;
    let a = spectral_flux(y)?;
    let b = spectral_flux(y_hat)?;
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64)
}

/// One reference/reconstruction pair with its labels.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub id: String,
    pub y: AudioBuffer,
    pub y_hat: AudioBuffer,
    pub instrument: Instrument,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemMetrics {
    pub mss: f64,
    pub lsd: f64,
    pub sf: f64,
}

pub fn item_metrics(y: &AudioBuffer, y_hat: &AudioBuffer, cfg: &MssConfig) -> Result<ItemMetrics> {
    let (a, b) = (y.to_f64(), y_hat.to_f64());
    Ok(ItemMetrics {
        mss: mss_loss_samples(&a, &b, cfg)?,
        lsd: lsd_samples(&a, &b)?,
        sf: sf_error_samples(&a, &b)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub group: String,
    pub count: usize,
    pub mss: f64,
    pub lsd: f64,
    pub sf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub groups: Vec<GroupMetrics>,
}

/// Group order of the report rows.
pub const GROUPS: [&str; 7] = ["all", "acoustic", "electronic", "kick", "snare", "tom", "cymbal"];

fn in_group(group: &str, instrument: Instrument, source: Source) -> bool {
    match group {
        "all" => true,
        "acoustic" => source == Source::Acoustic,
        "electronic" => source == Source::Electronic,
        "kick" => instrument == Instrument::Kick,
        "snare" => instrument == Instrument::Snare,
        "tom" => instrument == Instrument::Tom,
        // hihats are reported with cymbals
        "cymbal" => matches!(instrument, Instrument::Cymbal | Instrument::Hihat),
        _ => false,
    }
}

impl MetricsReport {
    /// Group means over already computed per-item metrics. Empty groups are omitted.
    pub fn aggregate(method: &str, items: &[(Instrument, Source, ItemMetrics)]) -> Self {
        let groups = GROUPS
            .iter()
            .filter_map(|&g| {
                let members: Vec<&ItemMetrics> = items
                    .iter()
                    .filter(|(i, s, _)| in_group(g, *i, *s))
                    .map(|(_, _, m)| m)
                    .collect();
                if members.is_empty() {
                    return None;
                }
                let n = members.len() as f64;
                Some(GroupMetrics {
                    group: g.to_string(),
                    count: members.len(),
                    mss: members.iter().map(|m| m.mss).sum::<f64>() / n,
                    lsd: members.iter().map(|m| m.lsd).sum::<f64>() / n,
                    sf: members.iter().map(|m| m.sf).sum::<f64>() / n,
                })
            })
            .collect();
        Self {
            method: method.to_string(),
            groups,
        }
    }

    pub fn group(&self, name: &str) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.group == name)
    }

    /// Writes `group,method,mss,lsd,sf` rows for one or more reports.
    pub fn write_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["group", "method", "mss", "lsd", "sf"])?;
        for g in GROUPS {
            for r in reports {
                if let Some(m) = r.group(g) {
                    w.write_record(&[
                        g.to_string(),
                        r.method.clone(),
                        m.mss.to_string(),
                        m.lsd.to_string(),
                        m.sf.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-group means of MSS, LSD and SF error over `pairs`.
///
/// Pairs whose reference is silent have no defined MSS and are skipped with a
/// warning.
pub fn evaluate_metrics(method: &str, pairs: &[EvalPair], cfg: &MssConfig) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(invalid("nothing to evaluate"));
    }
    let results: Vec<Result<Option<(Instrument, Source, ItemMetrics)>>> = pairs
        .par_iter()
        .map(|p| match item_metrics(&p.y, &p.y_hat, cfg) {
            Ok(m) => Ok(Some((p.instrument, p.source, m))),
            Err(Error::SilentReference) => {
                log::warn!("skipping {}: reference is silent", p.id);
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect();
    let mut items = Vec::with_capacity(pairs.len());
    for r in results {
        if let Some(m) = r? {
            items.push(m);
        }
    }
    Ok(MetricsReport::aggregate(method, &items))
}
