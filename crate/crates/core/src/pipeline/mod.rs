//! Mixing strategies, end-to-end resynthesis, training, evaluation and
//! embedding export.

mod eval;
mod strategy;
mod train;

use rayon::prelude::*;

use crate::audio::{load_wav, preprocess, DatasetItem, Instrument, Source};
use crate::diff::{Bound, Tape, Var};
use crate::error::{invalid, Result};
use crate::neural::{DrumModel, ModelConfig};
use crate::noise::NoiseSynth;
use crate::sinusoidal::{synthesize_sinusoids_f64, Analyzer};
use crate::{AudioBuffer, Real};

pub use eval::{embeddings, evaluate, export_embeddings, write_embeddings_csv};
pub use strategy::MixingStrategy;
pub use train::{
    train, EpochRecord, PlateauScheduler, SchedulerEvent, StopReason, TrainConfig, TrainOutcome,
};

/// Leading-silence threshold used when loading dataset audio.
pub const SILENCE_DB: f64 = -60.0;

/// Stable 64-bit FNV-1a hash; seeds the per-item noise excitation.
pub fn noise_seed(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Preprocessed audio with its labels.
#[derive(Debug, Clone)]
pub struct LabeledAudio {
    pub id: String,
    pub instrument: Instrument,
    pub source: Source,
    pub audio: AudioBuffer,
}

/// Loads and preprocesses every manifest entry to the model's signal length.
pub fn load_dataset(items: &[DatasetItem], cfg: &ModelConfig) -> Result<Vec<LabeledAudio>> {
    items
        .par_iter()
        .map(|it| {
            let raw = load_wav(&it.path)?;
            if raw.sample_rate() != cfg.sample_rate {
                return Err(invalid(format!(
                    "{}: sample rate {} Hz, model expects {} Hz",
                    it.path.display(),
                    raw.sample_rate(),
                    cfg.sample_rate
                )));
            }
            let pre = preprocess(&raw, cfg.signal_seconds(), SILENCE_DB)?;
            if pre.buffer.len() != cfg.signal_len {
                return Err(invalid(format!(
                    "{}: preprocessed to {} samples, expected {}",
                    it.id,
                    pre.buffer.len(),
                    cfg.signal_len
                )));
            }
            Ok(LabeledAudio {
                id: it.id.clone(),
                instrument: it.instrument,
                source: it.source,
                audio: pre.buffer,
            })
        })
        .collect()
}

/// The weight-independent part of one input: the signal, its sinusoidal
/// resynthesis and the noise excitation. Computed once and reused.
#[derive(Debug, Clone)]
pub struct PreparedItem<T: Real> {
    pub id: String,
    pub instrument: Instrument,
    pub source: Source,
    pub y: Vec<T>,
    pub sines: Vec<T>,
    pub excitation: Vec<T>,
}

impl<T: Real> PreparedItem<T> {
    pub fn new(item: &LabeledAudio, analyzer: &Analyzer, synth: &NoiseSynth<T>) -> Result<Self> {
        Self::with_seed(item, analyzer, synth, noise_seed(&item.id))
    }

    pub fn with_seed(item: &LabeledAudio, analyzer: &Analyzer, synth: &NoiseSynth<T>, seed: u64) -> Result<Self> {
        let n = item.audio.len();
        let bank = analyzer.analyze(&item.audio)?;
        let sines = synthesize_sinusoids_f64(&bank, n)?;
        Ok(Self {
            id: item.id.clone(),
            instrument: item.instrument,
            source: item.source,
            y: item.audio.samples().iter().map(|&v| T::of(v as f64)).collect(),
            sines: sines.into_iter().map(T::of).collect(),
            excitation: synth.noise(seed, n),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Prepares `items` in parallel with the default analyzer.
pub fn prepare_items<T: Real>(items: &[LabeledAudio], cfg: &ModelConfig) -> Result<Vec<PreparedItem<T>>> {
    let analyzer = Analyzer::with_defaults()?;
    let synth = NoiseSynth::new(cfg.n_bands, cfg.noise_hop)?;
    items
        .par_iter()
        .map(|it| PreparedItem::new(it, &analyzer, &synth))
        .collect()
}

/// Branch outputs of one resynthesis. Branches the strategy does not use are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Resynthesis<T> {
    pub output: Vec<T>,
    pub sines: Vec<T>,
    pub noise: Option<Vec<T>>,
    pub transient: Option<Vec<T>>,
}

/// Tape nodes of one resynthesis.
#[derive(Clone, Copy)]
pub struct BranchVars<'t, T: Real> {
    pub output: Var<'t, T>,
    pub noise: Option<Var<'t, T>>,
    pub transient: Option<Var<'t, T>>,
}

/// Mixes the three branches of a model under a fixed strategy.
#[derive(Debug, Clone)]
pub struct Resynthesizer<'m, T: Real> {
    model: &'m DrumModel<T>,
    synth: NoiseSynth<T>,
    strategy: MixingStrategy,
}

impl<'m, T: Real> Resynthesizer<'m, T> {
    /// Uses the model's own strategy.
    pub fn new(model: &'m DrumModel<T>) -> Result<Self> {
        Self::with_strategy(model, model.strategy())
    }

    pub fn with_strategy(model: &'m DrumModel<T>, strategy: MixingStrategy) -> Result<Self> {
        let cfg = model.config();
        Ok(Self {
            model,
            synth: NoiseSynth::new(cfg.n_bands, cfg.noise_hop)?,
            strategy,
        })
    }

    pub fn strategy(&self) -> MixingStrategy {
        self.strategy
    }

    pub fn model(&self) -> &DrumModel<T> {
        self.model
    }

    /// Resynthesis of `item` on `p`'s tape.
    pub fn forward_var<'t>(&self, p: &Bound<'t, T>, tape: &'t Tape<T>, item: &PreparedItem<T>) -> Result<BranchVars<'t, T>> {
        let n = item.len();
        if item.sines.len() != n {
            return Err(invalid(format!("{} sine samples for {n} input samples", item.sines.len())));
        }
        let y = tape.constant(item.y.clone(), &[n])?;
        let s = tape.constant(item.sines.clone(), &[n])?;
        let noise = if self.strategy.uses_noise() {
            let gains = self.model.noise_gains(p, y)?;
            Some(self.synth.render_var(gains, &item.excitation, n)?)
        } else {
            None
        };
        let z = if self.strategy.uses_tcn() {
            Some(self.model.embedding(p, y)?)
        } else {
            None
        };
        let tcn = |x: Var<'t, T>| self.model.tcn(p, x, z.expect("embedding computed for TCN strategies"));
        let nz = || noise.expect("noise computed for noise strategies");
        let (output, transient) = match self.strategy {
            MixingStrategy::S => (s, None),
            MixingStrategy::SPlusN => (s.add(nz())?, None),
            MixingStrategy::TOfS => {
                let t = tcn(s)?;
                (t, Some(t))
            }
            MixingStrategy::TOfSPlusN => {
                let t = tcn(s.add(nz())?)?;
                (t, Some(t))
            }
            MixingStrategy::TOfSPlusParallelN => {
                let t = tcn(s)?;
                (t.add(nz())?, Some(t))
            }
            MixingStrategy::TOfSPlusSPlusN => {
                let t = tcn(s)?;
                (t.add(s)?.add(nz())?, Some(t))
            }
        };
        Ok(BranchVars {
            output,
            noise,
            transient,
        })
    }

    /// Gradient-free resynthesis.
    pub fn run(&self, item: &PreparedItem<T>) -> Result<Resynthesis<T>> {
        let tape = Tape::new();
        let p = self.model.params.bind_frozen(&tape);
        let b = self.forward_var(&p, &tape, item)?;
        Ok(Resynthesis {
            output: b.output.value(),
            sines: item.sines.clone(),
            noise: b.noise.map(|v| v.value()),
            transient: b.transient.map(|v| v.value()),
        })
    }
}

/// Resynthesizes a preprocessed buffer, with the noise excitation drawn from `seed`.
pub fn resynthesize(
    y: &AudioBuffer,
    model: &DrumModel<f32>,
    strategy: MixingStrategy,
    seed: u64,
) -> Result<AudioBuffer> {
    let cfg = model.config();
    if y.sample_rate() != cfg.sample_rate {
        return Err(invalid(format!(
            "input is {} Hz, model expects {} Hz",
            y.sample_rate(),
            cfg.sample_rate
        )));
    }
    let r = Resynthesizer::with_strategy(model, strategy)?;
    let item = LabeledAudio {
        id: String::new(),
        instrument: Instrument::Other,
        source: Source::Acoustic,
        audio: y.clone(),
    };
    let prepared = PreparedItem::with_seed(&item, &Analyzer::with_defaults()?, &r.synth, seed)?;
    AudioBuffer::new(r.run(&prepared)?.output, y.sample_rate())
}
