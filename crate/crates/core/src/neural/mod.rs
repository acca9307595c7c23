//! Trainable parts of the model: the noise and transient encoders, the
//! per-layer FiLM MLPs and the transient TCN.

mod modules;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{Bound, Checkpoint, ParamStore, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::noise::NoiseFrames;
use crate::pipeline::MixingStrategy;
use crate::{AudioBuffer, Real};

use modules::{Encoder, FilmMlp, Init, Pool, Tcn};

pub use modules::RESIDUAL_DILATIONS;

/// Version written to checkpoint metadata; bumped whenever the parameter
/// layout changes.
pub const CONFIG_VERSION: u32 = 1;

/// Floor added after the gain nonlinearity so noise gains stay positive.
pub const GAIN_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub base_channels: usize,
    pub max_channels: usize,
    pub kernel_size: usize,
    pub strides: Vec<usize>,
    pub out_channels: usize,
}

impl EncoderConfig {
    /// Temporal downsampling factor.
    pub fn downsampling(&self) -> usize {
        self.strides.iter().product()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.base_channels == 0 || self.max_channels < self.base_channels || self.out_channels == 0 {
            return Err(invalid(format!("{name} encoder channel widths are inconsistent")));
        }
        if self.kernel_size == 0 || self.strides.is_empty() || self.strides.contains(&0) {
            return Err(invalid(format!("{name} encoder needs a kernel and positive strides")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnConfig {
    pub blocks: usize,
    pub dilation_growth: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    /// Scale of the random block convolution weights relative to a unit
    /// fan-in uniform init. Small keeps the network near identity at start.
    pub conv_init_gain: f64,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            blocks: 8,
            dilation_growth: 2,
            hidden_channels: 32,
            kernel_size: 13,
            conv_init_gain: 0.1,
        }
    }
}

impl TcnConfig {
    pub fn dilation(&self, block: usize) -> usize {
        self.dilation_growth.pow(block as u32)
    }

    /// Number of samples (including the current one) an output depends on.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * (0..self.blocks).map(|i| self.dilation(i)).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// Length every input is trimmed or padded to.
    pub signal_len: usize,
    pub n_bands: usize,
    pub noise_hop: usize,
    pub z_dim: usize,
    pub film_hidden: usize,
    pub noise_encoder: EncoderConfig,
    pub transient_encoder: EncoderConfig,
    pub tcn: TcnConfig,
    /// Initial bias of the noise encoder output, before the gain nonlinearity.
    pub noise_bias_init: f64,
    pub strategy: MixingStrategy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 48_000,
            signal_len: 96_000,
            n_bands: 128,
            noise_hop: 128,
            z_dim: 128,
            film_hidden: 64,
            noise_encoder: EncoderConfig {
                base_channels: 32,
                max_channels: 256,
                kernel_size: 7,
                strides: vec![2, 4, 4, 4],
                out_channels: 128,
            },
            transient_encoder: EncoderConfig {
                base_channels: 32,
                max_channels: 256,
                kernel_size: 7,
                strides: vec![2, 4, 4, 8],
                out_channels: 128,
            },
            tcn: TcnConfig::default(),
            noise_bias_init: 0.0,
            strategy: MixingStrategy::TOfSPlusParallelN,
        }
    }
}

impl ModelConfig {
    /// Reduced widths and half-second signals for single-core CPU training.
    /// Band count, hop, embedding size and TCN depth are unchanged.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.signal_len = 24_576;
        cfg.noise_encoder.base_channels = 4;
        cfg.noise_encoder.max_channels = 32;
        cfg.transient_encoder.base_channels = 4;
        cfg.transient_encoder.max_channels = 32;
        cfg.film_hidden = 32;
        cfg.tcn.hidden_channels = 8;
        cfg
    }

    pub fn with_strategy(mut self, strategy: MixingStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn signal_seconds(&self) -> f64 {
        self.signal_len as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.noise_encoder.validate("noise")?;
        self.transient_encoder.validate("transient")?;
        if self.sample_rate == 0 || self.signal_len == 0 {
            return Err(invalid("sample rate and signal length must be positive"));
        }
        if self.noise_encoder.out_channels != self.n_bands {
            return Err(invalid(format!(
                "noise encoder emits {} channels for {} bands",
                self.noise_encoder.out_channels, self.n_bands
            )));
        }
        if self.noise_encoder.downsampling() != self.noise_hop {
            return Err(invalid(format!(
                "noise encoder downsamples by {}, noise hop is {}",
                self.noise_encoder.downsampling(),
                self.noise_hop
            )));
        }
        if self.transient_encoder.out_channels != self.z_dim {
            return Err(invalid(format!(
                "transient encoder emits {} channels for a {}-dim embedding",
                self.transient_encoder.out_channels, self.z_dim
            )));
        }
        for enc in [&self.noise_encoder, &self.transient_encoder] {
            if self.signal_len % enc.downsampling() != 0 {
                return Err(invalid(format!(
                    "signal length {} is not a multiple of {}",
                    self.signal_len,
                    enc.downsampling()
                )));
            }
        }
        let t = &self.tcn;
        if t.blocks == 0 || t.hidden_channels == 0 || t.kernel_size == 0 || t.dilation_growth == 0 {
            return Err(invalid("TCN sizes must be positive"));
        }
        if self.film_hidden == 0 || self.z_dim == 0 {
            return Err(invalid("FiLM sizes must be positive"));
        }
        Ok(())
    }

    /// Flat key/value form stored in checkpoint metadata.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("config_version", CONFIG_VERSION.to_string());
        put("sample_rate", self.sample_rate.to_string());
        put("signal_len", self.signal_len.to_string());
        put("n_bands", self.n_bands.to_string());
        put("noise_hop", self.noise_hop.to_string());
        put("z_dim", self.z_dim.to_string());
        put("film_hidden", self.film_hidden.to_string());
        for (name, e) in [("noise", &self.noise_encoder), ("transient", &self.transient_encoder)] {
            put(&format!("{name}.base_channels"), e.base_channels.to_string());
            put(&format!("{name}.max_channels"), e.max_channels.to_string());
            put(&format!("{name}.kernel_size"), e.kernel_size.to_string());
            let strides: Vec<String> = e.strides.iter().map(|s| s.to_string()).collect();
            put(&format!("{name}.strides"), strides.join(","));
            put(&format!("{name}.out_channels"), e.out_channels.to_string());
        }
        put("tcn.blocks", self.tcn.blocks.to_string());
        put("tcn.dilation_growth", self.tcn.dilation_growth.to_string());
        put("tcn.hidden_channels", self.tcn.hidden_channels.to_string());
        put("tcn.kernel_size", self.tcn.kernel_size.to_string());
        // {:?} round-trips f64 exactly
        put("tcn.conv_init_gain", format!("{:?}", self.tcn.conv_init_gain));
        put("noise_bias_init", format!("{:?}", self.noise_bias_init));
        put("strategy", self.strategy.to_string());
        m
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(meta: &'a BTreeMap<String, String>, k: &str) -> Result<&'a str> {
            meta.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("missing config key {k}")))
        }
        fn num<V: std::str::FromStr>(meta: &BTreeMap<String, String>, k: &str) -> Result<V> {
            let s = get(meta, k)?;
            s.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value {s:?} for {k}")))
        }
        let version: u32 = num(meta, "config_version")?;
        if version != CONFIG_VERSION {
            return Err(Error::Checkpoint(format!(
                "config version {version}, expected {CONFIG_VERSION}"
            )));
        }
        let encoder = |name: &str| -> Result<EncoderConfig> {
            let strides = get(meta, &format!("{name}.strides"))?
                .split(',')
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Checkpoint(format!("bad stride {s:?}")))
                })
                .collect::<Result<Vec<usize>>>()?;
            Ok(EncoderConfig {
                base_channels: num(meta, &format!("{name}.base_channels"))?,
                max_channels: num(meta, &format!("{name}.max_channels"))?,
                kernel_size: num(meta, &format!("{name}.kernel_size"))?,
                strides,
                out_channels: num(meta, &format!("{name}.out_channels"))?,
            })
        };
        let cfg = Self {
            sample_rate: num(meta, "sample_rate")?,
            signal_len: num(meta, "signal_len")?,
            n_bands: num(meta, "n_bands")?,
            noise_hop: num(meta, "noise_hop")?,
            z_dim: num(meta, "z_dim")?,
            film_hidden: num(meta, "film_hidden")?,
            noise_encoder: encoder("noise")?,
            transient_encoder: encoder("transient")?,
            tcn: TcnConfig {
                blocks: num(meta, "tcn.blocks")?,
                dilation_growth: num(meta, "tcn.dilation_growth")?,
                hidden_channels: num(meta, "tcn.hidden_channels")?,
                kernel_size: num(meta, "tcn.kernel_size")?,
                conv_init_gain: num(meta, "tcn.conv_init_gain")?,
            },
            noise_bias_init: num(meta, "noise_bias_init")?,
            strategy: get(meta, "strategy")?.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `2·σ(x)^ln(10) + 10⁻⁷`: positive, bounded by 2, and steep enough to reach
/// very small gains.
pub fn gain_nonlinearity<'t, T: Real>(x: Var<'t, T>) -> Var<'t, T> {
    x.sigmoid()
        .powf(T::of(std::f64::consts::LN_10))
        .scale(T::of(2.0))
        .add_scalar(T::of(GAIN_FLOOR))
}

/// Trainable group a parameter belongs to: `noise_encoder`,
/// `transient_encoder`, `film` or `tcn`.
pub fn param_group(name: &str) -> &'static str {
    match name.split('.').next().unwrap_or("") {
        "noise_encoder" => "noise_encoder",
        "transient_encoder" | "pool" => "transient_encoder",
        n if n.starts_with("film") => "film",
        _ => "tcn",
    }
}

#[derive(Debug, Clone)]
struct Layout {
    noise_encoder: Encoder,
    transient_encoder: Encoder,
    pool: Pool,
    films: Vec<FilmMlp>,
    tcn: Tcn,
}

impl Layout {
    fn build<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Self {
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let noise_encoder = Encoder::new(store, &mut init, "noise_encoder", &cfg.noise_encoder);
        noise_encoder.set_out_bias(store, cfg.noise_bias_init);
        let transient_encoder = Encoder::new(store, &mut init, "transient_encoder", &cfg.transient_encoder);
        let pool = Pool::new(store, &mut init, "pool", cfg.z_dim);
        let films = (0..cfg.tcn.blocks)
            .map(|i| {
                FilmMlp::new(
                    store,
                    &mut init,
                    &format!("film{i}"),
                    cfg.z_dim,
                    cfg.film_hidden,
                    cfg.tcn.hidden_channels,
                )
            })
            .collect();
        let tcn = Tcn::new(store, &mut init, "tcn", &cfg.tcn);
        Self {
            noise_encoder,
            transient_encoder,
            pool,
            films,
            tcn,
        }
    }
}

/// Encoders, FiLM MLPs and TCN with their weights.
#[derive(Debug, Clone)]
pub struct DrumModel<T: Real = f32> {
    cfg: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> DrumModel<T> {
    /// Freshly initialised model; weights are a deterministic function of `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&cfg, &mut params, seed);
        Ok(Self { cfg, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn strategy(&self) -> MixingStrategy {
        self.cfg.strategy
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> DrumModel<U> {
        DrumModel {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        for enc in [&self.cfg.noise_encoder, &self.cfg.transient_encoder] {
            if n == 0 || n % enc.downsampling() != 0 {
                return Err(invalid(format!(
                    "input of {n} samples is not a positive multiple of {}",
                    enc.downsampling()
                )));
            }
        }
        Ok(())
    }

    fn as_row<'t>(y: Var<'t, T>) -> Result<Var<'t, T>> {
        let n = y.numel();
        y.reshape(&[1, n])
    }

    /// Frame-wise noise gains `[L, n_bands]` for `y` (`[n]`), `L = n / noise_hop`.
    pub fn noise_gains<'t>(&self, p: &Bound<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_len(y.numel())?;
        let h = self.layout.noise_encoder.forward(p, Self::as_row(y)?)?;
        gain_nonlinearity(h).transpose()
    }

    /// Attention-pooled transient embedding `[z_dim]` for `y` (`[n]`).
    pub fn embedding<'t>(&self, p: &Bound<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_len(y.numel())?;
        let feats = self.layout.transient_encoder.forward(p, Self::as_row(y)?)?;
        self.layout.pool.forward(p, feats)
    }

    /// `(gamma, beta)` of TCN block `layer`.
    pub fn film_params<'t>(
        &self,
        p: &Bound<'t, T>,
        z: Var<'t, T>,
        layer: usize,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let mlp = self.layout.films.get(layer).ok_or_else(|| {
            invalid(format!(
                "FiLM layer {layer} out of range for {} TCN blocks",
                self.layout.films.len()
            ))
        })?;
        mlp.forward(p, z)
    }

    /// Transient transfer function applied to `x` (`[n]`), conditioned on `z`.
    pub fn tcn<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let films = (0..self.layout.films.len())
            .map(|i| self.film_params(p, z, i))
            .collect::<Result<Vec<_>>>()?;
        let n = x.numel();
        self.layout.tcn.forward(p, Self::as_row(x)?, &films)?.reshape(&[n])
    }

    /// Plain (gradient-free) noise encoder output.
    pub fn noise_frames(&self, y: &AudioBuffer) -> Result<NoiseFrames> {
        let tape = Tape::<T>::new();
        let p = self.params.bind_frozen(&tape);
        let x = tape.constant(y.samples().iter().map(|&v| T::of(v as f64)).collect(), &[y.len()])?;
        let g = self.noise_gains(&p, x)?;
        NoiseFrames::new(
            g.value().into_iter().map(|v| v.f64()).collect(),
            self.cfg.n_bands,
            self.cfg.noise_hop,
        )
    }

    /// Plain transient embedding.
    pub fn transient_embedding(&self, y: &AudioBuffer) -> Result<Vec<T>> {
        let tape = Tape::<T>::new();
        let p = self.params.bind_frozen(&tape);
        let x = tape.constant(y.samples().iter().map(|&v| T::of(v as f64)).collect(), &[y.len()])?;
        Ok(self.embedding(&p, x)?.value())
    }

    /// Plain TCN evaluation.
    pub fn tcn_forward(&self, x: &[T], z: &[T]) -> Result<Vec<T>> {
        if x.is_empty() {
            return Err(invalid("TCN input is empty"));
        }
        if z.len() != self.cfg.z_dim {
            return Err(invalid(format!("embedding has {} entries, expected {}", z.len(), self.cfg.z_dim)));
        }
        let tape = Tape::<T>::new();
        let p = self.params.bind_frozen(&tape);
        let xv = tape.constant(x.to_vec(), &[x.len()])?;
        let zv = tape.constant(z.to_vec(), &[z.len()])?;
        Ok(self.tcn(&p, xv, zv)?.value())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::from_params(&self.params);
        ckpt.meta.extend(self.cfg.to_meta());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = ModelConfig::from_meta(&ckpt.meta)?;
        let mut model = Self::new(cfg, 0)?;
        ckpt.restore_into(&mut model.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
