//! Parameter layouts and forward passes of the encoders, FiLM MLPs and TCN.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{attention_pool, conv1d, film, linear, prelu, Bound, ConvSpec, ParamId, ParamStore, Var};
use crate::error::{invalid, Result};
use crate::Real;

use super::{EncoderConfig, TcnConfig};

/// Residual unit dilations inside every encoder block.
pub const RESIDUAL_DILATIONS: [usize; 3] = [1, 3, 9];

pub(crate) struct Init {
    pub rng: ChaCha8Rng,
}

impl Init {
    /// Uniform on `±gain/√fan_in`.
    fn uniform<T: Real>(&mut self, n: usize, fan_in: usize, gain: f64) -> Vec<T> {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        (0..n).map(|_| T::of(self.rng.gen_range(-bound..=bound))).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvP {
    pub w: ParamId,
    pub b: ParamId,
}

impl ConvP {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        c_out: usize,
        c_in: usize,
        k: usize,
        gain: f64,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            &[c_out, c_in, k],
            init.uniform(c_out * c_in * k, c_in * k, gain),
        );
        let b = store.add(format!("{name}.b"), &[c_out], vec![T::zero(); c_out]);
        Self { w, b }
    }

    fn apply<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>, spec: ConvSpec) -> Result<Var<'t, T>> {
        conv1d(x, p[self.w], Some(p[self.b]), spec)
    }
}

#[derive(Debug, Clone)]
struct ResidualUnit {
    conv: ConvP,
    proj: ConvP,
    dilation: usize,
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    units: Vec<ResidualUnit>,
    down: ConvP,
    stride: usize,
}

/// Non-causal convolutional encoder: `conv_in`, blocks of three dilated
/// residual units followed by a strided downsampling convolution, `conv_out`.
#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    conv_in: ConvP,
    blocks: Vec<EncoderBlock>,
    conv_out: ConvP,
    cfg: EncoderConfig,
}

impl Encoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, name: &str, cfg: &EncoderConfig) -> Self {
        let k = cfg.kernel_size;
        let mut c = cfg.base_channels;
        let conv_in = ConvP::new(store, init, &format!("{name}.conv_in"), c, 1, k, 1.0);
        let mut blocks = Vec::new();
        for (bi, &s) in cfg.strides.iter().enumerate() {
            let units = RESIDUAL_DILATIONS
                .iter()
                .enumerate()
                .map(|(ui, &d)| ResidualUnit {
                    conv: ConvP::new(store, init, &format!("{name}.block{bi}.unit{ui}.conv"), c, c, k, 1.0),
                    proj: ConvP::new(store, init, &format!("{name}.block{bi}.unit{ui}.proj"), c, c, 1, 1.0),
                    dilation: d,
                })
                .collect();
            let c_next = (2 * c).min(cfg.max_channels);
            let down = ConvP::new(store, init, &format!("{name}.block{bi}.down"), c_next, c, 2 * s, 1.0);
            blocks.push(EncoderBlock {
                units,
                down,
                stride: s,
            });
            c = c_next;
        }
        let conv_out = ConvP::new(store, init, &format!("{name}.conv_out"), cfg.out_channels, c, 3, 1.0);
        Self {
            conv_in,
            blocks,
            conv_out,
            cfg: cfg.clone(),
        }
    }

    pub fn downsampling(&self) -> usize {
        self.cfg.strides.iter().product()
    }

    /// Zero-initialises the output bias to `value`.
    pub fn set_out_bias<T: Real>(&self, store: &mut ParamStore<T>, value: f64) {
        store.get_mut(self.conv_out.b).data.fill(T::of(value));
    }

    /// `x: [1, T]` → `[out_channels, T / downsampling]`.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let t = x.shape()[1];
        if t % self.downsampling() != 0 {
            return Err(invalid(format!(
                "encoder input of {t} samples is not a multiple of {}",
                self.downsampling()
            )));
        }
        let mut h = self.conv_in.apply(p, x, ConvSpec::same(1))?;
        for block in &self.blocks {
            for u in &block.units {
                let r = u.conv.apply(p, h.elu(), ConvSpec::same(u.dilation))?;
                let r = u.proj.apply(p, r.elu(), ConvSpec::same(1))?;
                h = h.add(r)?;
            }
            h = block.down.apply(p, h.elu(), ConvSpec::strided(block.stride))?;
        }
        self.conv_out.apply(p, h.elu(), ConvSpec::same(1))
    }
}

/// Attention pooling weights for the transient embedding.
#[derive(Debug, Clone)]
pub(crate) struct Pool {
    query: ParamId,
    w_k: ParamId,
    w_v: ParamId,
}

impl Pool {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, name: &str, d: usize) -> Self {
        let query = store.add(format!("{name}.query"), &[d], init.uniform(d, d, 1.0));
        let w_k = store.add(format!("{name}.w_k"), &[d, d], init.uniform(d * d, d, 1.0));
        let w_v = store.add(format!("{name}.w_v"), &[d, d], init.uniform(d * d, d, 1.0));
        Self { query, w_k, w_v }
    }

    /// `features: [D, T]` → `[D]`.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        attention_pool(features.transpose()?, p[self.query], p[self.w_k], p[self.w_v])
    }
}

/// Two-layer MLP mapping `z` to one TCN layer's `(gamma, beta)`.
#[derive(Debug, Clone)]
pub(crate) struct FilmMlp {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    channels: usize,
}

impl FilmMlp {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        z_dim: usize,
        hidden: usize,
        channels: usize,
    ) -> Self {
        let w1 = store.add(format!("{name}.w1"), &[hidden, z_dim], init.uniform(hidden * z_dim, z_dim, 1.0));
        let b1 = store.add(format!("{name}.b1"), &[hidden], vec![T::zero(); hidden]);
        // zero output weights and unit gamma bias: the identity modulation
        let w2 = store.add(format!("{name}.w2"), &[2 * channels, hidden], vec![T::zero(); 2 * channels * hidden]);
        let mut bias = vec![T::zero(); 2 * channels];
        bias[..channels].fill(T::one());
        let b2 = store.add(format!("{name}.b2"), &[2 * channels], bias);
        Self {
            w1,
            b1,
            w2,
            b2,
            channels,
        }
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, z: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let h = linear(z, p[self.w1], p[self.b1])?.tanh();
        let out = linear(h, p[self.w2], p[self.b2])?;
        let c = self.channels;
        Ok((out.slice(0, c)?, out.slice(c, 2 * c)?))
    }
}

#[derive(Debug, Clone)]
struct TcnBlock {
    conv: ConvP,
    shortcut: ConvP,
    slope: ParamId,
    dilation: usize,
}

/// Causal dilated TCN with FiLM after every block convolution.
#[derive(Debug, Clone)]
pub(crate) struct Tcn {
    lift: ConvP,
    blocks: Vec<TcnBlock>,
    out: ConvP,
}

impl Tcn {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, name: &str, cfg: &TcnConfig) -> Self {
        let c = cfg.hidden_channels;
        let lift = ConvP::new(store, init, &format!("{name}.lift"), c, 1, 1, 1.0);
        // channel 0 carries the input unchanged at initialisation
        store.get_mut(lift.w).data[0] = T::one();
        let blocks = (0..cfg.blocks)
            .map(|i| {
                let conv = ConvP::new(
                    store,
                    init,
                    &format!("{name}.block{i}.conv"),
                    c,
                    c,
                    cfg.kernel_size,
                    cfg.conv_init_gain,
                );
                let shortcut = ConvP::new(store, init, &format!("{name}.block{i}.shortcut"), c, c, 1, 0.0);
                let w = &mut store.get_mut(shortcut.w).data;
                for ch in 0..c {
                    w[ch * c + ch] = T::one();
                }
                let slope = store.add(format!("{name}.block{i}.slope"), &[c], vec![T::of(0.25); c]);
                TcnBlock {
                    conv,
                    shortcut,
                    slope,
                    dilation: cfg.dilation(i),
                }
            })
            .collect();
        let out = ConvP::new(store, init, &format!("{name}.out"), 1, c, 1, cfg.conv_init_gain);
        store.get_mut(out.w).data[0] = T::one();
        Self { lift, blocks, out }
    }

    /// `x: [1, T]` with one `(gamma, beta)` pair per block → `[1, T]`.
    pub fn forward<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        films: &[(Var<'t, T>, Var<'t, T>)],
    ) -> Result<Var<'t, T>> {
        if films.len() != self.blocks.len() {
            return Err(invalid(format!(
                "{} FiLM pairs for {} TCN blocks",
                films.len(),
                self.blocks.len()
            )));
        }
        let mut h = self.lift.apply(p, x, ConvSpec::causal(1))?;
        for (b, &(gamma, beta)) in self.blocks.iter().zip(films) {
            let r = b.conv.apply(p, h, ConvSpec::causal(b.dilation))?;
            let r = prelu(film(r, gamma, beta)?, p[b.slope])?;
            h = b.shortcut.apply(p, h, ConvSpec::causal(1))?.add(r)?;
        }
        self.out.apply(p, h, ConvSpec::causal(1))
    }
}
