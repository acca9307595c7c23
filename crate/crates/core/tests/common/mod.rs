//! Finite-difference gradient checks shared by the integration tests.
#![allow(dead_code)]

use dsms_core::diff::{attention_pool, conv1d, film, linear, prelu, ConvSpec, Tape, Var};
use dsms_core::metrics::{MssConfig, MssTarget};
use dsms_core::neural::{gain_nonlinearity, ModelConfig};
use dsms_core::noise::{filtered_noise_var, NoiseFrames, NoiseSynth};
use dsms_core::pipeline::{prepare_items, LabeledAudio, PreparedItem, Resynthesizer};
use dsms_core::{AudioBuffer, DrumModel, Instrument, MixingStrategy, Source};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-3;
const H: f64 = 1e-6;

pub struct Input {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Input {
    pub fn random(shape: &[usize], scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Self {
            data: (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
            shape: shape.to_vec(),
        }
    }

    pub fn positive(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Self {
            data: (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
            shape: shape.to_vec(),
        }
    }
}

/// `Σ y·r` for a fixed pseudo-random `r`, so every output element matters.
pub fn project<'t>(y: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r: Vec<f64> = (0..y.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = y.tape().constant(r, &y.shape()).unwrap();
    y.mul(r).unwrap().sum()
}

fn probe_indices(n: usize, probes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= probes {
        (0..n).collect()
    } else {
        sample(rng, n, probes).into_vec()
    }
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` over the probed entries. An
/// all-zero pair counts as a failure: a vanishing gradient checks nothing.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        f64::INFINITY
    } else {
        diff / scale
    }
}

/// Largest relative error over all inputs of the scalar function `f`,
/// comparing reverse mode against central differences at up to `probes`
/// entries per input.
pub fn check<F>(inputs: &[Input], probes: usize, seed: u64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let eval = |data: &[Vec<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = data
            .iter()
            .zip(inputs)
            .map(|(d, i)| tape.constant(d.clone(), &i.shape).unwrap())
            .collect();
        f(&tape, &vars).item()
    };
    let tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|i| tape.leaf(i.data.clone(), &i.shape).unwrap()).collect();
    let loss = f(&tape, &leaves);
    assert_eq!(loss.numel(), 1);
    let grads = tape.backward(loss).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<Vec<f64>> = inputs.iter().map(|i| i.data.clone()).collect();
    let mut worst = 0.0f64;
    for (k, leaf) in leaves.iter().enumerate() {
        let g = grads.get_or_zero(*leaf);
        let idx = probe_indices(g.len(), probes, &mut rng);
        let mut numeric = Vec::with_capacity(idx.len());
        for &j in &idx {
            let x0 = data[k][j];
            data[k][j] = x0 + H;
            let up = eval(&data);
            data[k][j] = x0 - H;
            let down = eval(&data);
            data[k][j] = x0;
            numeric.push((up - down) / (2.0 * H));
        }
        let analytic: Vec<f64> = idx.iter().map(|&j| g[j]).collect();
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Same comparison for named model parameters of a scalar model loss, with
/// central differences of half-width `h`.
pub fn check_params<F>(model: &DrumModel<f64>, names: &[&str], h: f64, probes: usize, seed: u64, f: F) -> f64
where
    F: for<'t> Fn(&DrumModel<f64>, &dsms_core::diff::Bound<'t, f64>, &'t Tape<f64>) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let loss = f(model, &p, &tape);
    let grads = p.collect_grads(&tape.backward(loss).unwrap());

    let eval = |m: &DrumModel<f64>| {
        let tape = Tape::new();
        let p = m.params.bind_frozen(&tape);
        f(m, &p, &tape).item()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = model.clone();
    let mut worst = 0.0f64;
    for name in names {
        let id = m.params.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
        let idx = probe_indices(m.params.get(id).data.len(), probes, &mut rng);
        let mut numeric = Vec::with_capacity(idx.len());
        for &j in &idx {
            let x0 = m.params.get(id).data[j];
            m.params.get_mut(id).data[j] = x0 + h;
            let up = eval(&m);
            m.params.get_mut(id).data[j] = x0 - h;
            let down = eval(&m);
            m.params.get_mut(id).data[j] = x0;
            numeric.push((up - down) / (2.0 * h));
        }
        let analytic: Vec<f64> = idx.iter().map(|&j| grads[id.index()][j]).collect();
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

pub fn conv1d_causal() -> f64 {
    let inputs = [
        Input::random(&[3, 40], 1.0, 1),
        Input::random(&[4, 3, 5], 0.5, 2),
        Input::random(&[4], 0.5, 3),
    ];
    check(&inputs, 40, 10, |_, v| {
        project(conv1d(v[0], v[1], Some(v[2]), ConvSpec::causal(3)).unwrap(), 11)
    })
}

pub fn conv1d_same() -> f64 {
    let inputs = [
        Input::random(&[2, 33], 1.0, 4),
        Input::random(&[3, 2, 7], 0.5, 5),
        Input::random(&[3], 0.5, 6),
    ];
    check(&inputs, 40, 12, |_, v| {
        project(conv1d(v[0], v[1], Some(v[2]), ConvSpec::same(2)).unwrap(), 13)
    })
}

pub fn conv1d_strided() -> f64 {
    let inputs = [Input::random(&[2, 64], 1.0, 7), Input::random(&[3, 2, 8], 0.5, 8)];
    check(&inputs, 40, 14, |_, v| {
        project(conv1d(v[0], v[1], None, ConvSpec::strided(4)).unwrap(), 15)
    })
}

pub fn linear_layer() -> f64 {
    let inputs = [
        Input::random(&[6], 1.0, 20),
        Input::random(&[5, 6], 1.0, 21),
        Input::random(&[5], 1.0, 22),
    ];
    check(&inputs, 40, 23, |_, v| project(linear(v[0], v[1], v[2]).unwrap().tanh(), 24))
}

pub fn film_layer() -> f64 {
    let inputs = [
        Input::random(&[4, 10], 1.0, 30),
        Input::random(&[4], 1.5, 31),
        Input::random(&[4], 1.0, 32),
    ];
    check(&inputs, 40, 33, |_, v| project(film(v[0], v[1], v[2]).unwrap(), 34))
}

pub fn attention_pooling() -> f64 {
    let inputs = [
        Input::random(&[7, 5], 1.0, 40),
        Input::random(&[5], 1.0, 41),
        Input::random(&[5, 5], 1.0, 42),
        Input::random(&[5, 5], 1.0, 43),
    ];
    check(&inputs, 40, 44, |_, v| project(attention_pool(v[0], v[1], v[2], v[3]).unwrap(), 45))
}

/// Every elementwise nonlinearity and reduction, one check each.
pub fn activations() -> Vec<(&'static str, f64)> {
    type Act = for<'t> fn(Var<'t, f64>) -> Var<'t, f64>;
    let signed: [(&str, Act); 9] = [
        ("sigmoid", |x| x.sigmoid()),
        ("tanh", |x| x.tanh()),
        ("elu", |x| x.elu()),
        ("abs", |x| x.abs()),
        ("exp", |x| x.exp()),
        ("square", |x| x.square()),
        ("softmax", |x| x.softmax().unwrap()),
        ("norm", |x| x.norm()),
        ("gain_nonlinearity", |x| gain_nonlinearity(x)),
    ];
    let positive: [(&str, Act); 2] = [("ln", |x| x.ln()), ("powf", |x| x.powf(2.3))];
    let mut out = Vec::new();
    for (i, (name, act)) in signed.into_iter().enumerate() {
        let inputs = [Input::random(&[12], 2.0, 50 + i as u64)];
        out.push((name, check(&inputs, 12, 60, move |_, v| project(act(v[0]), 61))));
    }
    for (i, (name, act)) in positive.into_iter().enumerate() {
        let inputs = [Input::positive(&[12], 0.2, 3.0, 70 + i as u64)];
        out.push((name, check(&inputs, 12, 80, move |_, v| project(act(v[0]), 81))));
    }
    let inputs = [Input::random(&[2, 6], 2.0, 90), Input::random(&[2], 0.5, 91)];
    out.push(("prelu", check(&inputs, 12, 92, |_, v| project(prelu(v[0], v[1]).unwrap(), 93))));
    out
}

/// Gains → impulse responses on the tape.
pub fn noise_impulse_responses() -> f64 {
    let synth = NoiseSynth::<f64>::new(16, 8).unwrap();
    let inputs = [Input::positive(&[3, 16], 0.0, 2.0, 100)];
    check(&inputs, 48, 101, |_, v| project(synth.irs_var(v[0]).unwrap(), 102))
}

/// Logits → gain nonlinearity → impulse responses → windowed overlap-add.
pub fn filtered_noise_chain() -> f64 {
    let (bands, hop, n) = (16, 16, 160);
    let synth = NoiseSynth::<f64>::new(bands, hop).unwrap();
    let frames = NoiseFrames::frames_for(n, hop);
    let inputs = [Input::random(&[frames, bands], 2.0, 110)];
    check(&inputs, 60, 111, |_, v| {
        let g = gain_nonlinearity(v[0]);
        project(filtered_noise_var(&synth, g, n, 7).unwrap(), 112)
    })
}

pub fn drum(n: usize, f0: f64, decay: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / 48_000.0;
            let click = if i < 48 { 0.3 * (1.0 - i as f64 / 48.0) } else { 0.0 };
            (-t * decay).exp() * (0.5 * (2.0 * std::f64::consts::PI * f0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 2.3 * f0 * t).sin())
                + click
        })
        .collect()
}

pub fn mss_loss() -> f64 {
    let n = 4096;
    let y = drum(n, 180.0, 30.0);
    let mut rng = ChaCha8Rng::seed_from_u64(120);
    let y_hat: Vec<f64> = drum(n, 200.0, 20.0).into_iter().map(|v| v + rng.gen_range(-0.01..0.01)).collect();
    let target = MssTarget::new(&y, &MssConfig::default()).unwrap();
    let inputs = [Input {
        data: y_hat,
        shape: vec![n],
    }];
    check(&inputs, 24, 121, |_, v| target.loss_var(v[0]).unwrap())
}

pub fn small_model_config(strategy: MixingStrategy) -> ModelConfig {
    let mut cfg = ModelConfig::desk().with_strategy(strategy);
    cfg.signal_len = 4096;
    cfg
}

pub fn prepared_drum(cfg: &ModelConfig) -> PreparedItem<f64> {
    let audio: Vec<f32> = drum(cfg.signal_len, 150.0, 25.0).into_iter().map(|v| v as f32).collect();
    let item = LabeledAudio {
        id: "probe".into(),
        instrument: Instrument::Tom,
        source: Source::Acoustic,
        audio: AudioBuffer::new(audio, 48_000).unwrap(),
    };
    prepare_items(&[item], cfg).unwrap().remove(0)
}

/// Gives the FiLM output layers random weights of size `scale`, so that `z`
/// reaches the TCN.
pub fn perturb_film(model: &mut DrumModel<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params.iter_mut() {
        if p.name.starts_with("film") && p.name.ends_with(".w2") {
            for v in p.data.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }
}

/// d(γ, β)/dz through one FiLM MLP with non-zero output weights.
pub fn film_gamma_wrt_z() -> f64 {
    let mut model = DrumModel::<f64>::new(small_model_config(MixingStrategy::TOfS), 130).unwrap();
    perturb_film(&mut model, 0.1, 131);
    let inputs = [Input::random(&[128], 1.0, 132)];
    check(&inputs, 40, 133, |tape, v| {
        let p = model.params.bind_frozen(tape);
        let (g, b) = model.film_params(&p, v[0], 2).unwrap();
        project(g, 134).add(project(b, 135)).unwrap()
    })
}

/// MSS of the full S+N mix with respect to the first noise-encoder
/// convolution, end to end through the gains and the noise synthesizer.
pub fn noise_encoder_through_mss() -> f64 {
    let cfg = small_model_config(MixingStrategy::SPlusN);
    let model = DrumModel::<f64>::new(cfg.clone(), 140).unwrap();
    let item = prepared_drum(&cfg);
    let mss = MssTarget::new(&item.y, &MssConfig::default()).unwrap();
    check_params(&model, &["noise_encoder.conv_in.w", "noise_encoder.conv_out.b"], 1e-6, 6, 141, |m, p, tape| {
        let r = Resynthesizer::new(m).unwrap();
        mss.loss_var(r.forward_var(p, tape, &item).unwrap().output).unwrap()
    })
}

fn transient_check(names: &[&str], h: f64) -> f64 {
    // a model away from its near-identity init, where the transient path has
    // real influence on the loss
    let mut cfg = small_model_config(MixingStrategy::TOfSPlusParallelN);
    cfg.tcn.conv_init_gain = 1.0;
    let mut model = DrumModel::<f64>::new(cfg.clone(), 150).unwrap();
    perturb_film(&mut model, 1.0, 151);
    let item = prepared_drum(&cfg);
    let mss = MssTarget::new(&item.y, &MssConfig::default()).unwrap();
    check_params(&model, names, h, 4, 152, |m, p, tape| {
        let r = Resynthesizer::new(m).unwrap();
        mss.loss_var(r.forward_var(p, tape, &item).unwrap().output).unwrap()
    })
}

/// MSS of the T(S)+N mix with respect to the weights that produce `z` and the
/// FiLM parameters. Their gradients are small, so the step is wide enough to
/// clear the rounding noise of the loss.
pub fn conditioning_through_mss() -> f64 {
    transient_check(
        &["transient_encoder.conv_in.w", "pool.query", "pool.w_k", "film4.w1", "film4.w2"],
        1e-5,
    )
}

/// MSS of the T(S)+N mix with respect to TCN weights. Many PReLU inputs sit
/// near zero, so the step is narrow enough that few of them cross the kink.
pub fn tcn_through_mss() -> f64 {
    transient_check(&["tcn.lift.w", "tcn.block3.conv.w", "tcn.block5.slope", "tcn.out.w"], 1e-7)
}

/// Every check above, by name.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let mut out = vec![
        ("conv1d causal", conv1d_causal()),
        ("conv1d same", conv1d_same()),
        ("conv1d strided", conv1d_strided()),
        ("linear", linear_layer()),
        ("film", film_layer()),
        ("attention_pool", attention_pooling()),
    ];
    out.extend(activations());
    out.extend([
        ("gains_to_ir", noise_impulse_responses()),
        ("filtered_noise chain", filtered_noise_chain()),
        ("mss_loss", mss_loss()),
        ("film gamma wrt z", film_gamma_wrt_z()),
        ("noise encoder via mss", noise_encoder_through_mss()),
        ("conditioning via mss", conditioning_through_mss()),
        ("tcn via mss", tcn_through_mss()),
    ]);
    out
}
