//! Acceptance criteria A1–A10. Each test writes one `A<n> PASS|FAIL|WARN`
//! line straight to stderr, so the lines show up even when output capture
//! is on.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use dsms_core::audio::{generate_synthetic_drum, preprocess, synth_instrument, DrumKind, SynthParams};
use dsms_core::diff::Tape;
use dsms_core::metrics::{lsd, mss_loss, rectify, sf_error, spectral_convergence, MssConfig};
use dsms_core::noise::{filtered_noise, NoiseFrames, NoiseSynth};
use dsms_core::pipeline::{
    evaluate, prepare_items, train, LabeledAudio, PreparedItem, Resynthesizer, TrainOutcome, SILENCE_DB,
};
use dsms_core::sinusoidal::{synthesize_sinusoids_f64, Analyzer};
use dsms_core::timefreq::{hann, stft_samples, StftConfig};
use dsms_core::{AudioBuffer, DrumModel, Instrument, MixingStrategy, ModelConfig, Source, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 48_000;

fn report(id: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{id} {tag}  {detail}");
}

fn warn(id: &str, detail: &str) {
    let _ = writeln!(std::io::stderr(), "{id} WARN  {detail}");
}

fn snr_db(x: &[f64], y: &[f64], margin: usize) -> f64 {
    let (a, b) = (margin, x.len() - margin);
    let sig: f64 = x[a..b].iter().map(|v| v * v).sum();
    let err: f64 = x[a..b].iter().zip(&y[a..b]).map(|(p, q)| (p - q).powi(2)).sum();
    10.0 * (sig / err).log10()
}

fn sines(parts: &[(f64, f64, f64)], len: usize) -> AudioBuffer {
    let x = (0..len)
        .map(|n| {
            parts
                .iter()
                .map(|&(a, f, p)| a * (2.0 * PI * f * n as f64 / SR as f64 + p).sin())
                .sum::<f64>() as f32
        })
        .collect();
    AudioBuffer::new(x, SR).unwrap()
}

fn round_trip(x: &AudioBuffer) -> f64 {
    let bank = Analyzer::with_defaults().unwrap().analyze(x).unwrap();
    let y = synthesize_sinusoids_f64(&bank, x.len()).unwrap();
    // interior: four analysis hops trimmed at each end
    snr_db(&x.to_f64(), &y, 1024)
}

#[test]
fn a1_sinusoidal_round_trip() {
    let start = Instant::now();
    let tone = round_trip(&sines(&[(1.0, 440.0, 0.0)], 2 * SR as usize));
    // inharmonic, at least two semitones apart
    let parts = [
        (0.30, 180.0, 0.4),
        (0.25, 431.0, -1.0),
        (0.20, 1_003.0, 2.1),
        (0.15, 2_377.0, 0.0),
        (0.10, 5_521.0, -2.5),
    ];
    let mix = round_trip(&sines(&parts, 2 * SR as usize));
    let secs = start.elapsed().as_secs_f64();
    let pass = tone >= 40.0 && mix >= 25.0 && secs < 10.0;
    report(
        "A1",
        pass,
        &format!("sinusoidal round trip: 440 Hz {tone:.1} dB (>= 40), 5 partials {mix:.1} dB (>= 25), {secs:.1} s (< 10)"),
    );
    assert!(pass);
}

#[test]
fn a2_overlap_add_and_flat_noise() {
    let start = Instant::now();
    let hop = 128;

    // plain Hann of length 2h at hop h
    let w: Vec<f64> = hann(2 * hop);
    let frames = 40;
    let mut sum = vec![0.0; (frames + 1) * hop];
    for f in 0..frames {
        for (j, &v) in w.iter().enumerate() {
            sum[f * hop + j] += v;
        }
    }
    let cola = sum[2 * hop..(frames - 1) * hop]
        .iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);

    // the same property through the noise synthesizer: unit gains give a
    // centred delta, so the output is the delayed noise times the window sum
    let synth = NoiseSynth::<f64>::new(128, hop).unwrap();
    let n = 64 * hop;
    let noise = synth.noise(3, n);
    let ones = NoiseFrames::constant(&[1.0; 128], NoiseFrames::frames_for(n, hop), hop).unwrap();
    let out = synth.render(&ones, &noise, n).unwrap();
    let delay = synth.ir_len() - 1 - synth.ir_len() / 2;
    let synth_cola = (2 * hop..n - 2 * hop)
        .map(|i| (out[i] - noise[i + delay]).abs())
        .fold(0.0, f64::max);

    // Welch PSD of 10 s of flat-gain noise
    let len = 10 * SR as usize;
    let flat = NoiseFrames::constant(&[0.5; 128], NoiseFrames::frames_for(len, hop), hop).unwrap();
    let y = filtered_noise(&flat, len, 11, SR).unwrap().to_f64();
    let spec = stft_samples(&y, SR, StftConfig::new(4096, 4096, 2048)).unwrap();
    let mut psd = vec![0.0; spec.n_bins];
    for t in 0..spec.n_frames {
        for (b, p) in psd.iter_mut().enumerate() {
            *p += spec.magnitude(t, b).powi(2);
        }
    }
    let band: Vec<f64> = spec
        .freqs
        .iter()
        .zip(&psd)
        .filter(|(f, _)| (200.0..=20_000.0).contains(*f))
        .map(|(_, p)| 10.0 * (p / spec.n_frames as f64).log10())
        .collect();
    let mean = band.iter().sum::<f64>() / band.len() as f64;
    let spread = band.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max);

    let secs = start.elapsed().as_secs_f64();
    let pass = cola <= 1e-6 && synth_cola <= 1e-6 && spread <= 3.0 && secs < 30.0;
    report(
        "A2",
        pass,
        &format!(
            "overlap-add: Hann sum dev {cola:.1e}, synthesizer dev {synth_cola:.1e} (<= 1e-6); \
             flat-noise PSD within ±{spread:.2} dB over 200 Hz-20 kHz (<= 3); {secs:.1} s (< 30)"
        ),
    );
    assert!(pass);
}

#[test]
fn a3_gradient_integrity() {
    let start = Instant::now();
    let results = common::gradient_suite();
    let secs = start.elapsed().as_secs_f64();
    let (worst_name, worst) = results
        .iter()
        .copied()
        .fold(("", 0.0f64), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let failed: Vec<String> = results
        .iter()
        .filter(|(_, e)| !(*e <= common::REL_TOL))
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect();
    let pass = failed.is_empty() && secs < 300.0;
    report(
        "A3",
        pass,
        &format!(
            "gradient checks: {} ops, worst {worst_name} {worst:.1e} (<= 1e-3){}; {secs:.1} s (< 300)",
            results.len(),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) }
        ),
    );
    assert!(pass);
}

#[test]
fn a4_metric_identities() {
    let y = AudioBuffer::new(common::drum(24_000, 160.0, 20.0).into_iter().map(|v| v as f32).collect(), SR).unwrap();
    let m = mss_loss(&y, &y, &MssConfig::default()).unwrap();
    let l = lsd(&y, &y).unwrap();
    let s = sf_error(&y, &y).unwrap();
    let mag: Vec<f64> = (0..64).map(|i| 1.0 + (i as f64 * 0.3).sin().abs()).collect();
    let sc = spectral_convergence(&mag, &vec![0.0; 64]).unwrap();
    let (h3, hm2) = (rectify(3.0), rectify(-2.0));
    let pass = m == 0.0 && l == 0.0 && s == 0.0 && sc == 1.0 && h3 == 3.0 && hm2 == 0.0;
    report(
        "A4",
        pass,
        &format!("metric identities: mss {m}, lsd {l}, sf {s} (all 0); sc(Y, 0) {sc} (1); H(3) {h3}, H(-2) {hm2}"),
    );
    assert!(pass);
}

fn labeled(id: String, instrument: Instrument, source: Source, audio: AudioBuffer, seconds: f64) -> LabeledAudio {
    let audio = preprocess(&audio, seconds, SILENCE_DB).unwrap().buffer;
    LabeledAudio {
        id,
        instrument,
        source,
        audio,
    }
}

/// 32 membranophones and 32 idiophones, alternating; every fourth pair is
/// held out, giving 48 training and 16 validation items.
fn mixed_drums(cfg: &ModelConfig) -> (Vec<LabeledAudio>, Vec<LabeledAudio>) {
    const MEMBRANES: [Instrument; 3] = [Instrument::Kick, Instrument::Snare, Instrument::Tom];
    const METALS: [Instrument; 2] = [Instrument::Hihat, Instrument::Cymbal];
    let seconds = cfg.signal_seconds();
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for j in 0..64 {
        let i = j / 2;
        let instrument = if j % 2 == 0 { MEMBRANES[i % 3] } else { METALS[i % 2] };
        let source = if (i / 2) % 2 == 0 { Source::Acoustic } else { Source::Electronic };
        let audio = synth_instrument(instrument, source, 500 + j as u64, seconds);
        let item = labeled(format!("mix{j:02}"), instrument, source, audio, seconds);
        if j % 8 >= 6 {
            va.push(item);
        } else {
            tr.push(item);
        }
    }
    (tr, va)
}

/// Membranophones with the onset click always on; every fourth is held out.
fn clicky_membranes(cfg: &ModelConfig) -> (Vec<LabeledAudio>, Vec<LabeledAudio>) {
    let seconds = cfg.signal_seconds();
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for j in 0..64 {
        let mut params = SynthParams::membranophone(900 + j as u64);
        params.seconds = seconds;
        params.click = true;
        let audio = generate_synthetic_drum(DrumKind::Membranophone, &params);
        let source = if j % 2 == 0 { Source::Acoustic } else { Source::Electronic };
        let item = labeled(format!("mem{j:02}"), Instrument::Tom, source, audio, seconds);
        if j % 4 == 3 {
            va.push(item);
        } else {
            tr.push(item);
        }
    }
    (tr, va)
}

fn train_steps(
    train_set: &[PreparedItem<f32>],
    val_set: &[PreparedItem<f32>],
    strategy: MixingStrategy,
    steps: usize,
) -> (TrainOutcome<f32>, Duration) {
    let cfg = ModelConfig::desk().with_strategy(strategy);
    let tc = TrainConfig {
        max_steps: Some(steps),
        ..TrainConfig::desk()
    };
    let start = Instant::now();
    let model = DrumModel::<f32>::new(cfg, 0).unwrap();
    let out = train(train_set, val_set, model, &tc, None).unwrap();
    (out, start.elapsed())
}

#[test]
fn a5_training_smoke() {
    let start = Instant::now();
    let cfg = ModelConfig::desk();
    let (tr, va) = mixed_drums(&cfg);
    let train_set = prepare_items::<f32>(&tr, &cfg).unwrap();
    let val_set = prepare_items::<f32>(&va, &cfg).unwrap();
    let (out, _) = train_steps(&train_set, &val_set, MixingStrategy::TOfSPlusParallelN, 200);
    let secs = start.elapsed().as_secs_f64();

    let initial = out.history[0].val_mss;
    let last = out.history.last().unwrap().val_mss;
    let drop = 1.0 - last / initial;
    let finite = out
        .history
        .iter()
        .all(|r| r.val_mss.is_finite() && r.train_mss.is_none_or(f64::is_finite));
    let pass = out.steps == 200 && drop >= 0.30 && finite && secs < 1_800.0;
    report(
        "A5",
        pass,
        &format!(
            "training smoke: {} train / {} val, {} steps, val MSS {initial:.3} -> {last:.3} (best {:.3}), \
             drop {:.1}% (>= 30%), finite {finite}, {secs:.0} s (< 1800)",
            train_set.len(),
            val_set.len(),
            out.steps,
            out.best_val(),
            100.0 * drop
        ),
    );
    assert!(pass);
}

#[test]
fn a6_transient_network_sharpens_onsets() {
    let cfg = ModelConfig::desk();
    let (tr, va) = clicky_membranes(&cfg);
    let train_set = prepare_items::<f32>(&tr, &cfg).unwrap();
    let val_set = prepare_items::<f32>(&va, &cfg).unwrap();
    let sf_of = |strategy| {
        let (out, _) = train_steps(&train_set, &val_set, strategy, 200);
        let r = Resynthesizer::new(&out.best).unwrap();
        let report = evaluate(&val_set, &r, &MssConfig::default()).unwrap();
        report.group("all").unwrap().sf
    };
    let sn = sf_of(MixingStrategy::SPlusN);
    let tsn = sf_of(MixingStrategy::TOfSPlusParallelN);
    let detail = format!("held-out SF error: T(S)+N {tsn:.4e} vs S+N {sn:.4e} (soft: T(S)+N <= S+N)");
    if tsn <= sn {
        report("A6", true, &detail);
    } else {
        // reported, not gated: the synthetic corpus is not the recorded one
        warn("A6", &detail);
    }
}

#[test]
fn a7_causality_and_receptive_field() {
    let cfg = ModelConfig::desk();
    let rf = cfg.tcn.receptive_field();
    let model = DrumModel::<f64>::new(cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let n = 8_192;
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let z: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let base = model.tcn_forward(&x, &z).unwrap();
    let mut violations = 0;
    let mut reach = 0;
    let mut positions = Vec::new();
    for _ in 0..10 {
        let t = rng.gen_range(0..n);
        positions.push(t);
        let mut xp = x.clone();
        xp[t] += 0.25;
        let out = model.tcn_forward(&xp, &z).unwrap();
        for i in 0..n {
            let changed = out[i].to_bits() != base[i].to_bits();
            let inside = i >= t && i <= t + rf - 1;
            if changed && !inside {
                violations += 1;
            }
            if changed {
                reach = reach.max(i - t);
            }
        }
        assert_ne!(out[t], base[t], "perturbation at {t} has no effect");
    }
    let pass = violations == 0 && rf == 3_061;
    report(
        "A7",
        pass,
        &format!(
            "causality: 10 perturbations at {positions:?}, {violations} changes outside [t, t+{}], \
             furthest change t+{reach}",
            rf - 1
        ),
    );
    assert!(pass);
}

#[test]
fn a8_film_identity_at_init() {
    let cfg = ModelConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let x: Vec<f64> = (0..4_096).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let zs: Vec<Vec<f64>> = (0..4).map(|k| (0..128).map(|_| rng.gen_range(-3.0..3.0) * k as f64).collect()).collect();
    let mut identical = true;
    for seed in [0, 1] {
        let model = DrumModel::<f64>::new(cfg.clone(), seed).unwrap();
        let reference = model.tcn_forward(&x, &zs[0]).unwrap();
        for z in &zs[1..] {
            let out = model.tcn_forward(&x, z).unwrap();
            identical &= out.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits());
        }
        let m32 = model.cast::<f32>();
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let r32 = m32.tcn_forward(&x32, &vec![0.0; 128]).unwrap();
        for z in &zs[1..] {
            let z32: Vec<f32> = z.iter().map(|&v| v as f32).collect();
            let out = m32.tcn_forward(&x32, &z32).unwrap();
            identical &= out.iter().zip(&r32).all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }
    report(
        "A8",
        identical,
        &format!("FiLM identity at init: TCN output bitwise independent of z (2 seeds x 4 z, f64 and f32): {identical}"),
    );
    assert!(identical);
}

#[test]
fn a9_determinism() {
    let mut cfg = ModelConfig::desk().with_strategy(MixingStrategy::TOfSPlusParallelN);
    cfg.signal_len = 8_192;
    let (tr, va) = mixed_drums(&ModelConfig::desk());
    let crop = |items: &[LabeledAudio]| -> Vec<LabeledAudio> {
        items
            .iter()
            .take(6)
            .map(|it| LabeledAudio {
                audio: AudioBuffer::new(it.audio.samples()[..8_192].to_vec(), SR).unwrap(),
                ..it.clone()
            })
            .collect()
    };
    let train_set = prepare_items::<f32>(&crop(&tr), &cfg).unwrap();
    let val_set = prepare_items::<f32>(&crop(&va)[..3], &cfg).unwrap();
    let tc = TrainConfig {
        batch_size: 2,
        max_steps: Some(7),
        seed: 9,
        ..TrainConfig::desk()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let model = DrumModel::<f32>::new(cfg.clone(), 9).unwrap();
        train(&train_set, &val_set, model, &tc, Some(d.path())).unwrap();
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    let same_history = read(&dirs[0], "history.csv") == read(&dirs[1], "history.csv");
    let same_ckpt = read(&dirs[0], "best.ckpt") == read(&dirs[1], "best.ckpt")
        && read(&dirs[0], "last.ckpt") == read(&dirs[1], "last.ckpt");

    let path = dirs[0].path().join("last.ckpt");
    let model = DrumModel::<f32>::load(&path).unwrap();
    let again = dirs[0].path().join("again.ckpt");
    model.save(&again).unwrap();
    let back = DrumModel::<f32>::load(&again).unwrap();
    let round_trip = back.config() == model.config()
        && model
            .params
            .iter()
            .zip(back.params.iter())
            .all(|(a, b)| a.name == b.name && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()))
        && std::fs::read(&path).unwrap() == std::fs::read(&again).unwrap();

    let pass = same_history && same_ckpt && round_trip;
    report(
        "A9",
        pass,
        &format!(
            "determinism: identical history {same_history}, identical checkpoints {same_ckpt}, \
             save-load round trip bit-exact {round_trip}"
        ),
    );
    assert!(pass);
}

#[test]
fn a10_strategy_algebra() {
    let mut cfg = ModelConfig::desk().with_strategy(MixingStrategy::SPlusN);
    cfg.signal_len = 8_192;
    let audio = synth_instrument(Instrument::Snare, Source::Acoustic, 10, cfg.signal_seconds());
    let item = labeled("a10".into(), Instrument::Snare, Source::Acoustic, audio, cfg.signal_seconds());

    // float64: the S+N mix is the S output plus the noise branch, per sample
    let m64 = DrumModel::<f64>::new(cfg.clone(), 10).unwrap();
    let p64 = prepare_items::<f64>(std::slice::from_ref(&item), &cfg).unwrap().remove(0);
    let s = Resynthesizer::with_strategy(&m64, MixingStrategy::S).unwrap().run(&p64).unwrap();
    let sn = Resynthesizer::with_strategy(&m64, MixingStrategy::SPlusN).unwrap().run(&p64).unwrap();
    let n = sn.noise.as_ref().unwrap();
    let exact64 = (0..p64.len()).all(|i| sn.output[i].to_bits() == (s.output[i] + n[i]).to_bits());
    let literal64 = (0..p64.len())
        .map(|i| (sn.output[i] - s.output[i] - n[i]).abs())
        .fold(0.0, f64::max);

    // the noise branch equals the standalone filtered-noise render
    let tape = Tape::new();
    let bound = m64.params.bind_frozen(&tape);
    let y = tape.constant(p64.y.clone(), &[p64.len()]).unwrap();
    let gains = m64.noise_gains(&bound, y).unwrap();
    let synth = NoiseSynth::<f64>::new(cfg.n_bands, cfg.noise_hop).unwrap();
    let direct = synth.render_var(gains, &p64.excitation, p64.len()).unwrap().value();
    let branch_matches = direct.iter().zip(n).all(|(a, b)| a.to_bits() == b.to_bits());

    // float32: difference taken in f64 from the f32 outputs
    let m32 = m64.cast::<f32>();
    let p32 = prepare_items::<f32>(std::slice::from_ref(&item), &cfg).unwrap().remove(0);
    let s32 = Resynthesizer::with_strategy(&m32, MixingStrategy::S).unwrap().run(&p32).unwrap();
    let sn32 = Resynthesizer::with_strategy(&m32, MixingStrategy::SPlusN).unwrap().run(&p32).unwrap();
    let n32 = sn32.noise.as_ref().unwrap();
    let err32 = (0..p32.len())
        .map(|i| (sn32.output[i] as f64 - s32.output[i] as f64 - n32[i] as f64).abs())
        .fold(0.0, f64::max);

    let pass = exact64 && branch_matches && err32 <= 1e-6;
    report(
        "A10",
        pass,
        &format!(
            "strategy algebra: f64 S+N == S + N bitwise {exact64} (literal (S+N)-S-N max {literal64:.1e}), \
             noise branch == filtered noise {branch_matches}; f32 max |(S+N)-S-N| {err32:.1e} (<= 1e-6)"
        ),
    );
    assert!(pass);
}
