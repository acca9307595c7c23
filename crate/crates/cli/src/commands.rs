use std::path::Path;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use dsms_core::audio::{
    generate_synthetic_dataset, load_wav, preprocess, read_manifest, save_wav, split_dataset, write_manifest,
};
use dsms_core::metrics::MssConfig;
use dsms_core::pipeline::{
    self, export_embeddings, load_dataset, prepare_items, resynthesize, Resynthesizer, SILENCE_DB,
};
use dsms_core::sinusoidal::{Analyzer, TrackerConfig};
use dsms_core::timefreq::CqtConfig;
use dsms_core::{DrumModel, MetricsReport, MixingStrategy, ModelConfig, TrainConfig};

use crate::{AnalyzeArgs, EmbedArgs, EvalArgs, GenDataArgs, ModelSize, ResynthArgs, TrainArgs};

const SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

fn require_file(path: &Path, what: &str) -> Result<()> {
    ensure!(path.is_file(), "{what} {} does not exist", path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<DrumModel<f32>> {
    require_file(path, "model")?;
    DrumModel::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    ensure!(a.count > 0, "--count must be positive");
    ensure!(a.seconds > 0.0, "--seconds must be positive");
    let items = generate_synthetic_dataset(&a.out, a.count, a.seed, a.seconds)?;
    write_manifest(&a.out.join("manifest.csv"), &items)?;
    let split = split_dataset(&items, SPLIT, a.seed)?;
    for (name, part) in ["train", "val", "test"].iter().zip(split.parts()) {
        write_manifest(&a.out.join(format!("{name}.csv")), part)?;
    }
    println!(
        "wrote {} items ({} train, {} val, {} test) to {}",
        items.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        a.out.display()
    );
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    require_file(&a.input, "input")?;
    ensure!(a.max_tracks > 0, "--max-tracks must be positive");
    let x = load_wav(&a.input)?;
    let cqt = CqtConfig {
        sample_rate: x.sample_rate(),
        ..CqtConfig::default()
    };
    let tracker = TrackerConfig {
        max_tracks: a.max_tracks,
        ..TrackerConfig::default()
    };
    let bank = Analyzer::new(cqt, tracker)?.analyze(&x)?;
    bank.write_csv(&a.out)?;
    println!("{} tracks over {} frames", bank.tracks.len(), bank.n_frames);
    Ok(())
}

pub fn resynth(a: &ResynthArgs) -> Result<()> {
    require_file(&a.input, "input")?;
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => {
            if a.strategy != Some(MixingStrategy::S) {
                bail!("--model is required unless --strategy is s");
            }
            // the sinusoidal branch has no weights; any model will do
            DrumModel::new(ModelConfig::default(), 0)?
        }
    };
    let strategy = a.strategy.unwrap_or(model.strategy());
    let raw = load_wav(&a.input)?;
    let pre = preprocess(&raw, model.config().signal_seconds(), SILENCE_DB)?;
    if pre.all_silent {
        log::warn!("{} is silent", a.input.display());
    }
    let y = resynthesize(&pre.buffer, &model, strategy, a.seed)?;
    save_wav(&a.out, &y)?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    require_file(&a.manifest, "manifest")?;
    ensure!(a.max_hours > 0.0 && a.max_hours.is_finite(), "--max-hours must be positive");
    ensure!(a.strategy.is_trainable(), "strategy s has nothing to train");
    let items = read_manifest(&a.manifest)?;
    let (train_items, val_items) = match &a.val_manifest {
        Some(v) => {
            require_file(v, "validation manifest")?;
            (items, read_manifest(v)?)
        }
        None => {
            let s = split_dataset(&items, SPLIT, a.seed)?;
            (s.train, s.val)
        }
    };
    ensure!(!train_items.is_empty() && !val_items.is_empty(), "train and validation sets must be non-empty");
    let cfg = match a.size {
        ModelSize::Full => ModelConfig::default(),
        ModelSize::Desk => ModelConfig::desk(),
    }
    .with_strategy(a.strategy);
    let tc = TrainConfig {
        lr: a.lr,
        batch_size: a.batch,
        max_epochs: a.epochs,
        max_steps: a.max_steps,
        max_wall_clock: Duration::from_secs_f64(a.max_hours * 3600.0),
        seed: a.seed,
        ..TrainConfig::default()
    };
    tc.validate()?;

    let train_set = prepare_items::<f32>(&load_dataset(&train_items, &cfg)?, &cfg)?;
    let val_set = prepare_items::<f32>(&load_dataset(&val_items, &cfg)?, &cfg)?;
    let model = DrumModel::new(cfg, a.seed)?;
    let out = pipeline::train(&train_set, &val_set, model, &tc, Some(&a.out_dir))?;
    println!(
        "{} steps, best validation MSS {:.4} ({})",
        out.steps,
        out.best_val(),
        out.stop
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    require_file(&a.manifest, "manifest")?;
    let model = load_model(&a.model)?;
    let items = read_manifest(&a.manifest)?;
    ensure!(!items.is_empty(), "manifest {} is empty", a.manifest.display());
    let prepared = prepare_items::<f32>(&load_dataset(&items, model.config())?, model.config())?;
    let r = Resynthesizer::with_strategy(&model, a.strategy.unwrap_or(model.strategy()))?;
    let report = pipeline::evaluate(&prepared, &r, &MssConfig::default())?;
    MetricsReport::write_csv(&[report], &a.out)?;
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    require_file(&a.manifest, "manifest")?;
    let model = load_model(&a.model)?;
    let items = read_manifest(&a.manifest)?;
    let audio = load_dataset(&items, model.config())?;
    export_embeddings(&a.out, &audio, &model)?;
    Ok(())
}
