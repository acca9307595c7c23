use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diff::{AdamState, Tape};
use crate::error::{invalid, Error, Result};
use crate::metrics::{MssConfig, MssTarget};
use crate::neural::DrumModel;
use crate::Real;

use super::{PreparedItem, Resynthesizer};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before the learning rate drops.
    pub plateau_patience: usize,
    pub lr_factor: f64,
    /// Further epochs without improvement, after a drop, before stopping.
    pub early_stop_patience: usize,
    pub max_epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub max_wall_clock: Duration,
    pub seed: u64,
    pub mss: MssConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 12,
            plateau_patience: 20,
            lr_factor: 0.5,
            early_stop_patience: 20,
            max_epochs: None,
            max_steps: None,
            max_wall_clock: Duration::from_secs(2 * 3600),
            seed: 0,
            mss: MssConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for short single-core runs on small synthetic sets: a larger
    /// learning rate and smaller batches than the defaults.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 4,
            max_wall_clock: Duration::from_secs(30 * 60),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(invalid(format!("lr factor must be in (0, 1), got {}", self.lr_factor)));
        }
        if self.batch_size == 0 || self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(invalid("batch size and patience values must be positive"));
        }
        if self.max_wall_clock.is_zero() {
            return Err(invalid("wall-clock cap must be positive"));
        }
        self.mss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerEvent {
    Improved,
    NoImprovement,
    LrReduced,
    Stop,
}

/// Halves the learning rate after `patience` epochs without a new best
/// validation loss, and stops after `stop_patience` further such epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    stop_patience: usize,
    best: f64,
    bad_epochs: usize,
    reduced: bool,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, stop_patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            stop_patience,
            best: f64::INFINITY,
            bad_epochs: 0,
            reduced: false,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val: f64) -> SchedulerEvent {
        if val < self.best {
            self.best = val;
            self.bad_epochs = 0;
            self.reduced = false;
            return SchedulerEvent::Improved;
        }
        self.bad_epochs += 1;
        if !self.reduced && self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.reduced = true;
            self.bad_epochs = 0;
            SchedulerEvent::LrReduced
        } else if self.reduced && self.bad_epochs >= self.stop_patience {
            SchedulerEvent::Stop
        } else {
            SchedulerEvent::NoImprovement
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps; absent for epoch 0, which
    /// is the validation of the initial weights.
    pub train_mss: Option<f64>,
    pub val_mss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    MaxSteps,
    WallClock,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStop => "validation loss stopped improving",
            StopReason::MaxEpochs => "epoch limit reached",
            StopReason::MaxSteps => "step limit reached",
            StopReason::WallClock => "wall-clock cap reached",
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    /// Weights with the lowest validation loss.
    pub best: DrumModel<T>,
    /// Weights after the final step.
    pub last: DrumModel<T>,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub stop: StopReason,
}

impl<T: Real> TrainOutcome<T> {
    pub fn best_val(&self) -> f64 {
        self.history.iter().map(|r| r.val_mss).fold(f64::INFINITY, f64::min)
    }

    pub fn write_history(&self, path: &Path) -> Result<()> {
        write_history(&self.history, path)
    }
}

fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_mss", "val_mss", "lr"])?;
    for r in history {
        w.write_record(&[
            r.epoch.to_string(),
            r.train_mss.map(|v| v.to_string()).unwrap_or_default(),
            r.val_mss.to_string(),
            r.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct Example<'a, T: Real> {
    item: &'a PreparedItem<T>,
    target: MssTarget<T>,
}

fn examples<'a, T: Real>(items: &'a [PreparedItem<T>], cfg: &MssConfig, split: &str) -> Result<Vec<Example<'a, T>>> {
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        match MssTarget::new(&item.y, cfg) {
            Ok(target) => out.push(Example { item, target }),
            Err(Error::SilentReference) => log::warn!("{split}: skipping silent item {}", item.id),
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(invalid(format!("{split} split has no usable items")));
    }
    Ok(out)
}

fn loss_and_grads<T: Real>(r: &Resynthesizer<'_, T>, ex: &Example<'_, T>) -> Result<(f64, Vec<Vec<T>>)> {
    let tape = Tape::new();
    let p = r.model().params.bind(&tape);
    let out = r.forward_var(&p, &tape, ex.item)?;
    let loss = ex.target.loss_var(out.output)?;
    let value = loss.item().f64();
    let grads = tape.backward(loss)?;
    Ok((value, p.collect_grads(&grads)))
}

fn val_loss<T: Real>(r: &Resynthesizer<'_, T>, ex: &Example<'_, T>) -> Result<f64> {
    let tape = Tape::new();
    let p = r.model().params.bind_frozen(&tape);
    let out = r.forward_var(&p, &tape, ex.item)?;
    Ok(ex.target.loss_var(out.output)?.item().f64())
}

fn validate<T: Real>(model: &DrumModel<T>, val: &[Example<'_, T>]) -> Result<f64> {
    let r = Resynthesizer::new(model)?;
    let losses = val.par_iter().map(|ex| val_loss(&r, ex)).collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn save_checkpoints<T: Real>(dir: Option<&Path>, name: &str, model: &DrumModel<T>) -> Result<()> {
    match dir {
        Some(d) => model.save(&d.join(name)),
        None => Ok(()),
    }
}

/// Trains every weight of `model` on the MSS between inputs and their
/// resynthesis under the model's strategy.
///
/// One epoch is one shuffled pass over `train_items` in batches; validation
/// runs before the first step and after each epoch. With `out_dir` set,
/// `best.ckpt`, `last.ckpt` and `history.csv` are kept up to date there.
pub fn train<T: Real>(
    train_items: &[PreparedItem<T>],
    val_items: &[PreparedItem<T>],
    model: DrumModel<T>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if !model.strategy().is_trainable() {
        return Err(invalid("strategy s has no trainable branch"));
    }
    let train_set = examples(train_items, &cfg.mss, "train")?;
    let val_set = examples(val_items, &cfg.mss, "validation")?;
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
    }
    let start = Instant::now();
    let mut model = model;
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.lr_factor, cfg.plateau_patience, cfg.early_stop_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let v0 = validate(&model, &val_set)?;
    if !v0.is_finite() {
        return Err(Error::NonFinite("initial validation loss".into()));
    }
    sched.observe(v0);
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_mss: None,
        val_mss: v0,
        lr: sched.lr(),
    }];
    let mut best = model.clone();
    save_checkpoints(out_dir, "best.ckpt", &best)?;
    log::info!("epoch 0: val {v0:.4}");

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut steps = 0usize;
    let mut epoch = 0usize;
    let stop = loop {
        if cfg.max_epochs.is_some_and(|m| epoch >= m) {
            break StopReason::MaxEpochs;
        }
        epoch += 1;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_items = 0usize;
        let mut capped = None;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                capped = Some(StopReason::MaxSteps);
                break;
            }
            if start.elapsed() >= cfg.max_wall_clock {
                capped = Some(StopReason::WallClock);
                break;
            }
            let r = Resynthesizer::new(&model)?;
            let results = batch
                .par_iter()
                .map(|&i| loss_and_grads(&r, &train_set[i]))
                .collect::<Result<Vec<_>>>()?;
            // reduce in batch order so the sum is independent of thread count
            let mut grads = model.params.zeros_like();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, &v) in acc.iter_mut().zip(gi) {
                        *a = *a + v;
                    }
                }
            }
            let finite = batch_loss.is_finite() && grads.iter().flatten().all(|v| v.is_finite());
            if !finite {
                save_checkpoints(out_dir, "last.ckpt", &model)?;
                if let Some(d) = out_dir {
                    write_history(&history, &d.join("history.csv"))?;
                }
                return Err(Error::NonFinite(format!(
                    "training loss or gradient at epoch {epoch}, step {}",
                    steps + 1
                )));
            }
            let scale = T::of(1.0 / batch.len() as f64);
            for g in grads.iter_mut().flatten() {
                *g = *g * scale;
            }
            adam.lr = sched.lr();
            adam.step(&mut model.params, &grads)?;
            steps += 1;
            epoch_loss += batch_loss;
            epoch_items += batch.len();
        }
        if epoch_items == 0 {
            // the cap hit before this epoch took a step
            break capped.unwrap_or(StopReason::MaxSteps);
        }
        let v = validate(&model, &val_set)?;
        if !v.is_finite() {
            save_checkpoints(out_dir, "last.ckpt", &model)?;
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let event = sched.observe(v);
        history.push(EpochRecord {
            epoch,
            train_mss: Some(epoch_loss / epoch_items as f64),
            val_mss: v,
            lr: sched.lr(),
        });
        log::info!(
            "epoch {epoch}: train {:.4} val {v:.4} lr {:.3e} ({event:?})",
            epoch_loss / epoch_items as f64,
            sched.lr()
        );
        if event == SchedulerEvent::Improved {
            best = model.clone();
            save_checkpoints(out_dir, "best.ckpt", &best)?;
        }
        save_checkpoints(out_dir, "last.ckpt", &model)?;
        if let Some(d) = out_dir {
            write_history(&history, &d.join("history.csv"))?;
        }
        if let Some(reason) = capped {
            break reason;
        }
        if event == SchedulerEvent::Stop {
            break StopReason::EarlyStop;
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break StopReason::MaxSteps;
        }
        if start.elapsed() >= cfg.max_wall_clock {
            break StopReason::WallClock;
        }
    };
    if let Some(d) = out_dir {
        write_history(&history, &d.join("history.csv"))?;
        save_checkpoints(out_dir, "last.ckpt", &model)?;
    }
    log::info!("stopped after {steps} steps: {stop}");
    Ok(TrainOutcome {
        best,
        last: model,
        history,
        steps,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_metric_halves_lr_once_then_stops() {
        let mut s = PlateauScheduler::new(1e-4, 0.5, 20, 20);
        assert_eq!(s.observe(1.0), SchedulerEvent::Improved);
        let events: Vec<_> = (0..20).map(|_| s.observe(1.0)).collect();
        assert_eq!(events.iter().filter(|e| **e == SchedulerEvent::LrReduced).count(), 1);
        assert_eq!(events[19], SchedulerEvent::LrReduced);
        assert_eq!(s.lr(), 5e-5);
        for _ in 0..19 {
            assert_eq!(s.observe(1.0), SchedulerEvent::NoImprovement);
        }
        assert_eq!(s.observe(1.0), SchedulerEvent::Stop);
        assert_eq!(s.lr(), 5e-5);
    }

    #[test]
    fn improvement_resets_the_count() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 3, 3);
        s.observe(1.0);
        s.observe(1.0);
        s.observe(1.0);
        assert_eq!(s.observe(0.5), SchedulerEvent::Improved);
        s.observe(0.6);
        s.observe(0.6);
        assert_eq!(s.lr(), 1.0);
        assert_eq!(s.observe(0.6), SchedulerEvent::LrReduced);
        assert_eq!(s.lr(), 0.5);
        // a new best after a drop allows another drop later
        assert_eq!(s.observe(0.1), SchedulerEvent::Improved);
        for _ in 0..2 {
            s.observe(0.2);
        }
        assert_eq!(s.observe(0.2), SchedulerEvent::LrReduced);
        assert_eq!(s.lr(), 0.25);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
