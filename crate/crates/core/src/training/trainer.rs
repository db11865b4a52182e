use std::borrow::Cow;
use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, class_proportions, class_weights, weighted_ce_loss, AdamState, ClassWeights, Result, TrainConfig, TrainError};
use crate::evaluation::{evaluate, SplitIndices};
use crate::ingest::LabeledEpoch;
use crate::model::{input_tensor, model_forward, Forward, ModelConfig, Msdan};
use crate::preprocess::{augment, AugmentConfig};
use crate::tensor::ops::Mode;
use crate::{Scalar, NUM_STAGES};

/// Model plus optimizer state; one call to [`Trainer::step`] is one update.
#[derive(Clone, Debug)]
pub struct Trainer<S: Scalar> {
    pub model: Msdan<S>,
    pub state: AdamState<S>,
    pub config: TrainConfig,
    pub weights: ClassWeights,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: Msdan<S>, config: TrainConfig, weights: ClassWeights) -> Result<Self> {
        config.validate()?;
        let state = AdamState::new(&model.params);
        Ok(Self { model, state, config, weights })
    }

    /// Train-mode forward, weighted loss, backward, Adam update, and
    /// running-statistics update. Returns the loss before the update.
    pub fn step(&mut self, batch: &[&LabeledEpoch]) -> Result<f64> {
        if batch.is_empty() {
            return Err(TrainError::EmptySplit("batch"));
        }
        let inputs: Vec<&[f32]> = batch.iter().map(|e| e.samples.as_slice()).collect();
        let labels: Vec<_> = batch.iter().map(|e| e.label).collect();
        let x = input_tensor::<S>(&inputs, self.model.config.input_length)?;
        let (loss, grads, running) = {
            let mut ctx = Forward::new(&self.model.config, &self.model.params, Mode::Train, true);
            let logits = model_forward(&mut ctx, &x)?;
            let loss = weighted_ce_loss(&logits, &labels, &self.weights)?;
            loss.backward()?;
            (loss.item().to_f64_lossy(), ctx.grads(), ctx.into_running())
        };
        if !loss.is_finite() {
            return Err(TrainError::NonFinite(self.state.step + 1));
        }
        adam_step(&mut self.model.params, &grads, &mut self.state, &self.config)?;
        self.model.apply_running(running)?;
        Ok(loss)
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub pass: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Mean batch loss over the pass.
    pub train_loss: f64,
    pub val_overall_acc: f64,
    pub val_kappa: Option<f64>,
    pub val_macro_f1: Option<f64>,
}

pub const CSV_HEADER: &str = "pass,step,train_loss,val_overall_acc,val_kappa,val_macro_f1";

impl PassRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.pass,
            self.step,
            self.train_loss,
            self.val_overall_acc,
            opt(self.val_kappa),
            opt(self.val_macro_f1)
        )
    }
}

/// Hooks called by [`train`]. Every method defaults to doing nothing.
pub trait TrainObserver<S: Scalar> {
    /// After each update, with the dataset indices that made up the batch.
    fn on_batch(&mut self, _pass: usize, _step: u64, _indices: &[usize], _loss: f64) -> Result<()> {
        Ok(())
    }
    fn on_pass(&mut self, _record: &PassRecord) -> Result<()> {
        Ok(())
    }
    /// Every `checkpoint_every` passes, with the current model.
    fn on_checkpoint(&mut self, _pass: usize, _model: &Msdan<S>) -> Result<()> {
        Ok(())
    }
    /// Whenever validation kappa improves.
    fn on_best(&mut self, _pass: usize, _model: &Msdan<S>) -> Result<()> {
        Ok(())
    }
}

impl<S: Scalar> TrainObserver<S> for () {}

/// Appends one CSV row per pass, flushing after each.
pub struct CsvLog<W: Write> {
    out: W,
}

impl<W: Write> CsvLog<W> {
    /// Writes the header line first.
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<S: Scalar, W: Write> TrainObserver<S> for CsvLog<W> {
    fn on_pass(&mut self, record: &PassRecord) -> Result<()> {
        writeln!(self.out, "{}", record.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S: Scalar> {
    /// Parameters from the pass with the highest validation kappa (earliest on ties).
    pub best: Msdan<S>,
    pub best_pass: usize,
    pub last: Msdan<S>,
    pub weights: ClassWeights,
    pub log: Vec<PassRecord>,
}

/// Class weights from the label proportions of `indices`. A class with no
/// epochs there gets the upper clamp, 5.
pub fn training_class_weights(epochs: &[LabeledEpoch], indices: &[usize]) -> Result<ClassWeights> {
    let p = class_proportions(indices.iter().map(|&i| epochs[i].label));
    let present: [f64; NUM_STAGES] = p.map(|v| if v > 0.0 { v } else { 1.0 });
    let mut w = class_weights(&present)?;
    for (wi, &pi) in w.weight.iter_mut().zip(&p) {
        if pi == 0.0 {
            *wi = 5.0;
        }
    }
    Ok(w)
}

fn check_split(split: &SplitIndices, n: usize) -> Result<()> {
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if split.validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if let Some(&index) = split.train.iter().chain(&split.validation).find(|&&i| i >= n) {
        return Err(TrainError::IndexOutOfRange { index, len: n });
    }
    let val: BTreeSet<usize> = split.validation.iter().copied().collect();
    if let Some(&i) = split.train.iter().find(|i| val.contains(i)) {
        return Err(TrainError::Leakage(i));
    }
    Ok(())
}

/// Trains a fresh model (initialized from `cfg.seed`) on `split.train`,
/// validating on `split.validation` after every pass. Batches are reshuffled
/// each pass from a stream keyed by the pass number; augmentation, when
/// given, applies to training epochs only and draws from its own streams.
pub fn train<S: Scalar>(
    epochs: &[LabeledEpoch],
    split: &SplitIndices,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    augmentation: Option<&AugmentConfig>,
    observer: &mut dyn TrainObserver<S>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    model_cfg.validate()?;
    if let Some(a) = augmentation {
        a.validate()?;
    }
    check_split(split, epochs.len())?;

    let weights = training_class_weights(epochs, &split.train)?;
    log::info!("class weights {:?}", weights.weight);
    let mut trainer = Trainer::new(Msdan::new(model_cfg.clone(), cfg.seed)?, cfg.clone(), weights)?;
    let mut best: Option<(f64, usize, Msdan<S>)> = None;
    let mut log = Vec::with_capacity(cfg.max_training_passes);

    for pass in 1..=cfg.max_training_passes {
        let mut order = split.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(pass as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Cow<'_, LabeledEpoch>> = chunk
                .iter()
                .map(|&i| match augmentation {
                    Some(a) => Cow::Owned(augment(&epochs[i], a, &mut a.epoch_rng(pass, i))),
                    None => Cow::Borrowed(&epochs[i]),
                })
                .collect();
            let refs: Vec<&LabeledEpoch> = batch.iter().map(|c| c.as_ref()).collect();
            let loss = trainer.step(&refs)?;
            loss_sum += loss;
            batches += 1;
            observer.on_batch(pass, trainer.state.step, chunk, loss)?;
        }

        let eval = evaluate(&trainer.model, epochs, &split.validation)?;
        let record = PassRecord {
            pass,
            step: trainer.state.step,
            train_loss: loss_sum / batches as f64,
            val_overall_acc: eval.summary.overall_accuracy,
            val_kappa: eval.summary.kappa,
            val_macro_f1: eval.summary.macro_f1,
        };
        log::info!(
            "pass {pass}: loss {:.4}, validation accuracy {:.2}%, kappa {:?}",
            record.train_loss,
            record.val_overall_acc,
            record.val_kappa
        );
        observer.on_pass(&record)?;

        let score = record.val_kappa.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            observer.on_best(pass, &trainer.model)?;
            best = Some((score, pass, trainer.model.clone()));
        }
        if cfg.checkpoint_every > 0 && pass % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(pass, &trainer.model)?;
        }
        log.push(record);
    }

    let (_, best_pass, best) = best.expect("at least one pass ran");
    Ok(TrainOutcome { best, best_pass, last: trainer.model, weights: trainer.weights, log })
}
