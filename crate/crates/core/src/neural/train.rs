//! Minibatch training of an optional adaptive layer and a GRU classifier.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveLayer;
use crate::data::{derive_seed, minibatches, rng_from_seed, LabeledDataset, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::neural::gru::{gru_backward, gru_forward, GruStack};
use crate::neural::loss::classification_loss;
use crate::neural::optim::{clip_grad_norm, scheduled_lr, LrCorrections, Optimizer, OptimizerConfig, ParamGroup, ParamSlot};
use crate::static_norm::FittedPipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub corrections: LrCorrections,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    /// `None` disables early stopping; the best-validation state is still
    /// restored at the end.
    pub early_stop_patience: Option<usize>,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            corrections: LrCorrections::uniform(0.1),
            optimizer: OptimizerConfig::default(),
            batch_size: 128,
            max_epochs: 30,
            lr_milestones: vec![4, 7],
            lr_gamma: 0.1,
            early_stop_patience: Some(5),
            grad_clip: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.corrections;
        if !(self.base_lr > 0.0) || [c.outlier, c.shift, c.scale, c.power, c.gate].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and max_epochs must be positive".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("lr milestones must be strictly increasing".into()));
        }
        Ok(())
    }
}

pub enum Preprocessing<'a> {
    None,
    Static(&'a FittedPipeline),
    Adaptive(&'a mut AdaptiveLayer),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub stopped_early: bool,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,valid_loss,lr\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.valid_loss, r.lr);
    }
    s
}

pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

const EVAL_CHUNK: usize = 1024;

/// Class probabilities (`N x C`) in evaluation mode. The adaptive layer, if
/// any, is applied with its state frozen.
pub fn predict(model: &GruStack, layer: Option<&AdaptiveLayer>, x: &TimeSeriesBatch) -> Result<Array2<f64>> {
    let mut parts = Vec::new();
    let idx: Vec<usize> = (0..x.n()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut xb = x.select(chunk);
        if let Some(l) = layer {
            let mut frozen = l.clone();
            xb = frozen.forward(&xb, false)?.0;
        }
        parts.push(gru_forward(&xb, model, None)?.probs);
    }
    if parts.is_empty() {
        return Err(Error::Empty("prediction batch"));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("matching column counts"))
}

fn evaluate_loss(model: &GruStack, layer: Option<&AdaptiveLayer>, data: &LabeledDataset) -> Result<f64> {
    let probs = predict(model, layer, &data.batch)?;
    Ok(classification_loss(&probs, &data.labels)?.0)
}

/// Trains `model` (and the adaptive layer, if given) on `train`, monitoring
/// loss on `valid`. On return the model and layer hold the parameters of the
/// epoch with the lowest validation loss.
pub fn train_loop(
    train: &LabeledDataset,
    valid: &LabeledDataset,
    preprocessing: Preprocessing<'_>,
    model: &mut GruStack,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train, valid, mut layer) = match preprocessing {
        Preprocessing::None => (train.clone(), valid.clone(), None),
        Preprocessing::Static(p) => (
            train.with_batch(p.apply(&train.batch)?)?,
            valid.with_batch(p.apply(&valid.batch)?)?,
            None,
        ),
        Preprocessing::Adaptive(l) => (train.clone(), valid.clone(), Some(l)),
    };
    if train.n() == 0 || valid.n() == 0 {
        return Err(Error::Empty("training or validation split"));
    }
    let mut shuffle_rng = rng_from_seed(derive_seed(config.seed, 1));
    let mut dropout_rng = rng_from_seed(derive_seed(config.seed, 2));
    let mut opt = Optimizer::new(config.optimizer);

    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_state = (model.clone(), layer.as_deref().cloned());
    let mut wait = 0;
    let mut stopped_early = false;
    let mut history = Vec::with_capacity(config.max_epochs);

    for epoch in 0..config.max_epochs {
        let lr = scheduled_lr(config.base_lr, epoch, &config.lr_milestones, config.lr_gamma);
        let mut loss_sum = 0.0;
        for (b, idx) in minibatches(train.n(), config.batch_size, &mut shuffle_rng, true)?
            .into_iter()
            .enumerate()
        {
            let raw = train.batch.select(&idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let (x, layer_cache) = match layer.as_deref_mut() {
                Some(l) => {
                    let (y, c) = l.forward(&raw, true)?;
                    (y, Some(c))
                }
                None => (raw, None),
            };
            let cache = gru_forward(&x, model, Some(&mut dropout_rng))?;
            let (loss, grad) = classification_loss(&cache.probs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss * idx.len() as f64;
            let (mut mgrads, gx) = gru_backward(&grad, &cache, model)?;
            let mut lgrads = match (layer.as_deref(), &layer_cache) {
                (Some(l), Some(c)) => Some(l.backward(&gx, c)?),
                _ => None,
            };
            if let Some(max_norm) = config.grad_clip {
                let mut all = mgrads.tensors_mut();
                if let Some(g) = lgrads.as_mut() {
                    all.extend(g.params_mut());
                }
                clip_grad_norm(&mut all, max_norm);
            }
            let mut slots: Vec<ParamSlot<'_>> = Vec::new();
            if let (Some(l), Some(g)) = (layer.as_deref_mut(), lgrads.as_ref()) {
                slots.extend(l.slots(g)?);
            }
            for (value, grad) in model.tensors_mut().into_iter().zip(mgrads.tensors()) {
                slots.push(ParamSlot {
                    group: ParamGroup::Model,
                    value,
                    grad,
                });
            }
            opt.step(&mut slots, lr, &config.corrections)?;
            if let Some(l) = layer.as_deref_mut() {
                l.project();
            }
        }
        let train_loss = loss_sum / train.n() as f64;
        let valid_loss = evaluate_loss(model, layer.as_deref(), &valid)?;
        if !valid_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            lr,
        });
        if valid_loss < best_loss {
            best_loss = valid_loss;
            best_epoch = epoch;
            best_state = (model.clone(), layer.as_deref().cloned());
            wait = 0;
        } else {
            wait += 1;
            if let Some(p) = config.early_stop_patience {
                if wait >= p {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    *model = best_state.0;
    if let (Some(l), Some(best)) = (layer, best_state.1) {
        *l = best;
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_valid_loss: best_loss,
        stopped_early,
    })
}
