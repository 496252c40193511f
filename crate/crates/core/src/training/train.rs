//! Minibatch training with early stopping on validation loss.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{backward, sample_loss, Gradients};
use super::loss::LossConfig;
use super::optim::{adamw_step, AdamWConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::graphs::{GraphDataset, SignedGraph};
use crate::labels::Split;
use crate::model::{argmax, forward, Activation, ModelDims, ModelParams};
use crate::numerics::{RngStream, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv1: 64,
            conv2: 64,
            hidden: 32,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeights {
    /// `1 / n_c` over the training split, rescaled to mean 1.
    InverseFrequency,
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSettings {
    pub label_smoothing: f64,
    pub lambda_l1: f64,
    pub lambda_binary: f64,
    pub class_weights: ClassWeights,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            label_smoothing: 0.1,
            lambda_l1: 1e-3,
            lambda_binary: 1e-3,
            class_weights: ClassWeights::InverseFrequency,
        }
    }
}

impl LossSettings {
    pub fn resolve(&self, train_counts: &[usize]) -> Result<LossConfig> {
        let class_weights = match &self.class_weights {
            ClassWeights::Uniform => vec![1.0; train_counts.len()],
            ClassWeights::Explicit(w) => {
                if w.len() != train_counts.len() {
                    return Err(Error::invalid(format!(
                        "{} explicit class weights for {} classes",
                        w.len(),
                        train_counts.len()
                    )));
                }
                w.clone()
            }
            ClassWeights::InverseFrequency => {
                if train_counts.contains(&0) {
                    return Err(Error::invalid("a class has no training graphs"));
                }
                let inv: Vec<f64> = train_counts.iter().map(|&n| 1.0 / n as f64).collect();
                let mean = inv.iter().sum::<f64>() / inv.len() as f64;
                inv.iter().map(|w| w / mean).collect()
            }
        };
        let cfg = LossConfig {
            label_smoothing: self.label_smoothing,
            class_weights,
            lambda_l1: self.lambda_l1,
            lambda_binary: self.lambda_binary,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossSettings,
    pub optimizer: AdamWConfig,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStopping => "early_stopping",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    /// Writes `epoch,train_loss,val_loss,val_acc` rows.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let map = |e: csv::Error| Error::format("history.csv", e.to_string());
        w.write_record(["epoch", "train_loss", "val_loss", "val_acc"]).map_err(map)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                format!("{:?}", r.train_loss),
                format!("{:?}", r.val_loss),
                format!("{:?}", r.val_accuracy),
            ])
            .map_err(map)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the best epoch.
    pub params: ModelParams<T>,
    pub history: TrainHistory,
    pub loss: LossConfig,
}

/// Mean loss and accuracy over a set of graphs.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, graphs: &[&SignedGraph<T>], cfg: &LossConfig) -> Result<(f64, f64)> {
    if graphs.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let per_graph = graphs
        .par_iter()
        .map(|g| {
            let cache = forward(params, g)?;
            let loss = sample_loss(&cache, g.label, cfg)?.as_f64();
            Ok((loss, argmax(&cache.probs) == g.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_graph.len() as f64;
    let loss = per_graph.iter().map(|(l, _)| l).sum::<f64>() / n;
    let correct = per_graph.iter().filter(|(_, ok)| *ok).count() as f64;
    Ok((loss, correct / n))
}

/// Mean loss and gradient over a minibatch. Per-graph work runs in parallel;
/// the reduction is sequential in batch order so results do not depend on
/// the thread count.
pub fn batch_gradient<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&SignedGraph<T>],
    cfg: &LossConfig,
) -> Result<(T, ModelParams<T>)> {
    let per_graph: Vec<(T, Gradients<T>)> = batch
        .par_iter()
        .map(|g| {
            let cache = forward(params, g)?;
            let loss = sample_loss(&cache, g.label, cfg)?;
            Ok((loss, backward(&cache, g, g.label, params, cfg)?))
        })
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let mut loss = T::zero();
    for (l, g) in &per_graph {
        loss = loss + *l;
        for (acc, part) in total.tensors_mut().into_iter().zip(g.params.tensors()) {
            acc.add_assign(part)?;
        }
    }
    let scale = T::one() / T::from_usize(batch.len()).unwrap();
    for t in total.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = *v * scale);
    }
    Ok((loss * scale, total))
}

/// Trains from scratch and returns the best-validation-loss parameters.
///
/// Training stops after `patience + 1` consecutive epochs without a strict
/// improvement in validation loss, or at `max_epochs`.
pub fn train<T: Scalar>(dataset: &GraphDataset<T>, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    let train_set: Vec<&SignedGraph<T>> = dataset.split(Split::Train).collect();
    let val_set: Vec<&SignedGraph<T>> = dataset.split(Split::Validation).collect();
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid(format!(
            "training needs non-empty train and validation splits, got {} and {}",
            train_set.len(),
            val_set.len()
        )));
    }
    let schedule = config.schedule;
    if schedule.batch_size == 0 || schedule.max_epochs == 0 {
        return Err(Error::invalid("batch_size and max_epochs must be positive"));
    }
    let loss_cfg = config.loss.resolve(&dataset.class_counts(Split::Train))?;

    let root = RngStream::new(config.seed);
    let dims = ModelDims {
        parcels: dataset.num_parcels,
        classes: dataset.num_classes,
        conv1: config.model.conv1,
        conv2: config.model.conv2,
        hidden: config.model.hidden,
    };
    let mut params = ModelParams::init(dims, &mut root.fork(0));
    params.activation = config.model.activation;
    let mut shuffler = root.fork(1);
    let mut state = OptimizerState::new(&params, config.optimizer);

    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut epochs = Vec::new();
    let mut waited = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=schedule.max_epochs {
        shuffler.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<&SignedGraph<T>> = chunk.iter().map(|&i| train_set[i]).collect();
            let (loss, grads) = batch_gradient(&params, &batch, &loss_cfg)?;
            loss_sum += loss.as_f64() * batch.len() as f64;
            adamw_step(&mut params, &grads, &mut state);
        }
        if let Err(e) = params.validate() {
            return Err(Error::Invariant(format!("epoch {epoch}: {e}")));
        }
        let (val_loss, val_accuracy) = evaluate(&params, &val_set, &loss_cfg)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
            waited = 0;
        } else {
            waited += 1;
            if waited > schedule.patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best.2,
        history: TrainHistory {
            epochs,
            best_epoch: best.1,
            stop_reason,
        },
        loss: loss_cfg,
    })
}
