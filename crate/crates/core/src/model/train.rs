use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{
    split_lengths, window_split, Metrics, Scaler, SeriesDataset, Splits, WindowBatch, WindowSet,
};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};

use super::{hybrid_loss, Optimizer, Sdgl};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        let z: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState { m: z.clone(), v: z }
    }
}

/// Normalized windows ready for training, plus the scaler that produced them.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub scaler: Scaler,
    pub splits: Splits,
}

impl TrainingData {
    /// Splits chronologically, fits the scaler on the training rows only, and
    /// windows every split of the normalized series.
    pub fn prepare(ds: &SeriesDataset, config: &super::ModelConfig) -> Result<Self> {
        if ds.nodes() != config.nodes {
            return Err(Error::shape(
                "training data",
                format!("dataset has {} nodes, config {}", ds.nodes(), config.nodes),
            ));
        }
        let [train_rows, _, _] = split_lengths(ds.len(), config.split)?;
        if train_rows == 0 {
            return Err(Error::InsufficientLength {
                split: "train",
                len: 0,
                needed: config.window + config.horizon,
            });
        }
        let scaler = Scaler::fit(ds.values(), train_rows)?;
        let normalized = scaler.transform(ds.values(), 1)?;
        let splits = window_split(&normalized, config.window, config.horizon, config.split)?;
        Ok(TrainingData { scaler, splits })
    }
}

/// Loss components of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub mae: f64,
    pub graph_loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean hybrid loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean prediction MAE (normalized units) over the epoch's batches.
    pub train_mae: f64,
    pub graph_loss: f64,
    /// Validation metrics in original units.
    pub val: Option<Metrics>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
}

/// Forecast quality of a window set in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: Metrics,
    /// One entry per forecast step.
    pub per_horizon: Vec<Metrics>,
    pub windows: usize,
}

impl Sdgl {
    /// [`Sdgl::optimizer_step`] followed by the momentum update of `M_d`.
    pub fn train_step(&mut self, batch: &WindowBatch) -> Result<StepStats> {
        let stats = self.optimizer_step(batch)?;
        self.embeddings.momentum_update(&self.params)?;
        Ok(stats)
    }

    /// One forward/backward pass on a normalized batch and a clipped
    /// optimizer step over every parameter. The momentum embeddings are not
    /// parameters and stay untouched.
    pub fn optimizer_step(&mut self, batch: &WindowBatch) -> Result<StepStats> {
        let lambda = self.config.effective_lambda();
        let (stats, grads) = {
            let tape = Tape::new();
            let p = self.params.bind(&tape);
            let x = tape.constant(batch.inputs.clone());
            let y = tape.constant(batch.targets.clone());
            let mut rng = self.rng.clone();
            let dropout = (self.config.keep_prob < 1.0).then_some(&mut rng);
            let out = self.forward(&p, x, dropout)?;
            let loss = hybrid_loss(out.prediction, y, out.graph_loss, lambda)?;
            let mae = out.prediction.sub(y)?.abs()?.mean()?.item();
            let stats = StepStats {
                loss: loss.item(),
                mae,
                graph_loss: out.graph_loss.item(),
                grad_norm: 0.0,
            };
            if !stats.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: 0,
                    step: self.step as usize,
                    last_finite: None,
                });
            }
            tape.backward(loss)?;
            let grads: Vec<Tensor> = p
                .vars()
                .iter()
                .zip(self.params.tensors())
                .map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            self.rng = rng;
            (stats, grads)
        };
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged {
                epoch: 0,
                step: self.step as usize,
                last_finite: Some(stats.loss),
            });
        }
        let clip = if norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        self.apply_update(&grads, clip)?;
        self.step += 1;
        Ok(StepStats {
            grad_norm: norm,
            ..stats
        })
    }

    fn apply_update(&mut self, grads: &[Tensor], clip: f64) -> Result<()> {
        let lr = self.config.learning_rate;
        match self.config.optimizer {
            Optimizer::Sgd => {
                for (id, g) in self.params.ids().collect::<Vec<_>>().into_iter().zip(grads) {
                    for (w, &gi) in self.params.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * clip * gi;
                    }
                }
            }
            Optimizer::Adam => {
                let state = self
                    .adam
                    .get_or_insert_with(|| AdamState::zeros_like(self.params.tensors()));
                let t = (self.step + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let ids: Vec<_> = self.params.ids().collect();
                for (k, id) in ids.into_iter().enumerate() {
                    let w = self.params.get_mut(id).data_mut();
                    let m = state.m[k].data_mut();
                    let v = state.v[k].data_mut();
                    for (i, &gi) in grads[k].data().iter().enumerate() {
                        let g = gi * clip;
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs `config.epochs` epochs over shuffled training windows, logging
    /// the mean training loss and validation metrics after each.
    pub fn train(&mut self, data: &TrainingData) -> Result<TrainReport> {
        self.train_with(data, |_| {})
    }

    /// As [`Sdgl::train`], calling `on_epoch` after each epoch.
    pub fn train_with(
        &mut self,
        data: &TrainingData,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<TrainReport> {
        let train = &data.splits.train;
        if train.is_empty() {
            return Err(Error::InsufficientLength {
                split: "train",
                len: train.values().shape()[0],
                needed: self.config.window + self.config.horizon,
            });
        }
        if train.nodes() != self.config.nodes {
            return Err(Error::shape(
                "train",
                format!(
                    "{} nodes in data, {} in model",
                    train.nodes(),
                    self.config.nodes
                ),
            ));
        }
        self.scaler = Some(data.scaler.clone());
        let mut report = TrainReport::default();
        let mut last_finite: Option<f64> = None;
        for epoch in 1..=self.config.epochs {
            let started = Instant::now();
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut self.rng);
            let (mut loss, mut mae, mut gl) = (0.0, 0.0, 0.0);
            let batches = order.chunks(self.config.batch_size);
            let count = batches.len();
            for idx in batches {
                let batch = train.batch(idx)?;
                let stats = self.train_step(&batch).map_err(|e| match e {
                    Error::Diverged { step, .. } => Error::Diverged {
                        epoch,
                        step,
                        last_finite,
                    },
                    other => other,
                })?;
                debug!(
                    "step {} loss {:.6} grad norm {:.4}",
                    self.step, stats.loss, stats.grad_norm
                );
                last_finite = Some(stats.loss);
                loss += stats.loss;
                mae += stats.mae;
                gl += stats.graph_loss;
            }
            let n = count as f64;
            let val = if data.splits.val.is_empty() {
                None
            } else {
                Some(self.evaluate(&data.splits.val)?.overall)
            };
            let log = EpochLog {
                epoch,
                train_loss: loss / n,
                train_mae: mae / n,
                graph_loss: gl / n,
                val,
                seconds: started.elapsed().as_secs_f64(),
            };
            info!(
                "epoch {epoch}: train loss {:.6}, val mae {}",
                log.train_loss,
                log.val
                    .map_or_else(|| "-".to_owned(), |m| format!("{:.6}", m.mae))
            );
            on_epoch(&log);
            report.epochs.push(log);
        }
        Ok(report)
    }

    /// Evaluation-mode forecasts for every window of a normalized set, in
    /// original units: `(prediction, target)`, each `W×N×L`.
    pub fn forecast_windows(&self, windows: &WindowSet) -> Result<(Tensor, Tensor)> {
        let scaler = self
            .scaler
            .as_ref()
            .ok_or_else(|| Error::State("model has no fitted scaler".into()))?;
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for batch in windows.batches(self.config.batch_size.max(32)) {
            let batch = batch?;
            preds.extend(
                scaler
                    .inverse(&self.forecast_normalized(&batch.inputs)?, 1)?
                    .into_data(),
            );
            targets.extend(scaler.inverse(&batch.targets, 1)?.into_data());
        }
        let shape = [windows.len(), self.config.nodes, self.config.horizon];
        Ok((Tensor::new(&shape, preds)?, Tensor::new(&shape, targets)?))
    }

    /// Overall and per-step metrics on a normalized window set, in original
    /// units.
    pub fn evaluate(&self, windows: &WindowSet) -> Result<Evaluation> {
        if windows.is_empty() {
            return Err(Error::Contract("no windows to evaluate".into()));
        }
        let (pred, truth) = self.forecast_windows(windows)?;
        let overall = Metrics::compute(&pred, &truth, 1)?;
        let per_horizon = (0..self.config.horizon)
            .map(|k| Metrics::compute(&horizon_slice(&pred, k)?, &horizon_slice(&truth, k)?, 1))
            .collect::<Result<_>>()?;
        Ok(Evaluation {
            overall,
            per_horizon,
            windows: windows.len(),
        })
    }
}

/// `x[:, :, k]` of a `W×N×L` tensor as `W×N`.
fn horizon_slice(x: &Tensor, k: usize) -> Result<Tensor> {
    let s = x.shape();
    let data = x.data().chunks(s[2]).map(|c| c[k]).collect();
    Tensor::new(&[s[0], s[1]], data)
}
