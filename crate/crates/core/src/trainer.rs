//! Softmax cross-entropy, Adam with per-epoch learning-rate decay and
//! decoupled weight decay, and the mini-batch training loop with
//! validation-based model selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datasets::{EmbeddingDataset, Split};
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::rng::{self, TAG_EVAL, TAG_SHUFFLE, TAG_TRAIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable classification model over embedding vectors.
///
/// Parameters live in one flat vector so a single optimizer serves every
/// model. `loss_and_gradient` is only valid in [`Mode::Train`]; `predict`
/// never mutates state (batch-norm layers use their running statistics).
pub trait Classifier: Send + Sync {
    fn kind(&self) -> &'static str;
    fn num_classes(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn mode(&self) -> Mode;
    fn set_mode(&mut self, mode: Mode);

    /// Mean loss and mean gradient over the batch. `seeds[i]` drives all
    /// randomness for sample `i`.
    fn loss_and_gradient(
        &mut self,
        xs: &[&[f64]],
        labels: &[usize],
        noise: &NoiseModel,
        seeds: &[u64],
    ) -> Result<(f64, Vec<f64>)>;

    fn predict(&self, xs: &[&[f64]], noise: &NoiseModel, seeds: &[u64]) -> Result<Vec<Vec<f64>>>;

    fn to_checkpoint(&self) -> Checkpoint;
    fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()>;

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// `-log softmax(logits)[label]` and its gradient with respect to the logits.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::config(format!("cross-entropy needs k >= 2 classes, got {k}")));
    }
    if label >= k {
        return Err(Error::config(format!("label {label} out of range for {k} classes")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let top = argmax(logits);
    let rest: f64 = exps.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, e)| e).sum();
    let sum = 1.0 + rest;
    let loss = rest.ln_1p() - (logits[label] - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / sum - if i == label { 1.0 } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            weight_decay: 0.0,
            batch_size: 16,
            epochs: 800,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config(format!("lr_decay {} outside (0, 1]", self.lr_decay)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("weight_decay {} must be >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam step at rate `L * gamma^epoch`, preceded by decoupled weight
/// decay `theta *= 1 - rate * rho`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::config(format!(
            "adam shapes differ: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let lr = config.learning_rate_at(epoch);
    state.t += 1;
    let bc1 = 1.0 - AdamState::BETA1.powi(state.t as i32);
    let bc2 = 1.0 - AdamState::BETA2.powi(state.t as i32);
    let decay = 1.0 - lr * config.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = AdamState::BETA1 * state.m[i] + (1.0 - AdamState::BETA1) * g;
        state.v[i] = AdamState::BETA2 * state.v[i] + (1.0 - AdamState::BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] * decay - lr * m_hat / (v_hat.sqrt() + AdamState::EPS);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub num_params: usize,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (max validation accuracy, earliest on ties).
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    /// Splits touched, in order, as `(epoch, split)`; the test split appears
    /// only once, after model selection.
    #[serde(skip)]
    pub split_access: Vec<(usize, Split)>,
}

fn split_tag(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

/// Accuracy on `split`. `round` separates noise streams of repeated
/// evaluations (e.g. the epoch index).
pub fn evaluate(
    model: &dyn Classifier,
    data: &EmbeddingDataset,
    split: Split,
    noise: &NoiseModel,
    round: u64,
) -> Result<f64> {
    let idx = data.split_indices(split);
    if idx.is_empty() {
        return Err(Error::config(format!("{split:?} split is empty")));
    }
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| data.row(i)).collect();
    let xs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let seeds: Vec<u64> = idx
        .iter()
        .map(|&i| rng::derive_seed(noise.seed, &[TAG_EVAL, split_tag(split), round, i as u64]))
        .collect();
    let logits = model.predict(&xs, noise, &seeds)?;
    let correct = logits
        .iter()
        .zip(idx)
        .filter(|(l, &i)| argmax(l) == data.labels[i] as usize)
        .count();
    Ok(correct as f64 / idx.len() as f64)
}

pub fn train(
    model: &mut dyn Classifier,
    data: &EmbeddingDataset,
    config: &TrainConfig,
    noise: &NoiseModel,
) -> Result<TrainReport> {
    train_with_progress(model, data, config, noise, |_| {})
}

pub fn train_with_progress(
    model: &mut dyn Classifier,
    data: &EmbeddingDataset,
    config: &TrainConfig,
    noise: &NoiseModel,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    config.validate()?;
    noise.validate()?;
    for split in [Split::Train, Split::Val, Split::Test] {
        if data.split_indices(split).is_empty() {
            return Err(Error::config(format!("{split:?} split is empty")));
        }
    }
    let mut adam = AdamState::new(model.num_params());
    let mut train_idx = data.split_indices(Split::Train).to_vec();
    let mut history = Vec::with_capacity(config.epochs);
    let mut access = Vec::new();
    let mut best: Option<(usize, f64, Checkpoint)> = None;

    for epoch in 0..config.epochs {
        model.set_mode(Mode::Train);
        access.push((epoch, Split::Train));
        train_idx.sort_unstable();
        train_idx.shuffle(&mut rng::stream(config.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, batch) in train_idx.chunks(config.batch_size).enumerate() {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| data.row(i)).collect();
            let xs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i] as usize).collect();
            let seeds: Vec<u64> = (0..batch.len())
                .map(|s| rng::derive_seed(noise.seed, &[TAG_TRAIN, epoch as u64, b as u64, s as u64]))
                .collect();
            let (loss, grad) = model.loss_and_gradient(&xs, &labels, noise, &seeds)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Data(format!("non-finite loss or gradient at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(model.params_mut(), &grad, &mut adam, config, epoch)?;
        }
        model.set_mode(Mode::Eval);
        access.push((epoch, Split::Val));
        let val_acc = evaluate(model, data, Split::Val, noise, epoch as u64)?;
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / train_idx.len() as f64,
            val_acc,
        };
        on_epoch(&metrics);
        history.push(metrics);
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, model.to_checkpoint()));
        }
    }

    let (best_epoch, best_val_acc, ckpt) = best.expect("epochs >= 1");
    model.load_checkpoint(&ckpt)?;
    model.set_mode(Mode::Eval);
    access.push((config.epochs, Split::Test));
    let test_acc = evaluate(model, data, Split::Test, noise, u64::MAX)?;
    Ok(TrainReport {
        model: model.kind().to_string(),
        num_params: model.num_params(),
        epochs: history,
        best_epoch,
        best_val_acc,
        test_acc,
        split_access: access,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_values() {
        let (l, _) = cross_entropy_loss(&[0.0, 0.0], 0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = cross_entropy_loss(&[10.0, -10.0], 0).unwrap();
        // ln(1 + e^-20)
        let expected = (-20f64).exp().ln_1p();
        assert!((l - expected).abs() < 1e-20);
        assert!((l - 2.06e-9).abs() < 1e-11);
        assert!(cross_entropy_loss(&[0.0, 1.0], 2).is_err());
        assert!(cross_entropy_loss(&[0.0], 0).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let logits = [0.3, -1.2, 2.0];
        let (_, g) = cross_entropy_loss(&logits, 1).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut up = logits;
            up[i] += h;
            let mut dn = logits;
            dn[i] -= h;
            let fd = (cross_entropy_loss(&up, 1).unwrap().0 - cross_entropy_loss(&dn, 1).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
        let mut p = vec![0.5, -2.0];
        let mut s = AdamState::new(2);
        for e in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, &cfg, e).unwrap();
        }
        assert_eq!(p, vec![0.5, -2.0]);
    }

    #[test]
    fn constant_rate_without_decay() {
        let cfg = TrainConfig { learning_rate: 0.003, lr_decay: 1.0, ..TrainConfig::default() };
        assert_eq!(cfg.learning_rate_at(0), cfg.learning_rate_at(700));
        let cfg = TrainConfig { lr_decay: 0.5, ..cfg };
        assert!((cfg.learning_rate_at(2) - 0.003 * 0.25).abs() < 1e-18);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let cfg = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        let mut hit = None;
        for step in 0..500 {
            let g = [2.0 * p[0]];
            adam_step(&mut p, &g, &mut s, &cfg, 0).unwrap();
            if hit.is_none() && p[0].abs() < 1e-3 {
                hit = Some(step);
            }
        }
        assert!(p[0].abs() < 1e-3, "theta = {}", p[0]);
        assert!(hit.is_some());
    }

    #[test]
    fn weight_decay_shrinks() {
        let cfg = TrainConfig { learning_rate: 0.1, weight_decay: 0.5, ..TrainConfig::default() };
        let mut p = vec![2.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[0.0], &mut s, &cfg, 0).unwrap();
        assert!((p[0] - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }
}
