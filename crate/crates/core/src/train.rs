//! Mini-batch training with momentum SGD, and evaluation into a confusion
//! matrix.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Sgd, Tensor};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{derive_seed, Mode, ThreeStreamModel};
use crate::skeleton::SkeletonClip;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// epochs; 0 keeps it constant.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            lr_decay_every: 0,
            lr_decay_factor: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent.
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// `epoch,train_loss,val_accuracy` rows under a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_accuracy\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_accuracy);
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Trains in place. Each epoch shuffles the training set (seeded), steps
/// once per mini-batch on the mean loss, then records mean training loss
/// and validation accuracy. The final model is the last epoch's.
pub fn train(
    model: &mut ThreeStreamModel,
    train_set: &[SkeletonClip],
    val_set: &[SkeletonClip],
    hp: &Hyperparams,
) -> Result<History> {
    train_with(model, train_set, val_set, hp, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &mut ThreeStreamModel,
    train_set: &[SkeletonClip],
    val_set: &[SkeletonClip],
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    if hp.batch_size == 0 || hp.batch_size > train_set.len() {
        return Err(Error::invalid(format!(
            "batch size {} must be in 1..={}",
            hp.batch_size,
            train_set.len()
        )));
    }
    let mut opt = Sgd::new(model.params(), hp.learning_rate, hp.momentum);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hp.epochs {
        if hp.lr_decay_every > 0 && epoch > 1 && (epoch - 1) % hp.lr_decay_every == 0 {
            opt.learning_rate *= hp.lr_decay_factor;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[hp.seed, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, indices) in order.chunks(hp.batch_size).enumerate() {
            let mut grads: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for &i in indices {
                let clip = &train_set[i];
                let seed = derive_seed(&[hp.seed, epoch as u64, batch as u64, i as u64]);
                let (loss, g) = model.loss_and_gradients(&clip.data, clip.label, Mode::Train { seed })?;
                batch_loss += loss;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.axpy(1.0, b)),
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    loss: batch_loss,
                });
            }
            let mut grads = grads.expect("non-empty batch");
            let scale = 1.0 / indices.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(scale));
            opt.step(model.params_mut(), &grads)?;
            loss_sum += batch_loss;
        }
        let cm = evaluate(model, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy: 100.0 * cm.trace() as f64 / cm.total() as f64,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Argmax predictions in evaluation mode (no masking, no dropout).
pub fn evaluate(model: &ThreeStreamModel, test_set: &[SkeletonClip]) -> Result<ConfusionMatrix> {
    if test_set.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    for clip in test_set {
        if clip.label >= cm.classes() {
            return Err(Error::invalid(format!(
                "label {} outside the model's {} classes",
                clip.label,
                cm.classes()
            )));
        }
        let p = model.predict(&clip.data)?;
        cm.record(clip.label, argmax(&p));
    }
    Ok(cm)
}
