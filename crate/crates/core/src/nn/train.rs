//! Generic minibatch training loop and finite-difference gradient check for
//! binary classifiers with hand-written backward passes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{bce_with_logits, sigmoid};
use super::optim::{Adam, EarlyStopping, PlateauScheduler, StopDecision};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// A binary classifier over some input `I` (a feature matrix, or features
/// plus a graph). Labels are indexed by row/node.
pub trait Classifier<I: ?Sized> {
    fn parameters(&self) -> Vec<&Tensor2>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor2>;

    /// Raw logits for every row of the input.
    fn logits(&self, input: &I) -> Result<Vec<f64>>;

    /// Mean BCE over `nodes` and its gradient for each parameter, in
    /// `parameters()` order.
    fn loss_and_grads(
        &self,
        input: &I,
        nodes: &[usize],
        labels: &[u8],
        pos_weight: f64,
    ) -> Result<(f64, Vec<Tensor2>)>;

    fn loss(&self, input: &I, nodes: &[usize], labels: &[u8], pos_weight: f64) -> Result<f64> {
        let logits = self.logits(input)?;
        let z: Vec<f64> = nodes.iter().map(|&i| logits[i]).collect();
        let y: Vec<u8> = nodes.iter().map(|&i| labels[i]).collect();
        Ok(bce_with_logits(&z, &y, pos_weight)?.0)
    }

    fn predict(&self, input: &I) -> Result<Vec<f64>> {
        Ok(self.logits(input)?.into_iter().map(sigmoid).collect())
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.data().len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub min_lr: f64,
    pub seed: u64,
    /// Weight on positive-class loss terms; `None` means 1.
    pub pos_weight: Option<f64>,
}

impl TrainConfig {
    pub fn with_lr(lr: f64, seed: u64) -> Self {
        TrainConfig {
            lr,
            batch_size: 256,
            max_epochs: 100,
            plateau_patience: 5,
            early_stop_patience: 10,
            min_lr: 1e-6,
            seed,
            pos_weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored at the end of training.
    pub best_epoch: usize,
}

impl History {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "epoch,train_loss,val_loss,val_accuracy,lr")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.lr)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Train with Adam on shuffled minibatches of `train` nodes. Validation loss
/// drives the plateau schedule and early stopping; the best-validation
/// parameters are restored before returning.
pub fn fit<I: ?Sized, M: Classifier<I>>(
    model: &mut M,
    input: &I,
    labels: &[u8],
    train: &[usize],
    val: &[usize],
    config: &TrainConfig,
) -> Result<History> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("train and validation sets must be non-empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let pos_weight = config.pos_weight.unwrap_or(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4521);
    let mut adam = Adam::new(config.lr);
    let mut scheduler = PlateauScheduler::new(config.lr, config.plateau_patience, config.min_lr);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut best_params: Vec<Tensor2> = model.parameters().into_iter().cloned().collect();
    let mut history = History::default();
    let mut order = train.to_vec();
    let val_labels: Vec<u8> = val.iter().map(|&i| labels[i]).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = model.loss_and_grads(input, batch, labels, pos_weight)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            adam.step(&mut model.parameters_mut(), &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;

        let logits = model.logits(input)?;
        let val_logits: Vec<f64> = val.iter().map(|&i| logits[i]).collect();
        let (val_loss, _) = bce_with_logits(&val_logits, &val_labels, pos_weight)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let correct = val_logits
            .iter()
            .zip(&val_labels)
            .filter(|(&z, &y)| u8::from(z > 0.0) == y)
            .count();
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: correct as f64 / val.len() as f64,
            lr: adam.lr,
        });

        let decision = stopper.step(val_loss);
        if decision == StopDecision::Improved {
            best_params = model.parameters().into_iter().cloned().collect();
            history.best_epoch = epoch;
        }
        if decision == StopDecision::Stop {
            break;
        }
        adam.lr = scheduler.step(val_loss);
    }

    for (p, best) in model.parameters_mut().into_iter().zip(best_params) {
        *p = best;
    }
    Ok(history)
}

pub const FD_STEP: f64 = 1e-5;
/// Differences below this are treated as agreement (dead or vanishing paths).
pub const FD_ABS_TOLERANCE: f64 = 1e-8;

/// Largest relative error between the analytic gradient of the loss over
/// `nodes` and central finite differences, across every parameter entry.
pub fn gradient_check<I: ?Sized, M: Classifier<I>>(
    model: &mut M,
    input: &I,
    nodes: &[usize],
    labels: &[u8],
) -> Result<f64> {
    let (_, analytic) = model.loss_and_grads(input, nodes, labels, 1.0)?;
    let mut worst = 0.0f64;
    for (p_idx, grad) in analytic.iter().enumerate() {
        for e in 0..grad.data().len() {
            let original = model.parameters()[p_idx].data()[e];
            model.parameters_mut()[p_idx].data_mut()[e] = original + FD_STEP;
            let up = model.loss(input, nodes, labels, 1.0)?;
            model.parameters_mut()[p_idx].data_mut()[e] = original - FD_STEP;
            let down = model.loss(input, nodes, labels, 1.0)?;
            model.parameters_mut()[p_idx].data_mut()[e] = original;

            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.data()[e];
            let diff = (a - numeric).abs();
            if diff > FD_ABS_TOLERANCE {
                worst = worst.max(diff / a.abs().max(numeric.abs()));
            }
        }
    }
    Ok(worst)
}
