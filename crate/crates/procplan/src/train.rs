//! Teacher-forced training loop: seeded epoch shuffles, Adam updates, a
//! per-epoch train/test loss history, and checkpoints for both the
//! best-by-test-loss and the final epoch. Everything is single-threaded and
//! derived from one seed, so a run is reproducible bit for bit and an
//! interrupted run resumed from its checkpoint matches an uninterrupted one.

use crate::envgen::{derive_seed, Dataset};
use crate::model::{Checkpoint, ModelError, CHECKPOINT_FORMAT_VERSION};
use crate::numcore::{AdamState, NumError, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("dataset has no training trajectories")]
    EmptyTrainSet,
    #[error("dataset has no held-out trajectories")]
    EmptyTestSet,
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}; aborting before the update")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Total epochs the run should reach (a resumed run counts prior ones).
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for a fresh optimizer; a resumed optimizer keeps the
    /// rate it was created with.
    pub lr: f64,
    /// Master seed; per-epoch shuffle and dropout streams are derived from
    /// it, so resumption does not shift them.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, batch_size: 32, lr: 1e-4, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

pub struct TrainOutcome {
    /// Stats for the epochs executed by this call, in order.
    pub history: Vec<EpochStats>,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

fn check_finite_loss(value: f64, epoch: usize, batch: usize) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFiniteLoss { epoch, batch, value })
    }
}

/// Mean teacher-forced loss over a trajectory slice, batched to keep tapes
/// small, no dropout. Used for the held-out curve and final reporting.
pub fn evaluate_loss(
    checkpoint: &Checkpoint,
    trajectories: &[crate::envgen::Trajectory],
    batch_size: usize,
) -> Result<f64, TrainError> {
    if trajectories.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let mut total = 0.0;
    for chunk in trajectories.chunks(batch_size.max(1)) {
        let batch: Vec<&_> = chunk.iter().collect();
        let mut tape = Tape::new();
        let loss = checkpoint.model.training_loss(&mut tape, &batch, None)?;
        total += tape.value(loss).scalar_value()? * chunk.len() as f64;
    }
    Ok(total / trajectories.len() as f64)
}

/// Run `start` up to `config.epochs` total epochs on the dataset's split.
/// A fresh run begins from [`Checkpoint::fresh`]; passing a saved
/// checkpoint resumes it, optimizer step counter included.
pub fn train(
    start: Checkpoint,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let train_set = dataset.train();
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if dataset.test().is_empty() {
        return Err(TrainError::EmptyTestSet);
    }

    let mut current = start;
    let mut adam = match current.adam.take() {
        Some(state) => state,
        None => AdamState::with_lr(&current.model.store, config.lr),
    };
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::new();

    for epoch in current.epoch + 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle", epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "dropout", epoch as u64));

        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
            let batch: Vec<&_> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut tape = Tape::new();
            let loss =
                current
                    .model
                    .training_loss(&mut tape, &batch, Some(&mut dropout_rng))?;
            let value = tape.value(loss).scalar_value()?;
            check_finite_loss(value, epoch, batch_idx)?;
            epoch_loss += value * chunk.len() as f64;

            let grads = tape.backward(loss)?;
            let param_grads = tape.param_grads(&grads);
            adam.apply(&mut current.model.store, &param_grads)?;
        }

        current.epoch = epoch;
        current.adam = Some(adam.clone());
        let test_loss = evaluate_loss(&current, dataset.test(), config.batch_size)?;
        check_finite_loss(test_loss, epoch, usize::MAX)?;
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            test_loss,
        });

        if test_loss < current.best_test_loss {
            current.best_test_loss = test_loss;
            best = Some(current.clone());
        }
        current.adam = None; // reclaimed next iteration from `adam`
    }

    current.adam = Some(adam);
    let best = best.unwrap_or_else(|| current.clone());
    Ok(TrainOutcome { history, best, last: current })
}

/// Fresh training state for a model, before any epochs.
pub fn fresh_checkpoint(
    model: crate::model::ModelBundle,
    dataset_hash: String,
    experiment_hash: String,
) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_FORMAT_VERSION,
        dataset_hash,
        experiment_hash,
        epoch: 0,
        // Not +inf: the checkpoint must survive a JSON round trip.
        best_test_loss: f64::MAX,
        model,
        adam: None,
    }
}

pub fn loss_curve_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,test_loss\n");
    for s in history {
        writeln!(out, "{},{},{}", s.epoch, s.train_loss, s.test_loss).unwrap();
    }
    out
}
