//! The three detector families and their training loops.

pub mod autoencoder;
pub mod checkpoint;
pub mod cnn;
pub mod forest;
pub mod lstm;

use serde::{Deserialize, Serialize};

pub use autoencoder::{
    ae_features, train_autoencoder, AutoencoderModel, AE_FEATURE_LEN, AE_WIDTHS,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointPayload};
pub use cnn::{train_cnn, windows_to_tensor, CnnConfig, CnnModel};
pub use forest::{train_random_forest, ForestConfig, RandomForest};
pub use lstm::{sequences_to_tensor, train_lstm, LstmModel, LstmStreamState};

/// Optimizer/schedule knobs shared by the gradient-trained models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Reconstruction training: few epochs over a large, redundant window set.
    pub fn autoencoder_default(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            patience: 5,
            max_epochs: 15,
            seed,
        }
    }

    /// Grid-classifier training.
    pub fn cnn_default(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 3e-6,
            batch_size: 32,
            patience: 10,
            max_epochs: 200,
            seed,
        }
    }

    /// Sequence-classifier training.
    pub fn lstm_default(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            patience: 10,
            max_epochs: 100,
            seed,
        }
    }
}

/// One line of the training curve CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best_val: f64,
    stale: usize,
    pub best_epoch: usize,
}

/// What [`EarlyStopper::observe`] wants the loop to do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// New best: snapshot the parameters, keep going.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_val: f64::INFINITY,
            stale: 0,
            best_epoch: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best_val {
            self.best_val = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_val(&self) -> f64 {
        self.best_val
    }
}

/// Seeded index shuffle for one training epoch.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::stream(
        seed,
        epoch as u64,
        crate::rng::StreamTag::BatchShuffle,
    ));
    order
}
