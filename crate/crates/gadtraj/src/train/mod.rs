//! The training loop: per epoch a batched pass over the train split with
//! the fixed target p = 0, a full validation pass, best-checkpoint
//! selection on validation loss, reduce-on-plateau scheduling and early
//! stopping; the best model then scores the test split.

mod adam;
mod sched;

pub use adam::Adam;
pub use sched::{PlateauScheduler, LR_FLOOR};

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::{ScalerParams, Setting, SplitBundle};
use crate::error::TrainError;
use crate::model::{bce_loss_value, score_groups, ForwardMode, GroupScorer, ModelOutput};
use crate::seeds::mix_seed;
use crate::tensor::clip_grad_norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Train/valid/test fractions, recorded for provenance (splitting
    /// happens upstream).
    pub ratios: (f64, f64, f64),
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub clip_max_norm: Option<f64>,
    pub seed: u64,
    pub setting: Setting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ratios: (0.6, 0.2, 0.2),
            lr: 1e-5,
            weight_decay: 1e-5,
            betas: (0.9, 0.999),
            epochs: 100,
            batch_size: 25,
            patience: 10,
            clip_max_norm: Some(1.0),
            seed: 0,
            setting: Setting::Unsupervised,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr <= 0.0 {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if let Some(c) = self.clip_max_norm {
            if c <= 0.0 {
                return Err(TrainError::Config(format!("clip max norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Scheduler patience: half the early-stopping patience, rounded up.
    pub fn sched_patience(&self) -> usize {
        self.patience.div_ceil(2).max(1)
    }
}

/// Best-checkpoint bookkeeping, scheduling and early stopping for one
/// observed validation loss per epoch. Factored out so the state machine
/// can be driven by scripted loss sequences in tests.
#[derive(Debug, Clone)]
pub struct EpochController {
    best_loss: f64,
    earlystop: usize,
    patience: usize,
    sched: PlateauScheduler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochDecision {
    /// Strictly improved on the best validation loss: checkpoint now.
    pub new_best: bool,
    pub lr: f64,
    pub earlystop: usize,
    pub stop: bool,
}

impl EpochController {
    pub fn new(lr: f64, patience: usize, sched_patience: usize) -> Self {
        EpochController {
            best_loss: f64::INFINITY,
            earlystop: 0,
            patience,
            sched: PlateauScheduler::new(lr, 0.5, sched_patience),
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    /// Observe one epoch's validation loss. Equal losses count as
    /// non-improvement; the counter resets only on strict improvement.
    pub fn observe(&mut self, val_loss: f64) -> EpochDecision {
        let new_best = val_loss < self.best_loss;
        if new_best {
            self.best_loss = val_loss;
            self.earlystop = 0;
        }
        let lr = self.sched.step(val_loss);
        if !new_best {
            self.earlystop += 1;
        }
        EpochDecision { new_best, lr, earlystop: self.earlystop, stop: self.earlystop > self.patience }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_train: f64,
    pub loss_valid: f64,
    pub lr: f64,
    pub earlystop: usize,
}

#[derive(Debug, Clone)]
pub struct SplitOutputs {
    pub train: ModelOutput,
    pub valid: ModelOutput,
    pub test: ModelOutput,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    /// Scores recorded at the best epoch (train in training mode, valid in
    /// eval mode) plus the test split scored by the best model.
    pub scores: SplitOutputs,
    pub loss_train: f64,
    pub loss_valid: f64,
    pub loss_test: f64,
}

/// Optional sinks: a JSON-lines log and a directory receiving a checkpoint
/// at every best-validation event.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub log: Option<&'a mut dyn Write>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Stored inside checkpoints so scoring raw data stays consistent.
    pub scaler: Option<ScalerParams>,
}

/// Algorithm: loop over epochs while the early-stop counter stays within
/// patience; per epoch run shuffled training batches (forward, loss against
/// the fixed target 0, backward, clip, optimizer step), validate in eval
/// mode, keep the best model by validation loss, step the scheduler; after
/// the loop the best model scores the test split.
pub fn train(
    model: &mut dyn GroupScorer,
    bundle: &SplitBundle,
    cfg: &TrainConfig,
    hooks: &mut TrainHooks,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if bundle.train.is_empty() || bundle.valid.is_empty() {
        return Err(TrainError::Config("train and valid splits must be non-empty".into()));
    }

    let train_groups = bundle.train.padded_groups();
    let valid_groups = bundle.valid.padded_groups();
    let test_groups = bundle.test.padded_groups();

    let mut adam = Adam::new(model.params(), cfg.betas);
    let mut controller = EpochController::new(cfg.lr, cfg.patience, cfg.sched_patience());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xD509));

    let mut history: Vec<EpochStats> = Vec::new();
    let mut best: Option<(usize, crate::model::ParamSet, Vec<f64>, f64, ModelOutput)> = None;
    let mut lr = cfg.lr;

    let mut epoch = 0usize;
    while epoch < cfg.epochs {
        // Shuffled batches, reseeded per epoch.
        let mut order: Vec<usize> = (0..train_groups.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5F1E + epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut train_scores = vec![0.0; train_groups.len()];
        let mut loss_sum = 0.0;
        for (batch_no, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<_> = batch_idx.iter().map(|&i| train_groups[i].clone()).collect();
            let mut tape = crate::tensor::Tape::new();
            let fwd = model.forward_batch(
                &mut tape,
                &batch,
                &mut ForwardMode::Train { dropout_rng: &mut dropout_rng },
                None,
            )?;
            let p_vec = tape.stack_scalars(&fwd.p_vars);
            let loss = tape.bce_fixed_zero(p_vec);
            let loss_value = tape.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_no });
            }
            loss_sum += loss_value * batch.len() as f64;
            for (&idx, &pv) in batch_idx.iter().zip(&fwd.p_vars) {
                train_scores[idx] = tape.scalar_value(pv);
            }
            tape.backward(loss).map_err(|e| TrainError::Config(e.to_string()))?;
            let mut grads = fwd.bound.gradients(&tape);
            if let Some(max_norm) = cfg.clip_max_norm {
                clip_grad_norm(&mut grads, max_norm);
            }
            adam.step(model.params_mut(), &grads, lr, cfg.weight_decay);
        }
        let loss_train = loss_sum / train_groups.len() as f64;

        // Full-batch validation in eval mode.
        let valid_out = score_groups(model, &valid_groups, false)?;
        let loss_valid = bce_loss_value(&valid_out.p_hat);
        if !loss_valid.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: usize::MAX });
        }

        let decision = controller.observe(loss_valid);
        lr = decision.lr;
        if decision.new_best {
            best = Some((epoch, model.params().clone(), train_scores, loss_train, valid_out));
            if let Some(dir) = &hooks.checkpoint_dir {
                let ckpt = Checkpoint::from_model(
                    model,
                    hooks.scaler.clone(),
                    CheckpointMeta {
                        seed: cfg.seed,
                        setting: Some(cfg.setting),
                        best_epoch: Some(epoch),
                        val_loss: Some(loss_valid),
                        epochs_run: Some(epoch + 1),
                    },
                );
                let path = dir.join(format!("best_epoch{epoch:04}.ckpt.json"));
                ckpt.save(&path)?;
            }
        }

        let stats = EpochStats {
            epoch,
            loss_train,
            loss_valid,
            lr,
            earlystop: decision.earlystop,
        };
        if let Some(log) = hooks.log.as_deref_mut() {
            let line = serde_json::to_string(&stats).expect("stats serialize");
            writeln!(log, "{line}")
                .map_err(|source| TrainError::Io { path: PathBuf::from("<train log>"), source })?;
        }
        history.push(stats);

        epoch += 1;
        if decision.stop {
            break;
        }
    }

    let (best_epoch, best_params, best_train_scores, best_loss_train, best_valid_out) =
        best.expect("at least one epoch ran");

    // Restore the best parameters so the model handed back is the best one.
    restore_params(model, best_params);

    let test_out = score_groups(model, &test_groups, false)?;
    let loss_test = if test_out.p_hat.is_empty() { 0.0 } else { bce_loss_value(&test_out.p_hat) };
    let loss_valid = history[best_epoch].loss_valid;

    let train_out = ModelOutput {
        ids: bundle.train.ids(),
        labels: bundle.train.labels(),
        p_hat: best_train_scores,
        z: Vec::new(),
        attention: None,
    };

    Ok(TrainResult {
        history,
        best_epoch,
        scores: SplitOutputs { train: train_out, valid: best_valid_out, test: test_out },
        loss_train: best_loss_train,
        loss_valid,
        loss_test,
    })
}

fn restore_params(model: &mut dyn GroupScorer, saved: crate::model::ParamSet) {
    let params = model.params_mut();
    debug_assert_eq!(params.len(), saved.len());
    for (dst, src) in params.tensors_mut().zip(saved.entries()) {
        dst.data.copy_from_slice(&src.tensor.data);
    }
}

#[cfg(test)]
mod tests;
