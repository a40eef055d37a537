use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, cosine_lr, loss_and_grad, Checkpoint, OptimizerState, Prepared, Provenance, TrainConfig, TrainMode};
use crate::error::{config, Error, Result};
use crate::fno::{init_params, Fno, FnoConfig, FnoParams};
use crate::normalize::{fit_references, NormalizationReferences};
use crate::pde::Sample;
use crate::scalar::Scalar;

/// Losses this many times the initial validation loss count as divergence.
pub const BLOWUP_RATIO: f64 = 1e8;
const SHUFFLE_TAG: u64 = 0x5348_5546_464c_4531;
const INIT_TAG: u64 = 0x494e_4954_5041_524d;

/// Where training starts.
#[derive(Clone, Debug)]
pub enum Init<T> {
    /// Seeded initialization; references fitted on the training split.
    Scratch(FnoConfig),
    /// Explicit starting parameters; references fitted on the training split.
    Params(FnoParams<T>),
    /// Pre-trained checkpoint; its references are reused.
    Checkpoint(Checkpoint<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub log: Vec<EpochLog>,
    pub initial_val_loss: f64,
}

impl<T> TrainOutcome<T> {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        if self.log.is_empty() {
            wtr.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
        }
        for row in &self.log {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// The seeded initialization `train_model` starts from in scratch mode.
pub fn scratch_params<T: Scalar>(config: FnoConfig, seed: u64) -> Result<FnoParams<T>> {
    init_params(config, &mut ChaCha8Rng::seed_from_u64(seed ^ INIT_TAG))
}

/// `||pred - target|| / ||target||`; `None` for a zero target.
pub fn relative_error<T: Scalar>(pred: &[T], target: &[T]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        num += (p - t).f64().powi(2);
        den += t.f64().powi(2);
    }
    (den > 0.0).then(|| (num / den).sqrt())
}

/// Mean relative L2 error over `samples`.
pub fn evaluate_with<T: Scalar>(fno: &Fno<T>, params: &FnoParams<T>, refs: &NormalizationReferences, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(config("evaluation split is empty"));
    }
    let errors: Vec<Result<Option<f64>>> = samples
        .par_iter()
        .map(|s| {
            let ex = Prepared::<T>::from_sample(s, refs)?;
            let pred = fno.forward_raw(params, &ex.input)?;
            Ok(relative_error(&pred, &ex.target))
        })
        .collect();
    let mut sum = 0.0;
    let mut used = 0usize;
    for e in errors {
        match e? {
            Some(v) => {
                sum += v;
                used += 1;
            }
            None => log::warn!("zero-norm target excluded from evaluation"),
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every evaluation target has zero norm".into()));
    }
    Ok(sum / used as f64)
}

pub fn evaluate<T: Scalar>(ckpt: &Checkpoint<T>, samples: &[Sample]) -> Result<f64> {
    let first = samples.first().ok_or_else(|| config("evaluation split is empty"))?;
    let fno = Fno::new(ckpt.config, first.h, first.w)?;
    evaluate_with(&fno, &ckpt.params, &ckpt.refs, samples)
}

fn validation_loss<T: Scalar>(fno: &Fno<T>, params: &FnoParams<T>, refs: &NormalizationReferences, samples: &[Sample]) -> Result<f64> {
    let (h, w) = fno.grid();
    let sums: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let ex = Prepared::<T>::from_sample(s, refs)?;
            let pred = fno.forward_raw(params, &ex.input)?;
            Ok(pred.iter().zip(&ex.target).map(|(&p, &t)| (p - t).f64().powi(2)).sum::<f64>())
        })
        .collect();
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / (samples.len() * h * w) as f64)
}

fn grid_of(train: &[Sample], val: &[Sample]) -> Result<(usize, usize)> {
    let first = train.first().or(val.first()).ok_or_else(|| config("no examples"))?;
    let (h, w) = (first.h, first.w);
    if train.iter().chain(val).any(|s| s.h != h || s.w != w) {
        return Err(config("examples on mixed grids"));
    }
    Ok((h, w))
}

/// Trains with Adam and per-epoch cosine annealing and returns the
/// parameters with the lowest validation loss (epoch 0 is the start point).
pub fn train_model<T: Scalar>(
    init: Init<T>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    dataset_id: &str,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (params, refs, mode) = match init {
        Init::Checkpoint(ckpt) => {
            if train.is_empty() {
                return Ok(TrainOutcome {
                    initial_val_loss: ckpt.provenance.best_val_loss.unwrap_or(f64::NAN),
                    checkpoint: ckpt,
                    log: Vec::new(),
                });
            }
            (ckpt.params, ckpt.refs, TrainMode::FineTune)
        }
        Init::Scratch(fc) => {
            if train.is_empty() {
                return Err(config("training from scratch needs a non-empty training split"));
            }
            (scratch_params(fc, cfg.seed)?, fit_references(train, dataset_id)?, TrainMode::FromScratch)
        }
        Init::Params(p) => {
            if train.is_empty() {
                return Err(config("training from scratch needs a non-empty training split"));
            }
            (p, fit_references(train, dataset_id)?, TrainMode::FromScratch)
        }
    };
    if mode != cfg.mode {
        return Err(config(format!("mode {:?} does not match the initialization", cfg.mode)));
    }
    if val.is_empty() {
        return Err(config("training needs a non-empty validation split"));
    }
    let (h, w) = grid_of(train, val)?;
    let fno = Fno::new(params.config, h, w)?;

    let initial_val_loss = validation_loss(&fno, &params, &refs, val)?;
    let limit = BLOWUP_RATIO * initial_val_loss.max(f64::MIN_POSITIVE);
    let mut best = (initial_val_loss, 0usize, params.clone());
    let mut params = params;
    let mut state = OptimizerState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_TAG);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let diverged = |epoch: usize, log: &[EpochLog], what: String| Error::Divergence {
        epoch,
        detail: format!("{what} after {} completed epochs (last val loss {:?})", log.len(), log.last().map(|r| r.val_loss)),
    };

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)?;
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = idx
                .iter()
                .map(|&i| Prepared::from_sample(&train[i], &refs))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = match loss_and_grad(&fno, &params, &batch) {
                Err(Error::Divergence { detail, .. }) => return Err(diverged(epoch + 1, &log, detail)),
                other => other?,
            };
            if loss > limit {
                return Err(diverged(epoch + 1, &log, format!("loss {loss:.3e} exceeds {limit:.3e}")));
            }
            sse += loss * batch.len() as f64;
            adam_step(&mut params, &grads, &mut state, lr);
        }
        let train_loss = sse / train.len() as f64;
        let val_loss = validation_loss(&fno, &params, &refs, val)?;
        if !val_loss.is_finite() || val_loss > limit {
            return Err(diverged(epoch + 1, &log, format!("validation loss {val_loss:.3e}")));
        }
        log::debug!("epoch {} train {train_loss:.4e} val {val_loss:.4e} lr {lr:.3e}", epoch + 1);
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            lr,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch + 1, params.clone());
        }
    }

    let (best_val_loss, best_epoch, best_params) = best;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: best_params.config,
            params: best_params,
            refs,
            provenance: Provenance {
                dataset_id: dataset_id.to_string(),
                train_config: Some(*cfg),
                best_val_loss: Some(best_val_loss),
                best_epoch: Some(best_epoch),
                grid: [h, w],
            },
        },
        log,
        initial_val_loss,
    })
}
