use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_with, train_model, Init, TrainConfig, TrainOutcome};
use crate::error::{config, Error, Result};
use crate::fno::Fno;
use crate::pde::Sample;
use crate::scalar::Scalar;

/// Five log-spaced rates spanning `[1e-4, 1e-2]`.
pub fn default_lr_grid() -> Vec<f64> {
    (0..5).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Completed { val_error: f64, val_loss: f64, best_epoch: usize },
    Diverged { detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub lr: f64,
    pub batch_size: usize,
    #[serde(flatten)]
    pub status: TrialStatus,
}

#[derive(Clone, Debug)]
pub struct GridSearch<T> {
    pub best: TrainConfig,
    pub outcome: TrainOutcome<T>,
    pub trials: Vec<Trial>,
}

/// Trains one model per (lr, batch) cell and keeps the one with the lowest
/// validation relative error. Diverged cells are recorded, not fatal.
pub fn grid_search<T: Scalar>(
    init: &Init<T>,
    train: &[Sample],
    val: &[Sample],
    base: &TrainConfig,
    lr_grid: &[f64],
    batch_grid: &[usize],
    dataset_id: &str,
) -> Result<GridSearch<T>> {
    if lr_grid.is_empty() || batch_grid.is_empty() {
        return Err(config("grid search needs non-empty grids"));
    }
    let cells: Vec<TrainConfig> = lr_grid
        .iter()
        .flat_map(|&lr0| batch_grid.iter().map(move |&batch_size| TrainConfig { lr0, batch_size, ..*base }))
        .collect();
    let runs: Vec<Result<(Trial, Option<(f64, TrainOutcome<T>)>)>> = cells
        .par_iter()
        .map(|cfg| {
            let outcome = match train_model(init.clone(), train, val, cfg, dataset_id) {
                Ok(o) => o,
                Err(Error::Divergence { epoch, detail }) => {
                    log::warn!("lr {:.3e} batch {} diverged at epoch {epoch}", cfg.lr0, cfg.batch_size);
                    let trial = Trial {
                        lr: cfg.lr0,
                        batch_size: cfg.batch_size,
                        status: TrialStatus::Diverged { detail },
                    };
                    return Ok((trial, None));
                }
                Err(e) => return Err(e),
            };
            let ckpt = &outcome.checkpoint;
            let fno = Fno::new(ckpt.config, val[0].h, val[0].w)?;
            let val_error = evaluate_with(&fno, &ckpt.params, &ckpt.refs, val)?;
            let trial = Trial {
                lr: cfg.lr0,
                batch_size: cfg.batch_size,
                status: TrialStatus::Completed {
                    val_error,
                    val_loss: ckpt.provenance.best_val_loss.unwrap_or(f64::NAN),
                    best_epoch: ckpt.provenance.best_epoch.unwrap_or(0),
                },
            };
            Ok((trial, Some((val_error, outcome))))
        })
        .collect();

    let mut trials = Vec::with_capacity(cells.len());
    let mut best: Option<(f64, TrainConfig, TrainOutcome<T>)> = None;
    for (cfg, run) in cells.iter().zip(runs) {
        let (trial, result) = run?;
        trials.push(trial);
        if let Some((err, outcome)) = result {
            if best.as_ref().is_none_or(|b| err < b.0) {
                best = Some((err, *cfg, outcome));
            }
        }
    }
    let (_, best, outcome) = best.ok_or(Error::SearchFailure)?;
    Ok(GridSearch { best, outcome, trials })
}
