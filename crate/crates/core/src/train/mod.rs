//! Loss and gradients, Adam with cosine annealing, the training loop with
//! best-on-validation selection, evaluation and learning-rate search.

mod checkpoint;
mod engine;
mod search;

pub use checkpoint::{Checkpoint, Provenance};
pub use engine::{evaluate, evaluate_with, relative_error, scratch_params, train_model, EpochLog, Init, TrainOutcome};
pub use search::{default_lr_grid, grid_search, GridSearch, Trial, TrialStatus};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::field::{ChannelStack, RealField};
use crate::fno::{Fno, FnoParams};
use crate::normalize::{channel_factors, normalize_stack, NormalizationReferences};
use crate::pde::Sample;
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Examples per gradient work unit; fixed so reductions are schedule independent.
const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrainMode {
    FromScratch,
    FineTune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" | "f32" => Ok(Precision::F32),
            "64" | "f64" => Ok(Precision::F64),
            other => Err(config(format!("unknown precision '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub precision: Precision,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, lr0: f64, batch_size: usize, epochs: usize, seed: u64) -> Self {
        Self {
            lr0,
            batch_size,
            epochs,
            seed,
            mode,
            precision: Precision::F64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || self.batch_size == 0 || self.epochs == 0 {
            return Err(config(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

/// `0.5 lr0 (1 + cos(pi t / T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64> {
    if t > total || total == 0 {
        return Err(config(format!("schedule step {t} outside 0..={total}")));
    }
    Ok(0.5 * lr0 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Scalar>(params: &mut FnoParams<T>, grads: &FnoParams<T>, state: &mut OptimizerState<T>, lr: f64) {
    assert_eq!(params.len(), grads.len(), "gradient shape mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state shape mismatch");
    state.t += 1;
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let c1 = T::of(1.0 - ADAM_BETA1.powi(state.t as i32));
    let c2 = T::of(1.0 - ADAM_BETA2.powi(state.t as i32));
    let (lr, eps) = (T::of(lr), T::of(ADAM_EPS));
    let one = T::one();
    for (((p, &g), m), v) in params
        .values
        .iter_mut()
        .zip(&grads.values)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// A normalized input with its target, ready for the network.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub input: Vec<T>,
    pub target: Vec<T>,
}

impl<T: Scalar> Prepared<T> {
    pub fn from_stack(stack: &ChannelStack<T>, target: &RealField<T>, refs: &NormalizationReferences) -> Result<Self> {
        Ok(Self {
            input: normalize_stack(stack, refs)?.values().to_vec(),
            target: target.values().to_vec(),
        })
    }

    pub fn from_sample(sample: &Sample, refs: &NormalizationReferences) -> Result<Self> {
        let stack = sample.stack::<T>();
        let factors = channel_factors(&stack, refs)?;
        let n = sample.h * sample.w;
        let mut input = stack.values().to_vec();
        for (ch, f) in factors.iter().enumerate() {
            let f = T::of(*f);
            for v in &mut input[ch * n..(ch + 1) * n] {
                *v = *v * f;
            }
        }
        Ok(Self {
            input,
            target: sample.target::<T>().into_values(),
        })
    }
}

/// Mean squared error over batch and grid, with the exact gradient.
pub fn loss_and_grad<T: Scalar>(fno: &Fno<T>, params: &FnoParams<T>, batch: &[Prepared<T>]) -> Result<(f64, FnoParams<T>)> {
    if batch.is_empty() {
        return Err(config("empty batch"));
    }
    let (h, w) = fno.grid();
    let scale = T::of(2.0 / (batch.len() * h * w) as f64);
    let partials: Vec<Result<(f64, Vec<T>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![T::zero(); params.len()];
            let mut sse = 0.0;
            for ex in chunk {
                let (pred, cache) = fno.forward_cached(params, &ex.input)?;
                let gout: Vec<T> = pred
                    .iter()
                    .zip(&ex.target)
                    .map(|(&p, &t)| {
                        let r = p - t;
                        sse += r.f64() * r.f64();
                        r * scale
                    })
                    .collect();
                fno.backward(params, &cache, &gout, &mut grad);
            }
            Ok((sse, grad))
        })
        .collect();
    let mut total = FnoParams::zeros(params.config);
    let mut sse = 0.0;
    for part in partials {
        let (s, g) = part?;
        sse += s;
        for (a, b) in total.values.iter_mut().zip(&g) {
            *a = *a + *b;
        }
    }
    let loss = sse / (batch.len() * h * w) as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            detail: format!("non-finite loss {loss}"),
        });
    }
    Ok((loss, total))
}

/// `mse_loss_and_grad` over raw stacks: normalizes, then differentiates the network.
pub fn mse_loss_and_grad<T: Scalar>(
    params: &FnoParams<T>,
    batch: &[(ChannelStack<T>, RealField<T>)],
    refs: &NormalizationReferences,
) -> Result<(f64, FnoParams<T>)> {
    let first = batch.first().ok_or_else(|| config("empty batch"))?;
    let fno = Fno::new(params.config, first.0.h(), first.0.w())?;
    let prepared = batch
        .iter()
        .map(|(s, t)| Prepared::from_stack(s, t, refs))
        .collect::<Result<Vec<_>>>()?;
    loss_and_grad(&fno, params, &prepared)
}

/// Mean squared error without gradients.
pub fn mean_loss<T: Scalar>(fno: &Fno<T>, params: &FnoParams<T>, batch: &[Prepared<T>]) -> Result<f64> {
    let (h, w) = fno.grid();
    let sums: Vec<Result<f64>> = batch
        .par_iter()
        .map(|ex| {
            let pred = fno.forward_raw(params, &ex.input)?;
            Ok(pred
                .iter()
                .zip(&ex.target)
                .map(|(&p, &t)| (p - t).f64().powi(2))
                .sum::<f64>())
        })
        .collect();
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / (batch.len() * h * w) as f64)
}
