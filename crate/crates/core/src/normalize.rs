//! Input normalization: every example is divided by its source norm relative
//! to a reference norm, then coefficient channels are divided by fixed
//! per-channel references. Targets are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::field::{norm, ChannelStack, CHANNELS};
use crate::pde::Sample;
use crate::scalar::Scalar;

/// Channel means below this are treated as absent channels.
const ZERO_CHANNEL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReferences {
    pub f_ref: f64,
    pub c_ref: [f64; CHANNELS],
    pub fitted_on: String,
}

impl NormalizationReferences {
    /// `f_ref = 1`, `c_ref = 1`: normalization reduces to the relative-norm step.
    pub fn unit(fitted_on: impl Into<String>) -> Self {
        Self {
            f_ref: 1.0,
            c_ref: [1.0; CHANNELS],
            fitted_on: fitted_on.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_ref > 0.0 && self.f_ref.is_finite()) {
            return Err(config(format!("f_ref {} must be positive", self.f_ref)));
        }
        if self.c_ref.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(config("every c_ref entry must be positive and finite"));
        }
        Ok(())
    }
}

/// Statistics an example exposes to reference fitting.
pub trait ChannelStats {
    fn source_norm(&self) -> f64;
    fn channel_mean_abs(&self, ch: usize) -> f64;
}

impl<T: Scalar> ChannelStats for ChannelStack<T> {
    fn source_norm(&self) -> f64 {
        norm(self.channel(0)).f64()
    }

    fn channel_mean_abs(&self, ch: usize) -> f64 {
        let c = self.channel(ch);
        c.iter().map(|v| v.f64().abs()).sum::<f64>() / c.len() as f64
    }
}

impl ChannelStats for Sample {
    fn source_norm(&self) -> f64 {
        self.source.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    fn channel_mean_abs(&self, ch: usize) -> f64 {
        if ch == 0 {
            self.source.iter().map(|v| v.abs() as f64).sum::<f64>() / self.source.len() as f64
        } else {
            (self.constants[ch - 1] as f64).abs()
        }
    }
}

/// Median with the even-count convention of averaging the two middle values.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn fit_references<S: ChannelStats>(examples: &[S], fitted_on: impl Into<String>) -> Result<NormalizationReferences> {
    if examples.is_empty() {
        return Err(config("cannot fit normalization references on an empty split"));
    }
    let norms: Vec<f64> = examples.iter().map(|e| e.source_norm()).collect();
    let f_ref = median(&mut norms.clone()).unwrap_or(0.0);
    if !(f_ref > 0.0) {
        return Err(config("median source norm is zero"));
    }
    let mut c_ref = [1.0; CHANNELS];
    for (ch, slot) in c_ref.iter_mut().enumerate().skip(1) {
        let mut scaled: Vec<f64> = examples
            .iter()
            .zip(&norms)
            .filter(|(_, &n)| n > 0.0)
            .map(|(e, &n)| e.channel_mean_abs(ch) * f_ref / n)
            .collect();
        let m = median(&mut scaled).unwrap_or(0.0);
        *slot = if m < ZERO_CHANNEL { 1.0 } else { m };
    }
    Ok(NormalizationReferences {
        f_ref,
        c_ref,
        fitted_on: fitted_on.into(),
    })
}

/// Per-channel multipliers applied to `stack`: `f_ref / (||f|| c_ref[j])`.
pub fn channel_factors<T: Scalar>(stack: &ChannelStack<T>, refs: &NormalizationReferences) -> Result<[f64; CHANNELS]> {
    let source_norm = stack.source_norm();
    if !(source_norm > 0.0) {
        return Err(Error::Degenerate("source channel is identically zero".into()));
    }
    let r = source_norm / refs.f_ref;
    Ok(std::array::from_fn(|ch| 1.0 / (r * refs.c_ref[ch])))
}

pub fn normalize_stack<T: Scalar>(stack: &ChannelStack<T>, refs: &NormalizationReferences) -> Result<ChannelStack<T>> {
    let factors = channel_factors(stack, refs)?;
    let n = stack.h() * stack.w();
    let mut values = stack.values().to_vec();
    for (ch, f) in factors.iter().enumerate() {
        let f = T::of(*f);
        for v in &mut values[ch * n..(ch + 1) * n] {
            *v = *v * f;
        }
    }
    Ok(ChannelStack::from_raw(stack.h(), stack.w(), values))
}
