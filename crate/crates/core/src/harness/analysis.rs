use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CurveMode, CurvePoint};
use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivStatus {
    Interpolated,
    /// Better than every from-scratch point; not plotted.
    ExceedsFromScratch,
    /// Worse than the smallest from-scratch run; no equivalent inside the curve.
    BelowRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub n_tl: usize,
    pub tl_error: f64,
    pub n_scratch: Option<f64>,
    pub status: EquivStatus,
}

/// Points of `curve` (sorted by `n`) whose error is strictly below every
/// error at smaller `n`.
fn lower_envelope(curve: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(curve.len());
    for &(n, e) in curve {
        if out.last().is_none_or(|&(_, best)| e < best) {
            out.push((n, e));
        }
    }
    out
}

/// From-scratch example count matching each transfer-learning error, by
/// piecewise-linear interpolation of `log error` against `log n`.
pub fn data_equivalence(scratch: &[(usize, f64)], tl: &[(usize, f64)]) -> Result<Vec<Equivalence>> {
    let mut curve: Vec<(f64, f64)> = scratch.iter().map(|&(n, e)| (n as f64, e)).collect();
    if curve.iter().any(|&(n, e)| !(n > 0.0 && e > 0.0 && e.is_finite())) {
        return Err(config("from-scratch curve needs positive sizes and errors"));
    }
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    let env = lower_envelope(&curve);
    if env.len() < 2 {
        return Err(config("from-scratch curve needs at least two points with distinct errors"));
    }
    if env.len() < curve.len() {
        log::warn!("from-scratch curve is not monotone; using its lower envelope");
    }
    let (worst, best) = (env[0].1, env[env.len() - 1].1);
    Ok(tl
        .iter()
        .map(|&(n_tl, e)| {
            let (n_scratch, status) = if let Some(&(n, _)) = env.iter().find(|p| p.1 == e) {
                (Some(n), EquivStatus::Interpolated)
            } else if e < best {
                (None, EquivStatus::ExceedsFromScratch)
            } else if e > worst {
                (None, EquivStatus::BelowRange)
            } else {
                let k = env.windows(2).position(|s| s[0].1 > e && e > s[1].1).expect("bracketed");
                let ((n0, e0), (n1, e1)) = (env[k], env[k + 1]);
                let t = (e.ln() - e0.ln()) / (e1.ln() - e0.ln());
                (Some((n0.ln() + t * (n1.ln() - n0.ln())).exp()), EquivStatus::Interpolated)
            };
            Equivalence {
                n_tl,
                tl_error: e,
                n_scratch,
                status,
            }
        })
        .collect())
}

/// Quantile `p` of `sorted` by linear interpolation between order statistics.
pub fn quartile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistics across seeds for one (system, mode, model, size).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub system: String,
    pub mode: CurveMode,
    pub model_id: String,
    pub n_examples: usize,
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Aggregate {
    pub fn spread(&self) -> f64 {
        self.q3 - self.q1
    }
}

pub fn aggregate(points: &[CurvePoint]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, CurveMode, String, usize), Vec<f64>> = BTreeMap::new();
    for p in points {
        groups
            .entry((p.system.clone(), p.mode, p.model_id.clone(), p.n_examples))
            .or_default()
            .push(p.test_error);
    }
    groups
        .into_iter()
        .map(|((system, mode, model_id, n_examples), mut errs)| {
            errs.sort_by(f64::total_cmp);
            Aggregate {
                system,
                mode,
                model_id,
                n_examples,
                count: errs.len(),
                mean: errs.iter().sum::<f64>() / errs.len() as f64,
                q1: quartile(&errs, 0.25),
                median: quartile(&errs, 0.5),
                q3: quartile(&errs, 0.75),
            }
        })
        .collect()
}

/// Fraction of sizes present for both modes where `wider` has the larger
/// interquartile spread; `None` when no size is shared.
pub fn spread_fraction(aggs: &[Aggregate], wider: CurveMode, narrower: CurveMode) -> Option<f64> {
    let mut shared = 0usize;
    let mut wins = 0usize;
    for a in aggs.iter().filter(|a| a.mode == wider) {
        if let Some(b) = aggs
            .iter()
            .find(|b| b.mode == narrower && b.system == a.system && b.model_id == a.model_id && b.n_examples == a.n_examples)
        {
            shared += 1;
            if a.spread() > b.spread() {
                wins += 1;
            }
        }
    }
    (shared > 0).then(|| wins as f64 / shared as f64)
}
