//! Experiment orchestration: downstream presets, scaling sweeps, mixed
//! pre-training, data-equivalence and seed statistics, and report emission.

mod analysis;
mod report;
mod sweep;

pub use analysis::{aggregate, data_equivalence, quartile, spread_fraction, Aggregate, EquivStatus, Equivalence};
pub use report::{
    diverging_color, emit_report, equivalence_tables, read_curve_csv, render_svg, write_curve_csv, write_ppm, ReportBundle, CURVE_HEADER,
    SUMMARY_SCHEMA,
};
pub use sweep::{
    concat_datasets, run_data_scaling, run_mixed_pretraining, run_model_scaling, run_seed_study, subsample_indices,
    MixedOutcome, SweepData,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::fno::FnoConfig;
use crate::pde::{CoefficientRanges, SplitCounts, System};
use crate::train::{default_lr_grid, TrainMode};

/// How a curve point was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CurveMode {
    FromScratch,
    FineTune,
    ZeroShot,
}

impl CurveMode {
    pub const ALL: [CurveMode; 3] = [CurveMode::FromScratch, CurveMode::FineTune, CurveMode::ZeroShot];

    pub fn name(self) -> &'static str {
        match self {
            CurveMode::FromScratch => "FROM_SCRATCH",
            CurveMode::FineTune => "FINE_TUNE",
            CurveMode::ZeroShot => "ZERO_SHOT",
        }
    }

    pub fn train_mode(self) -> TrainMode {
        match self {
            CurveMode::FromScratch => TrainMode::FromScratch,
            CurveMode::FineTune | CurveMode::ZeroShot => TrainMode::FineTune,
        }
    }
}

impl fmt::Display for CurveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "FROM_SCRATCH" | "SCRATCH" => Ok(CurveMode::FromScratch),
            "FINE_TUNE" | "FINETUNE" | "TL" => Ok(CurveMode::FineTune),
            "ZERO_SHOT" | "ZEROSHOT" => Ok(CurveMode::ZeroShot),
            other => Err(config(format!("unknown mode '{other}'"))),
        }
    }
}

/// One row of a scaling curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub system: String,
    pub mode: CurveMode,
    pub model_id: String,
    pub n_examples: usize,
    pub seed: u64,
    /// Learning rate of the selected model; absent when nothing was trained.
    pub lr: Option<f64>,
    pub test_error: f64,
}

/// Learning-rate and batch-size selection per sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Tuning {
    Grid { lrs: Vec<f64>, batches: Vec<usize> },
    Fixed { lr: f64, batch: usize },
}

impl Tuning {
    pub fn default_grid() -> Self {
        Tuning::Grid {
            lrs: default_lr_grid(),
            batches: vec![16, 64],
        }
    }

    pub fn grids(&self) -> (Vec<f64>, Vec<usize>) {
        match self {
            Tuning::Grid { lrs, batches } => (lrs.clone(), batches.clone()),
            Tuning::Fixed { lr, batch } => (vec![*lr], vec![*batch]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub pretrain_id: Option<String>,
    pub downstream_id: String,
    pub sizes: Vec<usize>,
    pub models: Vec<FnoConfig>,
    pub modes: Vec<CurveMode>,
    pub seeds: Vec<u64>,
    pub tuning: Tuning,
    pub epochs: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config("sweep sizes must be strictly ascending"));
        }
        if self.models.is_empty() || self.modes.is_empty() || self.seeds.is_empty() {
            return Err(config("sweep needs at least one model, mode and seed"));
        }
        if self.epochs == 0 {
            return Err(config("sweep needs at least one epoch"));
        }
        let (lrs, batches) = self.tuning.grids();
        if lrs.is_empty() || batches.is_empty() {
            return Err(config("tuning grids must be non-empty"));
        }
        for m in &self.models {
            m.validate()?;
        }
        Ok(())
    }
}

/// Experiment sizes: grid, split counts, downstream sizes and epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub grid: usize,
    pub pretrain: SplitCounts,
    pub downstream: SplitCounts,
    pub sizes: Vec<usize>,
    pub epochs: usize,
}

impl Scale {
    pub fn desk() -> Self {
        Self {
            grid: 64,
            pretrain: SplitCounts { train: 4096, val: 512, test: 512 },
            downstream: SplitCounts { train: 2048, val: 512, test: 512 },
            sizes: powers_of_two(8, 2048),
            epochs: 200,
        }
    }

    pub fn paper() -> Self {
        Self {
            grid: 128,
            pretrain: SplitCounts { train: 1 << 15, val: 1 << 12, test: 1 << 12 },
            downstream: SplitCounts { train: 1 << 15, val: 1 << 12, test: 1 << 12 },
            sizes: powers_of_two(8, 1 << 15),
            epochs: 500,
        }
    }
}

/// `lo, 2 lo, ..., hi` for powers of two.
pub fn powers_of_two(lo: usize, hi: usize) -> Vec<usize> {
    std::iter::successors(Some(lo), |&n| Some(n * 2)).take_while(|&n| n <= hi).collect()
}

/// `(d, m)` pairs of the small default ladder.
pub fn desk_ladder() -> Vec<FnoConfig> {
    [(8, 4), (16, 8), (32, 12)].into_iter().map(|(d, m)| FnoConfig::new(d, m)).collect()
}

/// The four tiers from 64K to 256M parameters.
pub fn paper_ladder() -> Vec<FnoConfig> {
    [(16, 4), (16, 16), (32, 32), (128, 32)].into_iter().map(|(d, m)| FnoConfig::new(d, m)).collect()
}

/// A named coefficient range for one system, e.g. `SYS-1(5,10)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub system: System,
    pub ranges: CoefficientRanges,
    /// Overlap with the default pre-training range: None, Mild, Med or Large.
    pub shift: String,
}

impl Preset {
    fn new(system: System, lo: f64, hi: f64, shift: &str) -> Self {
        let mut ranges = CoefficientRanges::default();
        match system {
            System::Poisson => ranges.e = [lo, hi],
            System::AdvDiff => ranges.psi = [lo, hi],
            System::Helmholtz => ranges.omega = [lo as u32, hi as u32],
        }
        Self {
            name: format!("{}({},{})", system.tag(), lo, hi),
            system,
            ranges,
            shift: shift.to_string(),
        }
    }
}

/// Pre-training ranges followed by the downstream shift tiers for every system.
pub fn presets() -> Vec<Preset> {
    use System::*;
    vec![
        Preset::new(Poisson, 1.0, 5.0, "None"),
        Preset::new(Poisson, 1.0, 2.5, "None"),
        Preset::new(Poisson, 2.5, 7.5, "Mild"),
        Preset::new(Poisson, 5.0, 10.0, "Med"),
        Preset::new(Poisson, 10.0, 20.0, "Large"),
        Preset::new(AdvDiff, 0.2, 1.0, "None"),
        Preset::new(AdvDiff, 0.2, 0.4, "None"),
        Preset::new(AdvDiff, 0.4, 1.6, "Mild"),
        Preset::new(AdvDiff, 1.0, 2.0, "Med"),
        Preset::new(AdvDiff, 2.0, 5.0, "Large"),
        Preset::new(Helmholtz, 1.0, 10.0, "None"),
        Preset::new(Helmholtz, 1.0, 5.0, "None"),
        Preset::new(Helmholtz, 2.0, 12.0, "Mild"),
    ]
}

/// Looks up a preset by name; spaces are ignored.
pub fn preset(name: &str) -> Result<Preset> {
    let key: String = name.chars().filter(|c| !c.is_whitespace()).collect();
    presets()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(&key))
        .ok_or_else(|| config(format!("unknown preset '{name}'")))
}

/// The pre-training preset of `system`.
pub fn pretrain_preset(system: System) -> Preset {
    presets().into_iter().find(|p| p.system == system).expect("every system has presets")
}
