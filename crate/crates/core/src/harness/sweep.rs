use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{aggregate, Aggregate, CurveMode, CurvePoint, SweepSpec};
use crate::error::{config, Result};
use crate::fno::{Fno, FnoConfig};
use crate::normalize::fit_references;
use crate::pde::{CoefficientRanges, Dataset, DatasetManifest, Sample, SplitCounts};
use crate::scalar::Scalar;
use crate::train::{
    evaluate, evaluate_with, grid_search, scratch_params, train_model, Checkpoint, Init, Precision, TrainConfig,
};

/// Loaded inputs of a sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepData<'a, T> {
    pub downstream: &'a Dataset,
    /// Pre-trained checkpoints, matched to sweep models by configuration.
    pub pretrained: &'a [Checkpoint<T>],
}

#[derive(Clone, Debug)]
pub struct MixedOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub points: Vec<CurvePoint>,
    /// `(downstream name, weights hash)` of the model each system was evaluated with.
    pub hashes: Vec<(String, String)>,
}

fn id_seed(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// First `n` entries of a permutation of `0..total` fixed by `(dataset_id, seed)`;
/// smaller subsets are prefixes of larger ones.
pub fn subsample_indices(total: usize, n: usize, dataset_id: &str, seed: u64) -> Result<Vec<usize>> {
    if n > total {
        return Err(config(format!("requested {n} examples but only {total} are available")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(id_seed(dataset_id) ^ seed.rotate_left(17));
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    order.truncate(n);
    Ok(order)
}

fn precision_of<T: Scalar>() -> Precision {
    if std::mem::size_of::<T>() == 4 {
        Precision::F32
    } else {
        Precision::F64
    }
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    model: FnoConfig,
    mode: CurveMode,
    n: usize,
    seed: u64,
}

fn find_pretrained<'a, T>(spec: &SweepSpec, data: &SweepData<'a, T>, model: &FnoConfig) -> Result<&'a Checkpoint<T>> {
    let ckpt = data
        .pretrained
        .iter()
        .find(|c| c.config == *model)
        .ok_or_else(|| config(format!("no pre-trained checkpoint for model {}", model.id())))?;
    if let Some(id) = &spec.pretrain_id {
        if &ckpt.provenance.dataset_id != id {
            return Err(config(format!(
                "checkpoint was trained on '{}', sweep expects '{id}'",
                ckpt.provenance.dataset_id
            )));
        }
    }
    Ok(ckpt)
}

fn run_cell<T: Scalar>(spec: &SweepSpec, data: &SweepData<'_, T>, cell: Cell) -> Result<CurvePoint> {
    let ds = data.downstream;
    let point = |lr: Option<f64>, test_error: f64| CurvePoint {
        system: ds.manifest.name.clone(),
        mode: cell.mode,
        model_id: cell.model.id(),
        n_examples: cell.n,
        seed: cell.seed,
        lr,
        test_error,
    };
    let pretrained = match cell.mode {
        CurveMode::FromScratch => None,
        _ => Some(find_pretrained(spec, data, &cell.model)?),
    };
    if cell.n == 0 {
        let err = match pretrained {
            Some(ckpt) => evaluate(ckpt, &ds.test)?,
            None => {
                let params = scratch_params::<T>(cell.model, cell.seed)?;
                let refs = fit_references(&ds.train, ds.id())?;
                let fno = Fno::new(cell.model, ds.manifest.h, ds.manifest.w)?;
                evaluate_with(&fno, &params, &refs, &ds.test)?
            }
        };
        return Ok(point(None, err));
    }
    let idx = subsample_indices(ds.train.len(), cell.n, &ds.id(), cell.seed)?;
    let subset: Vec<Sample> = idx.iter().map(|&i| ds.train[i].clone()).collect();
    let init = match pretrained {
        Some(ckpt) => Init::Checkpoint(ckpt.clone()),
        None => Init::Scratch(cell.model),
    };
    let base = TrainConfig {
        lr0: 1e-3,
        batch_size: 1,
        epochs: spec.epochs,
        seed: cell.seed,
        mode: cell.mode.train_mode(),
        precision: precision_of::<T>(),
    };
    let (lrs, batches) = spec.tuning.grids();
    let search = grid_search(&init, &subset, &ds.val, &base, &lrs, &batches, &ds.id())?;
    let err = evaluate(&search.outcome.checkpoint, &ds.test)?;
    log::info!(
        "{} {} {} n={} seed={} lr={:.2e} -> {err:.4e}",
        ds.manifest.name,
        cell.mode,
        cell.model.id(),
        cell.n,
        cell.seed,
        search.best.lr0
    );
    Ok(point(Some(search.best.lr0), err))
}

/// One curve point per (model, mode, size, seed); zero-shot contributes a
/// single `n = 0` point per (model, seed).
pub fn run_data_scaling<T: Scalar>(spec: &SweepSpec, data: &SweepData<'_, T>) -> Result<Vec<CurvePoint>> {
    spec.validate()?;
    let ds = data.downstream;
    if ds.id() != spec.downstream_id {
        return Err(config(format!("sweep expects dataset '{}', got '{}'", spec.downstream_id, ds.id())));
    }
    if let Some(&max) = spec.sizes.last() {
        if max > ds.train.len() {
            return Err(config(format!("size {max} exceeds the {} available examples", ds.train.len())));
        }
    }
    let mut cells = Vec::new();
    for &model in &spec.models {
        for &mode in &spec.modes {
            for &seed in &spec.seeds {
                if mode == CurveMode::ZeroShot {
                    cells.push(Cell { model, mode, n: 0, seed });
                } else {
                    cells.extend(spec.sizes.iter().map(|&n| Cell { model, mode, n, seed }));
                }
            }
        }
    }
    cells.par_iter().map(|&cell| run_cell(spec, data, cell)).collect()
}

/// [`run_data_scaling`] over a model ladder ordered by parameter count.
pub fn run_model_scaling<T: Scalar>(spec: &SweepSpec, data: &SweepData<'_, T>) -> Result<Vec<CurvePoint>> {
    if spec.models.is_empty() {
        return Err(config("model ladder is empty"));
    }
    let counts: Vec<usize> = spec.models.iter().map(FnoConfig::param_count).collect();
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config(format!("model ladder must grow strictly in size: {counts:?}")));
    }
    run_data_scaling(spec, data)
}

/// Repeats a sweep over seeds `0..n_seeds` and aggregates per (size, mode).
pub fn run_seed_study<T: Scalar>(
    spec: &SweepSpec,
    data: &SweepData<'_, T>,
    n_seeds: usize,
) -> Result<(Vec<CurvePoint>, Vec<Aggregate>)> {
    if n_seeds < 2 {
        return Err(config("a seed study needs at least two seeds"));
    }
    let spec = SweepSpec {
        seeds: (0..n_seeds as u64).collect(),
        ..spec.clone()
    };
    let points = run_data_scaling(&spec, data)?;
    let agg = aggregate(&points);
    Ok((points, agg))
}

/// Union of several datasets on one grid: splits are concatenated in order.
pub fn concat_datasets(parts: &[Dataset]) -> Result<Dataset> {
    let first = parts.first().ok_or_else(|| config("nothing to concatenate"))?;
    let (h, w) = (first.manifest.h, first.manifest.w);
    let mut systems = Vec::new();
    let mut counts = SplitCounts { train: 0, val: 0, test: 0 };
    let mut ranges: CoefficientRanges = first.manifest.ranges;
    let mut seed = 0u64;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for d in parts {
        let m = &d.manifest;
        if (m.h, m.w) != (h, w) {
            return Err(config(format!("grid mismatch: {}x{} vs {h}x{w}", m.h, m.w)));
        }
        if m.source != first.manifest.source {
            return Err(config("source configurations differ"));
        }
        for s in &m.systems {
            if !systems.contains(s) {
                systems.push(*s);
            }
        }
        ranges.e = [ranges.e[0].min(m.ranges.e[0]), ranges.e[1].max(m.ranges.e[1])];
        ranges.psi = [ranges.psi[0].min(m.ranges.psi[0]), ranges.psi[1].max(m.ranges.psi[1])];
        ranges.omega = [ranges.omega[0].min(m.ranges.omega[0]), ranges.omega[1].max(m.ranges.omega[1])];
        seed = seed.rotate_left(21) ^ m.master_seed ^ id_seed(&m.name);
        counts.train += d.train.len();
        counts.val += d.val.len();
        counts.test += d.test.len();
        train.extend_from_slice(&d.train);
        val.extend_from_slice(&d.val);
        test.extend_from_slice(&d.test);
    }
    let names: Vec<&str> = parts.iter().map(|d| d.manifest.name.as_str()).collect();
    let mut manifest = DatasetManifest::new(format!("MIXED[{}]", names.join("+")), systems[0], h, counts, ranges, seed);
    manifest.systems = systems;
    manifest.source = first.manifest.source;
    Ok(Dataset { manifest, train, val, test })
}

/// Pre-trains one model on the union of `pretrain`, then sweeps every
/// downstream dataset with that single checkpoint.
pub fn run_mixed_pretraining<T: Scalar>(
    pretrain: &[Dataset],
    downstream: &[Dataset],
    model: FnoConfig,
    train_cfg: &TrainConfig,
    spec: &SweepSpec,
) -> Result<MixedOutcome<T>> {
    let mixed = concat_datasets(pretrain)?;
    let grid = (mixed.manifest.h, mixed.manifest.w);
    if let Some(d) = downstream.iter().find(|d| (d.manifest.h, d.manifest.w) != grid) {
        return Err(config(format!("downstream '{}' is not on the pre-training grid", d.manifest.name)));
    }
    let outcome = train_model::<T>(Init::Scratch(model), &mixed.train, &mixed.val, train_cfg, &mixed.id())?;
    let checkpoint = outcome.checkpoint;
    let models = [checkpoint.clone()];
    let mut points = Vec::new();
    let mut hashes = Vec::new();
    for d in downstream {
        let sub = SweepSpec {
            pretrain_id: Some(mixed.id()),
            downstream_id: d.id(),
            models: vec![model],
            ..spec.clone()
        };
        let data = SweepData {
            downstream: d,
            pretrained: &models,
        };
        points.extend(run_data_scaling(&sub, &data)?);
        hashes.push((d.manifest.name.clone(), models[0].weights_hash()));
    }
    Ok(MixedOutcome { checkpoint, points, hashes })
}
