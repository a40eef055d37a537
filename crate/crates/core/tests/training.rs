mod common;

use fnotl::fno::{init_params, Fno, FnoConfig};
use fnotl::pde::{Dataset, Sample};
use fnotl::train::{
    adam_step, evaluate, evaluate_with, grid_search, loss_and_grad, mse_loss_and_grad, relative_error, train_model,
    Init, OptimizerState, Prepared, TrialStatus,
};
use fnotl::{fit_references, Checkpoint, Error, FnoParams, TrainConfig, TrainMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{counts, dataset, probe_batch};

const GRID: usize = 16;

fn small() -> Dataset {
    dataset("SYS-1(1,5)", GRID, counts(16, 8, 8), 11)
}

fn cfg(mode: TrainMode, lr: f64, batch: usize, epochs: usize) -> TrainConfig {
    TrainConfig::new(mode, lr, batch, epochs, 0)
}

fn pretrained(ds: &Dataset) -> Checkpoint<f64> {
    let c = cfg(TrainMode::FromScratch, 1e-3, 4, 3);
    train_model::<f64>(Init::Scratch(FnoConfig::new(8, 4)), &ds.train, &ds.val, &c, &ds.id())
        .unwrap()
        .checkpoint
}

#[test]
fn loss_of_exact_and_offset_predictions() {
    let config = FnoConfig::new(8, 4);
    let fno = Fno::<f64>::new(config, GRID, GRID).unwrap();
    let params = init_params::<f64, _>(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut batch = probe_batch(3, GRID);
    for ex in &mut batch {
        ex.target = fno.forward_raw(&params, &ex.input).unwrap();
    }
    let (loss, grad) = loss_and_grad(&fno, &params, &batch).unwrap();
    assert_eq!(loss, 0.0);
    let head_bias = params.layout().groups().into_iter().find(|(n, _)| n == "head.bias2").unwrap().1;
    assert!(grad.values[head_bias].iter().all(|&g| g == 0.0));

    for ex in &mut batch {
        ex.target.iter_mut().for_each(|t| *t -= 1.0);
    }
    let (loss, _) = loss_and_grad(&fno, &params, &batch).unwrap();
    assert!((loss - 1.0).abs() < 1e-12);
}

#[test]
fn stack_and_prepared_losses_agree() {
    let ds = small();
    let refs = fit_references(&ds.train, "t").unwrap();
    let params = init_params::<f64, _>(FnoConfig::new(8, 4), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let raw: Vec<_> = ds.train[..3].iter().map(|s| (s.stack::<f64>(), s.target::<f64>())).collect();
    let prepared: Vec<_> = ds.train[..3].iter().map(|s| Prepared::from_sample(s, &refs).unwrap()).collect();
    let fno = Fno::new(params.config, GRID, GRID).unwrap();
    let (a, ga) = mse_loss_and_grad(&params, &raw, &refs).unwrap();
    let (b, gb) = loss_and_grad(&fno, &params, &prepared).unwrap();
    assert!((a - b).abs() <= 1e-12 * a);
    let d: f64 = ga.values.iter().zip(&gb.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(d < 1e-12);
}

#[test]
fn non_finite_loss_is_divergence() {
    let config = FnoConfig::new(8, 4);
    let fno = Fno::<f64>::new(config, GRID, GRID).unwrap();
    let mut params = init_params::<f64, _>(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    params.values[0] = f64::NAN;
    let err = loss_and_grad(&fno, &params, &probe_batch(1, GRID)).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }));
}

#[test]
fn loss_does_not_increase_under_small_steps() {
    let config = FnoConfig::new(8, 4);
    let fno = Fno::<f64>::new(config, GRID, GRID).unwrap();
    let mut params = init_params::<f64, _>(config, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let batch = probe_batch(5, GRID);
    let mut state = OptimizerState::new(params.len());
    let mut prev = f64::INFINITY;
    for _ in 0..12 {
        let (loss, grad) = loss_and_grad(&fno, &params, &batch).unwrap();
        assert!(loss <= prev, "{loss} > {prev}");
        prev = loss;
        adam_step(&mut params, &grad, &mut state, 1e-5);
    }
}

#[test]
fn adam_runs_are_bit_identical() {
    let config = FnoConfig::new(8, 4);
    let fno = Fno::<f64>::new(config, GRID, GRID).unwrap();
    let batch = probe_batch(6, GRID);
    let run = || {
        let mut params = init_params::<f64, _>(config, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mut state = OptimizerState::new(params.len());
        for _ in 0..3 {
            let (_, grad) = loss_and_grad(&fno, &params, &batch).unwrap();
            adam_step(&mut params, &grad, &mut state, 1e-3);
        }
        params.values
    };
    assert_eq!(run(), run());
}

#[test]
fn fine_tuning_on_nothing_is_zero_shot() {
    let ds = small();
    let ckpt = pretrained(&ds);
    let out = train_model(Init::Checkpoint(ckpt.clone()), &[], &ds.val, &cfg(TrainMode::FineTune, 1e-3, 4, 5), "x")
        .unwrap();
    assert_eq!(out.checkpoint.params.values, ckpt.params.values);
    assert_eq!(out.checkpoint.refs, ckpt.refs);
    assert!(out.log.is_empty());
}

#[test]
fn fine_tuning_reuses_frozen_references() {
    let ds = small();
    let ckpt = pretrained(&ds);
    let other = dataset("SYS-1(5,10)", GRID, counts(8, 4, 4), 12);
    let out = train_model(
        Init::Checkpoint(ckpt.clone()),
        &other.train,
        &other.val,
        &cfg(TrainMode::FineTune, 1e-3, 4, 2),
        &other.id(),
    )
    .unwrap();
    assert_eq!(out.checkpoint.refs, ckpt.refs);
    assert_ne!(out.checkpoint.params.values, ckpt.params.values);
}

#[test]
fn mode_and_split_errors() {
    let ds = small();
    let scratch = Init::<f64>::Scratch(FnoConfig::new(8, 4));
    let c = cfg(TrainMode::FromScratch, 1e-3, 4, 1);
    assert!(train_model(scratch.clone(), &[], &ds.val, &c, "x").is_err());
    assert!(train_model(scratch.clone(), &ds.train, &[], &c, "x").is_err());
    let ft = cfg(TrainMode::FineTune, 1e-3, 4, 1);
    assert!(train_model(scratch, &ds.train, &ds.val, &ft, "x").is_err());
    let mut bad = c;
    bad.lr0 = 0.0;
    assert!(bad.validate().is_err());
}

#[test]
fn training_is_reproducible() {
    let ds = small();
    let run = || {
        let c = TrainConfig::new(TrainMode::FromScratch, 1e-3, 4, 4, 21);
        train_model::<f64>(Init::Scratch(FnoConfig::new(8, 4)), &ds.train, &ds.val, &c, &ds.id()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.checkpoint.weights_hash(), b.checkpoint.weights_hash());
    assert_eq!(a.checkpoint.provenance.best_epoch, b.checkpoint.provenance.best_epoch);
    assert_eq!(a.checkpoint.provenance.best_val_loss, b.checkpoint.provenance.best_val_loss);
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 4);
}

#[test]
fn best_epoch_has_lowest_validation_loss() {
    let ds = small();
    let c = cfg(TrainMode::FromScratch, 3e-3, 4, 6);
    let out = train_model::<f64>(Init::Scratch(FnoConfig::new(8, 4)), &ds.train, &ds.val, &c, &ds.id()).unwrap();
    let best = out.checkpoint.provenance.best_val_loss.unwrap();
    let min = out.log.iter().map(|r| r.val_loss).fold(out.initial_val_loss, f64::min);
    assert_eq!(best, min);
}

#[test]
fn checkpoint_round_trip_evaluates_identically() {
    let ds = small();
    let ckpt = pretrained(&ds);
    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    let back = Checkpoint::<f64>::load(dir.path()).unwrap();
    assert_eq!(evaluate(&ckpt, &ds.test).unwrap(), evaluate(&back, &ds.test).unwrap());
    assert_eq!(ckpt.weights_hash(), back.weights_hash());
}

#[test]
fn evaluation_examples() {
    let t = vec![1.0, -2.0, 3.0, 0.5];
    assert_eq!(relative_error(&t, &t), Some(0.0));
    assert_eq!(relative_error(&[0.0; 4], &t), Some(1.0));
    let twice: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
    assert_eq!(relative_error(&twice, &t), Some(1.0));
    assert_eq!(relative_error(&t, &[0.0; 4]), None);

    // an all-zero network predicts zero everywhere
    let ds = small();
    let refs = fit_references(&ds.train, "t").unwrap();
    let zero = FnoParams::<f64>::zeros(FnoConfig::new(8, 4));
    let fno = Fno::new(zero.config, GRID, GRID).unwrap();
    assert!((evaluate_with(&fno, &zero, &refs, &ds.test).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn grid_search_examples() {
    let ds = small();
    let init = Init::<f64>::Scratch(FnoConfig::new(8, 4));
    let base = cfg(TrainMode::FromScratch, 1e-3, 4, 3);

    let single = grid_search(&init, &ds.train, &ds.val, &base, &[3e-3], &[8], &ds.id()).unwrap();
    assert_eq!((single.best.lr0, single.best.batch_size), (3e-3, 8));
    assert_eq!(single.trials.len(), 1);

    let table = grid_search(&init, &ds.train, &ds.val, &base, &[1e-3, 3e-3], &[4, 8, 16], &ds.id()).unwrap();
    assert_eq!(table.trials.len(), 6);

    let absurd = grid_search(&init, &ds.train, &ds.val, &base, &[1e2, 1e-3], &[4], &ds.id()).unwrap();
    assert_eq!(absurd.best.lr0, 1e-3);
    assert!(matches!(absurd.trials[0].status, TrialStatus::Diverged { .. }), "{:?}", absurd.trials[0]);

    let hopeless = grid_search(&init, &ds.train, &ds.val, &base, &[1e2], &[4], &ds.id());
    assert!(matches!(hopeless, Err(Error::SearchFailure)));
}

// Generated targets keep about 1e-2 of their norm above the retained modes,
// which the spectral path cannot produce; training stalls near 4e-2.
#[test]
#[ignore = "plateaus near 4e-2: target energy above the mode cutoff"]
fn overfits_four_examples() {
    let ds = dataset("SYS-1(1,5)", GRID, counts(4, 0, 0), 13);
    let four: Vec<Sample> = ds.train.clone();
    let c = cfg(TrainMode::FromScratch, 3e-3, 4, 2000);
    let out = train_model::<f64>(Init::Scratch(FnoConfig::new(16, 8)), &four, &four, &c, &ds.id()).unwrap();
    let err = evaluate(&out.checkpoint, &four).unwrap();
    assert!(err < 1e-3, "training error {err}");
}

#[test]
fn memorizes_four_band_limited_examples() {
    let four = common::band_limited_samples(13, 4, GRID);
    let c = cfg(TrainMode::FromScratch, 3e-3, 1, 2000);
    let out = train_model::<f64>(Init::Scratch(FnoConfig::new(16, 8)), &four, &four, &c, "band-limited").unwrap();
    let err = evaluate(&out.checkpoint, &four).unwrap();
    assert!(err < 3e-3, "training error {err}");
}
