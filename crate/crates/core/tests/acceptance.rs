//! Acceptance suite: one line per criterion, non-zero exit on any hard failure.
//!
//! Trend criteria (8-10, 12) run at a reduced scale by default; set
//! `FNOTL_ACCEPTANCE_SCALE=desk` for the full desk-scale configuration.
//! `FNOTL_ACCEPTANCE_ONLY=1,4,11` restricts the run to the listed criteria.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use fnotl::fno::{init_params, Fno, FnoConfig};
use fnotl::harness::{
    aggregate, data_equivalence, quartile, read_curve_csv, run_data_scaling, run_mixed_pretraining, spread_fraction,
    write_curve_csv, CurveMode, CurvePoint, SweepData, SweepSpec, Tuning,
};
use fnotl::pde::{
    apply_operator, calibrate_velocity, generate_instance, sample_coefficients, sample_source, solve_spectral,
    stack_channels, DatasetManifest, DiffusionTensor, SourceConfig, SplitKind,
};
use fnotl::train::{train_model, Init, TrainConfig, TrainMode};
use fnotl::{
    fit_references, normalize_stack, periodic_shift, ChannelStack, Checkpoint, PdeCoefficients, PdeInstance, RealField,
    System,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{counts, dataset, fd_apply, fd_solve, gradient_check, median, probe_batch, rel_diff};

enum Verdict {
    Pass(String),
    Fail(String),
    /// Reported but not gating.
    Warn(String),
}

use Verdict::{Fail, Pass, Warn};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

/// Sizes for the trend criteria.
struct TrendScale {
    label: &'static str,
    grid: usize,
    model: FnoConfig,
    pretrain: fnotl::pde::SplitCounts,
    mixed_pretrain: fnotl::pde::SplitCounts,
    downstream: fnotl::pde::SplitCounts,
    sizes: Vec<usize>,
    tl_small: usize,
    scratch_large: usize,
    scratch_ref: usize,
    pre_epochs: usize,
    epochs: usize,
    lr: f64,
    batch: usize,
}

impl TrendScale {
    fn from_env() -> Self {
        match std::env::var("FNOTL_ACCEPTANCE_SCALE").as_deref() {
            Ok("desk") => Self {
                label: "desk",
                grid: 64,
                model: FnoConfig::new(16, 8),
                pretrain: counts(4096, 512, 512),
                mixed_pretrain: counts(4096, 512, 512),
                downstream: counts(1024, 512, 512),
                sizes: vec![32, 64, 128, 256, 512, 1024],
                tl_small: 64,
                scratch_large: 1024,
                scratch_ref: 128,
                pre_epochs: 200,
                epochs: 200,
                lr: 1e-3,
                batch: 16,
            },
            _ => Self {
                label: "reduced",
                grid: 32,
                model: FnoConfig::new(16, 8),
                pretrain: counts(1024, 128, 128),
                mixed_pretrain: counts(768, 96, 96),
                downstream: counts(256, 64, 128),
                sizes: vec![16, 32, 64, 128, 256],
                tl_small: 16,
                scratch_large: 256,
                scratch_ref: 128,
                pre_epochs: 60,
                epochs: 40,
                lr: 1e-3,
                batch: 16,
            },
        }
    }

    fn train_cfg(&self, mode: TrainMode, epochs: usize) -> TrainConfig {
        TrainConfig::new(mode, self.lr, self.batch, epochs, 0)
    }

    fn spec(&self, downstream_id: String, sizes: Vec<usize>, modes: Vec<CurveMode>, seeds: Vec<u64>) -> SweepSpec {
        SweepSpec {
            pretrain_id: None,
            downstream_id,
            sizes,
            models: vec![self.model],
            modes,
            seeds,
            tuning: Tuning::Fixed { lr: self.lr, batch: self.batch },
            epochs: self.epochs,
        }
    }
}

// 1
fn solver_exactness() -> Verdict {
    let n = 64;
    let sin = RealField::<f64>::from_fn(n, n, |x, _| (2.0 * PI * x).sin()).unwrap();
    let cos_y = RealField::<f64>::from_fn(n, n, |_, y| (2.0 * PI * y).cos()).unwrap();
    let p2 = 4.0 * PI * PI;
    let cases: Vec<(&str, PdeCoefficients, &RealField<f64>, RealField<f64>)> = vec![
        (
            "poisson",
            PdeCoefficients::poisson(DiffusionTensor::identity()),
            &sin,
            RealField::from_fn(n, n, |x, _| (2.0 * PI * x).sin() / p2).unwrap(),
        ),
        (
            "helmholtz",
            PdeCoefficients::helmholtz(1.0),
            &cos_y,
            RealField::from_fn(n, n, |_, y| (2.0 * PI * y).cos() / (p2 + 1.0)).unwrap(),
        ),
        (
            "adv-diff",
            PdeCoefficients::adv_diff(DiffusionTensor::identity(), [1.0, 0.0]),
            &sin,
            RealField::from_fn(n, n, |x, _| {
                (p2 * (2.0 * PI * x).sin() - 2.0 * PI * (2.0 * PI * x).cos()) / (p2 * p2 + p2)
            })
            .unwrap(),
        ),
    ];
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for (_, c, f, exact) in &cases {
        let t = Instant::now();
        let u = solve_spectral(c, *f).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        worst = worst.max(u.max_abs_diff(exact));
    }
    verdict(
        worst <= 1e-10 && slowest < 1.0,
        format!("max abs error {worst:.2e} (limit 1e-10), slowest solve {:.1} ms (limit 1 s)", slowest * 1e3),
    )
}

// 2
fn residual_oracle() -> Verdict {
    let mut worst = 0.0f64;
    for (k, system) in System::ALL.into_iter().enumerate() {
        let ranges = Default::default();
        let m = DatasetManifest::new("residual", system, 64, counts(100, 0, 0), ranges, 100 + k as u64);
        for i in 0..100 {
            let (inst, _) = generate_instance(&m, SplitKind::Train, i).unwrap();
            let u = solve_spectral(&inst.coeffs, &inst.source).unwrap();
            let r = apply_operator(&inst.coeffs, &u).sub(&inst.source).l2_norm() / inst.source.l2_norm();
            worst = worst.max(r);
        }
    }
    verdict(worst <= 1e-8, format!("worst relative residual {worst:.2e} over 300 instances (limit 1e-8)"))
}

// 3
fn finite_difference_cross_check() -> Verdict {
    let cfg = SourceConfig::default();
    let mut worst_gap = 0.0f64;
    let mut worst_ratio = f64::INFINITY;
    let mut worst_fd_residual = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let f64g = sample_source(&mut rng, &cfg, 64, 64).unwrap().subtract_mean();
        let coeffs = sample_coefficients(&mut rng, System::AdvDiff, &Default::default()).unwrap();
        let target = rng.gen_range(0.2..1.0);
        let (coeffs, u64g, _) = calibrate_velocity(&coeffs, &f64g, target).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let f128 = sample_source(&mut rng, &cfg, 128, 128).unwrap().subtract_mean();
        let u128 = solve_spectral(&coeffs, &f128).unwrap();

        let fd64 = fd_solve(&coeffs, &f64g);
        let fd128 = fd_solve(&coeffs, &f128);
        for (fd, f) in [(&fd64, &f64g), (&fd128, &f128)] {
            worst_fd_residual = worst_fd_residual.max(rel_diff(fd_apply(&coeffs, fd).values(), f.values()));
        }
        let gap64 = rel_diff(fd64.values(), u64g.values());
        let gap128 = rel_diff(fd128.values(), u128.values());
        worst_gap = worst_gap.max(gap64);
        worst_ratio = worst_ratio.min(gap64 / gap128);
    }
    verdict(
        worst_gap <= 5e-2 && worst_ratio >= 3.0 && worst_fd_residual < 1e-8,
        format!(
            "worst 64x64 gap {worst_gap:.2e} (limit 5e-2), smallest refinement ratio {worst_ratio:.2} (limit 3), FD stencil residual {worst_fd_residual:.1e}"
        ),
    )
}

// 4
fn gradient_correctness() -> Verdict {
    let t = Instant::now();
    let grid = 16;
    let config = FnoConfig::new(8, 4);
    let batch = probe_batch(41, grid);
    let params = init_params::<f64, _>(config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let groups = gradient_check(config, &params, &batch, grid, 1e-6, 256);
    let (name, worst) = groups
        .iter()
        .cloned()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 120.0,
        format!(
            "{} groups, up to 256 entries each of {} parameters; worst relative error {worst:.2e} in {name} (limit 1e-4); {secs:.1} s (limit 120 s)",
            groups.len(),
            params.len()
        ),
    )
}

// 5
fn normalization_equivalence() -> Verdict {
    let mut worst = 0.0f64;
    for (k, name) in ["SYS-1(1,5)", "SYS-2(0.2,1)", "SYS-3(1,10)"].into_iter().enumerate() {
        let ds = dataset(name, 32, counts(8, 0, 0), 50 + k as u64);
        let refs = fit_references(&ds.train, name).unwrap();
        let m = DatasetManifest::new(name, ds.manifest.systems[0], 32, counts(8, 0, 0), ds.manifest.ranges, 50 + k as u64);
        for i in 0..4 {
            let (inst, _) = generate_instance(&m, SplitKind::Train, i).unwrap();
            let base = normalize_stack(&stack_channels::<f64>(&inst), &refs).unwrap();
            for c in [0.1, 10.0, 100.0] {
                let scaled = PdeInstance {
                    coeffs: inst.coeffs.scaled(c),
                    source: inst.source.scale(c),
                    ..inst.clone()
                };
                let other: ChannelStack<f64> = normalize_stack(&stack_channels(&scaled), &refs).unwrap();
                worst = worst.max(base.max_abs_diff(&other));
            }
        }
    }
    verdict(worst <= 1e-12, format!("max abs difference {worst:.2e} over 3 systems x 3 scales (limit 1e-12)"))
}

// 6
fn translation_equivariance() -> Verdict {
    let (grid, config) = (32, FnoConfig::new(16, 8));
    let fno = Fno::<f64>::new(config, grid, grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let params = init_params::<f64, _>(config, &mut rng).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let channels: Vec<RealField<f64>> = (0..7)
            .map(|_| RealField::new(grid, grid, (0..grid * grid).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let x = ChannelStack::from_channels(&channels).unwrap();
        let (di, dj) = (rng.gen_range(-16..16), rng.gen_range(-16..16));
        let y = RealField::new(grid, grid, fno.forward_raw(&params, x.values()).unwrap()).unwrap();
        let ys = RealField::new(grid, grid, fno.forward_raw(&params, x.shift(di, dj).values()).unwrap()).unwrap();
        let expect = periodic_shift(&y, di, dj);
        worst = worst.max(rel_diff(ys.values(), expect.values()));
    }
    verdict(worst <= 1e-6, format!("worst relative deviation {worst:.2e} over 20 inputs (limit 1e-6)"))
}

// 7
fn parameter_ladder() -> Verdict {
    let tiers = [(16, 4, 64u64 << 10), (16, 16, 1 << 20), (32, 32, 16 << 20), (128, 32, 256 << 20)];
    let mut ok = true;
    let mut parts = Vec::new();
    let mut prev = None;
    for (d, m, nominal) in tiers {
        let n = FnoConfig::new(d, m).param_count();
        let ratio = n as f64 / nominal as f64;
        ok &= (0.9..=1.3).contains(&ratio);
        if let Some(p) = prev {
            let growth = n as f64 / p as f64;
            ok &= (12.0..=20.0).contains(&growth);
        }
        prev = Some(n);
        parts.push(format!("(d={d},m={m}) {n} = {ratio:.3}x"));
    }
    verdict(ok, parts.join(", "))
}

/// Everything the Q1-style criteria share.
struct Q1 {
    checkpoint: Checkpoint<f32>,
    points: Vec<CurvePoint>,
}

fn pretrain(scale: &TrendScale, data: &fnotl::pde::Dataset) -> Checkpoint<f32> {
    let t = Instant::now();
    let cfg = scale.train_cfg(TrainMode::FromScratch, scale.pre_epochs);
    let out = train_model::<f32>(Init::Scratch(scale.model), &data.train, &data.val, &cfg, &data.id()).unwrap();
    eprintln!(
        "  pre-trained on {} in {:.0} s (best epoch {:?})",
        data.manifest.name,
        t.elapsed().as_secs_f64(),
        out.checkpoint.provenance.best_epoch
    );
    out.checkpoint
}

fn q1_study(scale: &TrendScale) -> Q1 {
    let pre = dataset("SYS-1(1,5)", scale.grid, scale.pretrain, 1001);
    let checkpoint = pretrain(scale, &pre);
    let down = dataset("SYS-1(5,10)", scale.grid, scale.downstream, 1002);
    let spec = scale.spec(
        down.id(),
        scale.sizes.clone(),
        vec![CurveMode::FromScratch, CurveMode::FineTune],
        (0..5).collect(),
    );
    let t = Instant::now();
    let ckpts = [checkpoint.clone()];
    let points = run_data_scaling(&spec, &SweepData { downstream: &down, pretrained: &ckpts }).unwrap();
    eprintln!("  SYS-1(5,10) sweep: {} points in {:.0} s", points.len(), t.elapsed().as_secs_f64());
    Q1 { checkpoint, points }
}

fn median_error(points: &[CurvePoint], mode: CurveMode, n: usize, seeds: u64) -> f64 {
    median(
        points
            .iter()
            .filter(|p| p.mode == mode && p.n_examples == n && p.seed < seeds)
            .map(|p| p.test_error)
            .collect(),
    )
}

// 8
fn q1_trend(scale: &TrendScale, q1: &Q1) -> Verdict {
    let mut violations = Vec::new();
    let mut pairs = Vec::new();
    for &n in &scale.sizes {
        let ft = median_error(&q1.points, CurveMode::FineTune, n, 3);
        let sc = median_error(&q1.points, CurveMode::FromScratch, n, 3);
        pairs.push(format!("{n}: {ft:.3}/{sc:.3}"));
        if ft > sc {
            violations.push(n);
        }
    }
    let tl_small = median_error(&q1.points, CurveMode::FineTune, scale.tl_small, 3);
    let scratch_large = median_error(&q1.points, CurveMode::FromScratch, scale.scratch_large, 3);
    verdict(
        violations.len() <= 1 && tl_small <= scratch_large,
        format!(
            "[{}] fine-tuned/scratch medians {}; violations {:?} (max 1); TL@{} {tl_small:.3} vs scratch@{} {scratch_large:.3}",
            scale.label,
            pairs.join(", "),
            violations,
            scale.tl_small,
            scale.scratch_large
        ),
    )
}

// 9
fn q3_in_distribution(scale: &TrendScale, q1: &Q1) -> Verdict {
    let down = dataset("SYS-1(1,2.5)", scale.grid, scale.downstream, 1003);
    let spec = scale.spec(down.id(), scale.sizes.clone(), vec![CurveMode::ZeroShot, CurveMode::FineTune], vec![0]);
    let ckpts = [q1.checkpoint.clone()];
    let points = run_data_scaling(&spec, &SweepData { downstream: &down, pretrained: &ckpts }).unwrap();
    let zs = points.iter().find(|p| p.mode == CurveMode::ZeroShot).unwrap().test_error;
    let best = points
        .iter()
        .filter(|p| p.mode == CurveMode::FineTune)
        .map(|p| p.test_error)
        .fold(f64::INFINITY, f64::min);
    verdict(
        zs <= 1.5 * best,
        format!("[{}] zero-shot {zs:.3} vs best fine-tuned {best:.3} (limit 1.5x)", scale.label),
    )
}

// 10
fn q4_mixed(scale: &TrendScale) -> Verdict {
    let names = ["SYS-1(1,5)", "SYS-2(0.2,1)", "SYS-3(1,10)"];
    let pre: Vec<_> = names
        .iter()
        .enumerate()
        .map(|(k, n)| dataset(n, scale.grid, scale.mixed_pretrain, 2001 + k as u64))
        .collect();
    let down: Vec<_> = names
        .iter()
        .enumerate()
        .map(|(k, n)| dataset(n, scale.grid, scale.downstream, 2101 + k as u64))
        .collect();
    let spec = scale.spec(
        String::new(),
        vec![scale.scratch_ref],
        vec![CurveMode::ZeroShot, CurveMode::FromScratch],
        vec![0, 1, 2],
    );
    let t = Instant::now();
    let cfg = scale.train_cfg(TrainMode::FromScratch, scale.pre_epochs);
    let out = run_mixed_pretraining::<f32>(&pre, &down, scale.model, &cfg, &spec).unwrap();
    eprintln!("  mixed pipeline in {:.0} s", t.elapsed().as_secs_f64());
    let one_model = out.hashes.windows(2).all(|w| w[0].1 == w[1].1) && out.hashes.len() == 3;
    let mut ok = one_model;
    let mut parts = Vec::new();
    for n in names {
        let sys: Vec<CurvePoint> = out.points.iter().filter(|p| p.system == n).cloned().collect();
        let zs = median_error(&sys, CurveMode::ZeroShot, 0, 3);
        let sc = median_error(&sys, CurveMode::FromScratch, scale.scratch_ref, 3);
        ok &= zs < sc;
        parts.push(format!("{n}: zero-shot {zs:.3} vs scratch@{} {sc:.3}", scale.scratch_ref));
    }
    verdict(ok, format!("[{}] {}; single checkpoint: {one_model}", scale.label, parts.join(", ")))
}

// 11
fn analytics() -> Verdict {
    let scratch = [(100, 0.1), (1000, 0.01)];
    let eq = data_equivalence(&scratch, &[(1, 0.01), (1, 0.1), (1, (0.1f64 * 0.01).sqrt())]).unwrap();
    let nodes = eq[0].n_scratch == Some(1000.0) && eq[1].n_scratch == Some(100.0);
    let mid = (eq[2].n_scratch.unwrap() - 1000f64.sqrt() * 10.0).abs() < 1e-9;
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    let quart = quartile(&v, 0.25) == 2.0 && quartile(&v, 0.5) == 3.0 && quartile(&v, 0.75) == 4.0;
    let pts: Vec<CurvePoint> = [0.1, 0.3]
        .iter()
        .enumerate()
        .map(|(s, &e)| CurvePoint {
            system: "SYS-2(0.4,1.6)".into(),
            mode: CurveMode::FineTune,
            model_id: "d16-m8-L4".into(),
            n_examples: 32,
            seed: s as u64,
            lr: Some(1e-3 / 3.0),
            test_error: e,
        })
        .collect();
    let agg = aggregate(&pts);
    let mean = (agg[0].mean - 0.2).abs() < 1e-15;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    write_curve_csv(&path, &pts).unwrap();
    let round_trip = read_curve_csv(&path).unwrap() == pts;
    verdict(
        nodes && mid && quart && mean && round_trip,
        format!("equivalence nodes {nodes}, log-log midpoint {mid}, quartiles {quart}, mean {mean}, CSV round trip {round_trip}"),
    )
}

// 12
fn seed_sensitivity(scale: &TrendScale, q1: &Q1) -> Verdict {
    let aggs = aggregate(&q1.points);
    let frac = spread_fraction(&aggs, CurveMode::FromScratch, CurveMode::FineTune).unwrap_or(0.0);
    let detail = format!(
        "[{}] from-scratch IQR exceeds fine-tuned IQR on {:.0}% of sizes (target 60%)",
        scale.label,
        100.0 * frac
    );
    if frac >= 0.6 {
        Pass(detail)
    } else {
        Warn(detail)
    }
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("FNOTL_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let scale = TrendScale::from_env();
    let mut q1: Option<Q1> = None;
    let mut failures = 0;
    let mut ran = 0;

    let titles = [
        "solver exactness",
        "residual oracle",
        "finite-difference cross-check",
        "gradient correctness",
        "normalization equivalence",
        "translation equivariance",
        "parameter ladder audit",
        "Q1 transfer trend",
        "Q3 in-distribution zero-shot",
        "Q4 mixed pre-training",
        "analytics exactness",
        "seed sensitivity",
    ];
    for id in 1..=12u32 {
        if !wanted(id) {
            continue;
        }
        if matches!(id, 8 | 9 | 12) && q1.is_none() {
            match catch_unwind(AssertUnwindSafe(|| q1_study(&scale))) {
                Ok(study) => q1 = Some(study),
                Err(_) => {
                    println!("[FAIL] {id:>2} {}: shared Q1 study panicked", titles[id as usize - 1]);
                    failures += 1;
                    ran += 1;
                    continue;
                }
            }
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match id {
            1 => solver_exactness(),
            2 => residual_oracle(),
            3 => finite_difference_cross_check(),
            4 => gradient_correctness(),
            5 => normalization_equivalence(),
            6 => translation_equivariance(),
            7 => parameter_ladder(),
            8 => q1_trend(&scale, q1.as_ref().unwrap()),
            9 => q3_in_distribution(&scale, q1.as_ref().unwrap()),
            10 => q4_mixed(&scale),
            11 => analytics(),
            12 => seed_sensitivity(&scale, q1.as_ref().unwrap()),
            _ => unreachable!(),
        }))
        .unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        ran += 1;
        let secs = t.elapsed().as_secs_f64();
        let title = titles[id as usize - 1];
        match result {
            Pass(d) => println!("[PASS] {id:>2} {title}: {d} ({secs:.1} s)"),
            Warn(d) => println!("[WARN] {id:>2} {title}: {d} ({secs:.1} s)"),
            Fail(d) => {
                failures += 1;
                println!("[FAIL] {id:>2} {title}: {d} ({secs:.1} s)");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed or warned", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
