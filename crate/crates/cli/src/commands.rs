use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fnotl::harness::{
    self, aggregate, emit_report, equivalence_tables, read_curve_csv, run_data_scaling, run_mixed_pretraining,
    run_model_scaling, run_seed_study, spread_fraction, subsample_indices, write_curve_csv, CurveMode, Scale,
    SweepData, SweepSpec, Tuning,
};
use fnotl::pde::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetManifest, SplitCounts, SplitKind};
use fnotl::train::{
    default_lr_grid, evaluate, grid_search, train_model, Init, Precision, TrainConfig, TrainMode, TrainOutcome,
};
use fnotl::{Checkpoint, FnoConfig, Scalar};

use crate::{Cli, Command, CurveArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    match cli.precision {
        Precision::F32 => run_typed::<f32>(cli),
        Precision::F64 => run_typed::<f64>(cli),
    }
}

fn run_typed<T: Scalar>(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => gen(cli, a),
        Command::Pretrain(a) => pretrain::<T>(cli, a),
        Command::Finetune(a) => finetune::<T>(cli, a),
        Command::Eval(a) => eval::<T>(a),
        Command::Sweep(a) => sweep::<T>(cli, a),
        Command::Mixed(a) => mixed::<T>(cli, a),
        Command::Equiv(a) => equiv(cli, a),
        Command::Seeds(a) => seeds::<T>(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

fn scale(cli: &Cli) -> Scale {
    let mut s = if cli.paper_scale { Scale::paper() } else { Scale::desk() };
    if let Some(g) = cli.grid {
        s.grid = g;
    }
    s
}

/// FNV-1a, used to give each preset its own generation seed.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn parse_model(s: &str) -> Result<FnoConfig> {
    let (d, m) = s.split_once(['x', 'X']).with_context(|| format!("model '{s}' is not DxM"))?;
    let cfg = FnoConfig::new(d.trim().parse()?, m.trim().parse()?);
    cfg.validate()?;
    Ok(cfg)
}

fn load(dir: &Path) -> Result<Dataset> {
    read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

fn load_ckpt<T: Scalar>(dir: &Path) -> Result<Checkpoint<T>> {
    Checkpoint::load(dir).with_context(|| format!("reading checkpoint {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn gen(cli: &Cli, a: &crate::GenArgs) -> Result<()> {
    let sc = scale(cli);
    let mut manifests = Vec::new();
    if let Some(path) = &a.manifest {
        manifests.push(serde_json::from_str::<DatasetManifest>(&fs::read_to_string(path)?)?);
    } else {
        let presets = if a.all {
            harness::presets()
        } else if a.presets.is_empty() {
            bail!("give --preset, --manifest or --all");
        } else {
            a.presets.iter().map(|p| harness::preset(p)).collect::<fnotl::Result<Vec<_>>>()?
        };
        for p in presets {
            let is_pretrain = harness::pretrain_preset(p.system).name == p.name;
            let base = if is_pretrain { sc.pretrain } else { sc.downstream };
            let counts = SplitCounts {
                train: a.train.unwrap_or(base.train),
                val: a.val.unwrap_or(base.val),
                test: a.test.unwrap_or(base.test),
            };
            let seed = cli.seed ^ name_hash(&p.name);
            manifests.push(DatasetManifest::new(p.name, p.system, sc.grid, counts, p.ranges, seed));
        }
    }
    for m in manifests {
        let dir = cli.out.join("datasets").join(stem(&m.name));
        let start = std::time::Instant::now();
        let (ds, stats) = generate_dataset(&m)?;
        write_dataset(&ds, &dir)?;
        log::info!(
            "{}: {} instances ({} resampled) in {:.1?}",
            m.name,
            stats.instances,
            stats.resampled,
            start.elapsed()
        );
        println!("{}", dir.display());
    }
    Ok(())
}

fn train_cfg(cli: &Cli, a: &TrainArgs, mode: TrainMode) -> TrainConfig {
    TrainConfig {
        lr0: a.lr,
        batch_size: a.batch,
        epochs: a.epochs.unwrap_or_else(|| scale(cli).epochs),
        seed: cli.seed,
        mode,
        precision: cli.precision,
    }
}

fn fit<T: Scalar>(init: Init<T>, ds: &Dataset, train: &[fnotl::pde::Sample], cfg: &TrainConfig, tune: bool) -> Result<TrainOutcome<T>> {
    if tune {
        let search = grid_search(&init, train, &ds.val, cfg, &default_lr_grid(), &[16, 64], &ds.id())?;
        for t in &search.trials {
            log::info!("trial {}", serde_json::to_string(t)?);
        }
        Ok(search.outcome)
    } else {
        Ok(train_model(init, train, &ds.val, cfg, &ds.id())?)
    }
}

fn save_outcome<T: Scalar>(outcome: &TrainOutcome<T>, ds: &Dataset, dir: &Path) -> Result<()> {
    outcome.checkpoint.save(dir)?;
    outcome.write_log(&dir.join("train_log.csv"))?;
    let err = evaluate(&outcome.checkpoint, &ds.test)?;
    let p = &outcome.checkpoint.provenance;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": dir.display().to_string(),
            "best_epoch": p.best_epoch,
            "best_val_loss": p.best_val_loss,
            "test_mu_l2": err,
        })
    );
    Ok(())
}

fn pretrain<T: Scalar>(cli: &Cli, a: &crate::PretrainArgs) -> Result<()> {
    let parts = a.data.iter().map(|d| load(d)).collect::<Result<Vec<_>>>()?;
    let ds = if parts.len() == 1 {
        parts.into_iter().next().expect("one dataset")
    } else {
        harness::concat_datasets(&parts)?
    };
    let model = parse_model(&a.model)?;
    let cfg = train_cfg(cli, &a.train, TrainMode::FromScratch);
    let outcome = fit::<T>(Init::Scratch(model), &ds, &ds.train, &cfg, a.train.tune)?;
    let name = a.name.clone().unwrap_or_else(|| format!("{}-{}", stem(&ds.manifest.name), model.id()));
    save_outcome(&outcome, &ds, &cli.out.join("checkpoints").join(name))
}

fn finetune<T: Scalar>(cli: &Cli, a: &crate::FinetuneArgs) -> Result<()> {
    let ckpt = load_ckpt::<T>(&a.ckpt)?;
    let ds = load(&a.data)?;
    let n = a.n.unwrap_or(ds.train.len());
    let idx = subsample_indices(ds.train.len(), n, &ds.id(), cli.seed)?;
    let subset: Vec<_> = idx.iter().map(|&i| ds.train[i].clone()).collect();
    let cfg = train_cfg(cli, &a.train, TrainMode::FineTune);
    let outcome = fit(Init::Checkpoint(ckpt), &ds, &subset, &cfg, a.train.tune)?;
    let name = a.name.clone().unwrap_or_else(|| format!("{}-ft{n}", stem(&ds.manifest.name)));
    save_outcome(&outcome, &ds, &cli.out.join("checkpoints").join(name))
}

fn eval<T: Scalar>(a: &crate::EvalArgs) -> Result<()> {
    let ckpt = load_ckpt::<T>(&a.ckpt)?;
    let ds = load(&a.data)?;
    let split = match a.split.as_str() {
        "train" => SplitKind::Train,
        "val" => SplitKind::Val,
        "test" => SplitKind::Test,
        other => bail!("unknown split '{other}'"),
    };
    let err = evaluate(&ckpt, ds.split(split))?;
    println!(
        "{}",
        serde_json::json!({
            "dataset": ds.id(),
            "split": a.split,
            "mu_l2": err,
            "weights_sha256": ckpt.weights_hash(),
        })
    );
    Ok(())
}

fn curve_spec(cli: &Cli, c: &CurveArgs, downstream: &Dataset) -> Result<(Vec<usize>, Vec<CurveMode>, usize, Tuning)> {
    let sc = scale(cli);
    let sizes = if c.sizes.is_empty() {
        sc.sizes.into_iter().filter(|&n| n <= downstream.train.len()).collect()
    } else {
        c.sizes.clone()
    };
    let modes = c.modes.iter().map(|m| m.parse()).collect::<fnotl::Result<Vec<CurveMode>>>()?;
    let tuning = match c.fixed_lr {
        Some(lr) => Tuning::Fixed { lr, batch: c.batch },
        None => Tuning::default_grid(),
    };
    Ok((sizes, modes, c.epochs.unwrap_or(sc.epochs), tuning))
}

fn sweep<T: Scalar>(cli: &Cli, a: &crate::SweepArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let ckpts = a.ckpts.iter().map(|c| load_ckpt::<T>(c)).collect::<Result<Vec<_>>>()?;
    let models = match a.ladder.as_deref() {
        Some("desk") => harness::desk_ladder(),
        Some("paper") => harness::paper_ladder(),
        Some(other) => bail!("unknown ladder '{other}'"),
        None if a.models.is_empty() => vec![FnoConfig::new(16, 8)],
        None => a.models.iter().map(|m| parse_model(m)).collect::<Result<_>>()?,
    };
    let (sizes, modes, epochs, tuning) = curve_spec(cli, &a.curve, &ds)?;
    let spec = SweepSpec {
        pretrain_id: ckpts.first().map(|c| c.provenance.dataset_id.clone()),
        downstream_id: ds.id(),
        sizes,
        models,
        modes,
        seeds: a.seeds.clone(),
        tuning,
        epochs,
    };
    let data = SweepData {
        downstream: &ds,
        pretrained: &ckpts,
    };
    let points = if a.ladder.is_some() {
        run_model_scaling(&spec, &data)?
    } else {
        run_data_scaling(&spec, &data)?
    };
    let name = a.name.clone().unwrap_or_else(|| stem(&ds.manifest.name));
    let dir = cli.out.join("sweeps").join(name);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("spec.json"), &spec)?;
    write_curve_csv(&dir.join("curves.csv"), &points)?;
    println!("{}", dir.join("curves.csv").display());
    Ok(())
}

fn mixed<T: Scalar>(cli: &Cli, a: &crate::MixedArgs) -> Result<()> {
    let pretrain = a.pretrain.iter().map(|d| load(d)).collect::<Result<Vec<_>>>()?;
    let downstream = a.downstream.iter().map(|d| load(d)).collect::<Result<Vec<_>>>()?;
    let model = parse_model(&a.model)?;
    let (sizes, modes, epochs, tuning) = curve_spec(cli, &a.curve, &downstream[0])?;
    let train_cfg = TrainConfig {
        lr0: a.pretrain_lr,
        batch_size: a.curve.batch,
        epochs,
        seed: cli.seed,
        mode: TrainMode::FromScratch,
        precision: cli.precision,
    };
    let spec = SweepSpec {
        pretrain_id: None,
        downstream_id: String::new(),
        sizes,
        models: vec![model],
        modes,
        seeds: a.seeds.clone(),
        tuning,
        epochs,
    };
    let outcome = run_mixed_pretraining::<T>(&pretrain, &downstream, model, &train_cfg, &spec)?;
    let dir = cli.out.join("mixed");
    outcome.checkpoint.save(&dir.join("checkpoint"))?;
    write_curve_csv(&dir.join("curves.csv"), &outcome.points)?;
    let hashes: BTreeMap<_, _> = outcome.hashes.into_iter().collect();
    write_json(&dir.join("hashes.json"), &hashes)?;
    println!("{}", dir.join("curves.csv").display());
    Ok(())
}

fn equiv(cli: &Cli, a: &crate::EquivArgs) -> Result<()> {
    let mut points = read_curve_csv(&a.curves)?;
    if let Some(sys) = &a.system {
        points.retain(|p| &p.system == sys);
    }
    let tables = equivalence_tables(&aggregate(&points));
    if tables.is_empty() {
        bail!("no (system, model) pair has both a usable from-scratch and a fine-tuned curve");
    }
    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join("equivalence.csv");
    let mut wtr = csv::Writer::from_path(&path)?;
    wtr.write_record(["system", "model_id", "n_tl", "tl_error", "n_scratch", "status"])?;
    for (sys, model, eqs) in &tables {
        for e in eqs {
            let status = serde_json::to_value(e.status)?;
            wtr.write_record([
                sys.clone(),
                model.clone(),
                e.n_tl.to_string(),
                e.tl_error.to_string(),
                e.n_scratch.map(|v| v.to_string()).unwrap_or_default(),
                status.as_str().unwrap_or_default().to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    print!("{}", fs::read_to_string(&path)?);
    Ok(())
}

fn seeds<T: Scalar>(cli: &Cli, a: &crate::SeedsArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let ckpt = load_ckpt::<T>(&a.ckpt)?;
    let (sizes, modes, epochs, tuning) = curve_spec(cli, &a.curve, &ds)?;
    let spec = SweepSpec {
        pretrain_id: Some(ckpt.provenance.dataset_id.clone()),
        downstream_id: ds.id(),
        sizes,
        models: vec![ckpt.config],
        modes,
        seeds: Vec::new(),
        tuning,
        epochs,
    };
    let ckpts = [ckpt];
    let data = SweepData {
        downstream: &ds,
        pretrained: &ckpts,
    };
    let (points, aggs) = run_seed_study(&SweepSpec { seeds: vec![0], ..spec.clone() }, &data, a.n_seeds)?;
    let dir = cli.out.join("seeds").join(stem(&ds.manifest.name));
    fs::create_dir_all(&dir)?;
    write_curve_csv(&dir.join("curves.csv"), &points)?;
    write_json(&dir.join("aggregates.json"), &aggs)?;
    match spread_fraction(&aggs, CurveMode::FromScratch, CurveMode::FineTune) {
        Some(f) if f >= 0.6 => log::info!("from-scratch spread exceeds fine-tuned spread on {:.0}% of sizes", 100.0 * f),
        Some(f) => log::warn!("from-scratch spread exceeds fine-tuned spread on only {:.0}% of sizes", 100.0 * f),
        None => log::warn!("no size has both from-scratch and fine-tuned runs"),
    }
    println!("{}", dir.display());
    Ok(())
}

fn report(cli: &Cli, a: &crate::ReportArgs) -> Result<()> {
    let points = read_curve_csv(&a.curves)?;
    let mut fields = Vec::new();
    let mut inputs = BTreeMap::new();
    for dir in &a.data {
        let ds = load(dir)?;
        if let Some(s) = ds.test.first() {
            fields.push((format!("{}_source", ds.manifest.name), s.source_field::<f64>()));
            fields.push((format!("{}_solution", ds.manifest.name), s.target::<f64>()));
        }
        inputs.insert(ds.manifest.name.clone(), ds.id());
    }
    let out: PathBuf = a.dir.clone().unwrap_or_else(|| cli.out.join("report"));
    let bundle = emit_report(&points, &fields, &inputs, &out)?;
    for f in &bundle.files {
        println!("{}", out.join(f).display());
    }
    Ok(())
}
