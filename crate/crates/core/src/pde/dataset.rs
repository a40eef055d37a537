//! Dataset generation and the on-disk container: `manifest.json` plus
//! `train.bin`, `val.bin`, `test.bin`, each a packed sequence of
//! `[inputs: 7 * h * w, target: h * w]` little-endian `f32` records.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    calibrate_velocity, sample_coefficients, sample_source, solve_spectral, stack_from_parts,
    CoefficientRanges, PdeCoefficients, PdeInstance, SourceConfig, System,
};
use crate::error::{config, Error, Result};
use crate::field::{check_grid, ChannelStack, RealField, CHANNELS};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
pub const CHANNEL_LAYOUT_VERSION: u32 = 1;

const RESIDUAL_LIMIT: f64 = 1e-8;
const MAX_ATTEMPTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Val, SplitKind::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            SplitKind::Train => "train.bin",
            SplitKind::Val => "val.bin",
            SplitKind::Test => "test.bin",
        }
    }

    fn tag(self) -> u64 {
        match self {
            SplitKind::Train => 1,
            SplitKind::Val => 2,
            SplitKind::Test => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: SplitKind) -> usize {
        match split {
            SplitKind::Train => self.train,
            SplitKind::Val => self.val,
            SplitKind::Test => self.test,
        }
    }
}

/// Per-instance provenance recorded in the manifest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub seed: u64,
    pub coeffs: PdeCoefficients,
    pub psi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_psi: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub train: Vec<InstanceMeta>,
    pub val: Vec<InstanceMeta>,
    pub test: Vec<InstanceMeta>,
}

impl SplitMeta {
    fn get_mut(&mut self, split: SplitKind) -> &mut Vec<InstanceMeta> {
        match split {
            SplitKind::Train => &mut self.train,
            SplitKind::Val => &mut self.val,
            SplitKind::Test => &mut self.test,
        }
    }

    fn all(&self) -> impl Iterator<Item = &InstanceMeta> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Observed coefficient extents over every stored instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizedRanges {
    pub e: [f64; 2],
    pub psi: [f64; 2],
    pub omega: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub channel_layout_version: u32,
    pub name: String,
    pub systems: Vec<System>,
    pub h: usize,
    pub w: usize,
    pub counts: SplitCounts,
    pub ranges: CoefficientRanges,
    pub source: SourceConfig,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized: Option<RealizedRanges>,
    #[serde(default)]
    pub resampled: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<SplitMeta>,
}

impl DatasetManifest {
    pub fn new(
        name: impl Into<String>,
        system: System,
        grid: usize,
        counts: SplitCounts,
        ranges: CoefficientRanges,
        master_seed: u64,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            channel_layout_version: CHANNEL_LAYOUT_VERSION,
            name: name.into(),
            systems: vec![system],
            h: grid,
            w: grid,
            counts,
            ranges,
            source: SourceConfig::default(),
            master_seed,
            realized: None,
            resampled: 0,
            instances: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_grid(self.h, self.w)?;
        self.source.validate()?;
        if self.systems.is_empty() {
            return Err(config("manifest lists no systems"));
        }
        for &s in &self.systems {
            self.ranges.validate(s)?;
        }
        if self.format_version != FORMAT_VERSION {
            return Err(config(format!("unsupported format version {}", self.format_version)));
        }
        if self.channel_layout_version != CHANNEL_LAYOUT_VERSION {
            return Err(config(format!(
                "unsupported channel layout version {}",
                self.channel_layout_version
            )));
        }
        Ok(())
    }

    /// Identity string used for provenance and subsampling seeds.
    pub fn id(&self) -> String {
        format!("{}@{}x{}#{:x}", self.name, self.h, self.w, self.master_seed)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-derived seed for instance `index` of `split`.
pub fn instance_seed(master: u64, split: SplitKind, index: usize) -> u64 {
    splitmix64(splitmix64(master ^ split.tag().rotate_left(56)) ^ index as u64)
}

/// Compact `f32` example: the source plus the six constant coefficient channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub h: usize,
    pub w: usize,
    pub source: Vec<f32>,
    pub constants: [f32; CHANNELS - 1],
    pub target: Vec<f32>,
}

impl Sample {
    pub fn from_instance(instance: &PdeInstance) -> Self {
        let c = instance.coeffs.channel_values();
        Self {
            h: instance.source.h(),
            w: instance.source.w(),
            source: instance.source.values().iter().map(|&v| v as f32).collect(),
            constants: std::array::from_fn(|k| c[k] as f32),
            target: instance.solution.values().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn source_field<T: Scalar>(&self) -> RealField<T> {
        RealField::from_raw(self.h, self.w, self.source.iter().map(|&v| T::of(v as f64)).collect())
    }

    pub fn stack<T: Scalar>(&self) -> ChannelStack<T> {
        let constants = self.constants.map(|v| v as f64);
        stack_from_parts(&self.source_field::<T>(), &constants)
    }

    pub fn target<T: Scalar>(&self) -> RealField<T> {
        RealField::from_raw(self.h, self.w, self.target.iter().map(|&v| T::of(v as f64)).collect())
    }

    /// Which system the channel pattern encodes.
    pub fn system(&self) -> System {
        let [_, _, _, v1, v2, omega] = self.constants;
        if omega != 0.0 {
            System::Helmholtz
        } else if v1 != 0.0 || v2 != 0.0 {
            System::AdvDiff
        } else {
            System::Poisson
        }
    }

    fn write_record<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let n = self.h * self.w;
        let mut buf = Vec::with_capacity((CHANNELS + 1) * n * 4);
        for v in &self.source {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.constants {
            let bytes = c.to_le_bytes();
            for _ in 0..n {
                buf.extend_from_slice(&bytes);
            }
        }
        for v in &self.target {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    fn read_record<R: Read>(input: &mut R, h: usize, w: usize) -> Result<Self> {
        let n = h * w;
        let mut bytes = vec![0u8; (CHANNELS + 1) * n * 4];
        input.read_exact(&mut bytes)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut constants = [0.0f32; CHANNELS - 1];
        for (k, slot) in constants.iter_mut().enumerate() {
            let ch = &values[(k + 1) * n..(k + 2) * n];
            if ch.iter().any(|&v| v.to_bits() != ch[0].to_bits()) {
                return Err(Error::Format(format!("coefficient channel {} is not constant", k + 1)));
            }
            *slot = ch[0];
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("record contains non-finite values".into()));
        }
        Ok(Self {
            h,
            w,
            source: values[..n].to_vec(),
            constants,
            target: values[CHANNELS * n..].to_vec(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: SplitKind) -> &[Sample] {
        match split {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    pub fn id(&self) -> String {
        self.manifest.id()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenerationStats {
    pub instances: usize,
    pub resampled: usize,
}

/// Generates instance `index` of `split`, returning it with the number of
/// rejected draws that preceded it.
pub fn generate_instance(manifest: &DatasetManifest, split: SplitKind, index: usize) -> Result<(PdeInstance, usize)> {
    let system = *manifest
        .systems
        .first()
        .ok_or_else(|| config("manifest lists no systems"))?;
    if manifest.systems.len() != 1 {
        return Err(config("generation requires a single-system manifest"));
    }
    let seed = instance_seed(manifest.master_seed, split, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..MAX_ATTEMPTS {
        let mut source = sample_source(&mut rng, &manifest.source, manifest.h, manifest.w)?;
        if system.needs_zero_mean() {
            source = source.subtract_mean();
        }
        let coeffs = sample_coefficients(&mut rng, system, &manifest.ranges)?;
        if source.l2_norm() < 1e-12 {
            continue;
        }
        let (coeffs, solution, psi) = if system == System::AdvDiff {
            let [lo, hi] = manifest.ranges.psi;
            let target = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            match calibrate_velocity(&coeffs, &source, target) {
                Ok(found) => found,
                Err(Error::Degenerate(msg)) => {
                    warn!("{} instance {index}: {msg}; resampling", split.file_name());
                    continue;
                }
                Err(e) => return Err(e),
            }
        } else {
            let u = solve_spectral(&coeffs, &source)?;
            (coeffs, u, 0.0)
        };
        let instance = PdeInstance {
            coeffs,
            source,
            solution,
            psi,
            seed,
        };
        let residual = instance.residual();
        if !(residual <= RESIDUAL_LIMIT) {
            return Err(Error::Degenerate(format!(
                "instance {index} residual {residual:e} exceeds {RESIDUAL_LIMIT:e}"
            )));
        }
        return Ok((instance, attempt));
    }
    Err(Error::Degenerate(format!("instance {index}: no valid draw in {MAX_ATTEMPTS} attempts")))
}

/// Generates one split in parallel; output order and content are schedule independent.
pub fn generate_split(manifest: &DatasetManifest, split: SplitKind) -> Result<(Vec<Sample>, Vec<InstanceMeta>, usize)> {
    let results: Vec<Result<(Sample, InstanceMeta, usize)>> = (0..manifest.counts.get(split))
        .into_par_iter()
        .map(|index| {
            let (inst, resampled) = generate_instance(manifest, split, index)?;
            let meta = InstanceMeta {
                seed: inst.seed,
                coeffs: inst.coeffs,
                psi: inst.psi,
                target_psi: None,
            };
            Ok((Sample::from_instance(&inst), meta, resampled))
        })
        .collect();
    let mut samples = Vec::with_capacity(results.len());
    let mut metas = Vec::with_capacity(results.len());
    let mut resampled = 0;
    for r in results {
        let (s, m, k) = r?;
        samples.push(s);
        metas.push(m);
        resampled += k;
    }
    Ok((samples, metas, resampled))
}

fn realized(meta: &SplitMeta) -> Option<RealizedRanges> {
    let mut it = meta.all().peekable();
    it.peek()?;
    let mut r = RealizedRanges {
        e: [f64::INFINITY, f64::NEG_INFINITY],
        psi: [f64::INFINITY, f64::NEG_INFINITY],
        omega: [f64::INFINITY, f64::NEG_INFINITY],
    };
    for m in it {
        let upd = |slot: &mut [f64; 2], v: f64| {
            slot[0] = slot[0].min(v);
            slot[1] = slot[1].max(v);
        };
        upd(&mut r.e, m.coeffs.diffusion.e);
        upd(&mut r.psi, m.psi);
        upd(&mut r.omega, m.coeffs.omega);
    }
    Some(r)
}

/// Builds all three splits in memory and fills the manifest's realized extents.
pub fn generate_dataset(manifest: &DatasetManifest) -> Result<(Dataset, GenerationStats)> {
    manifest.validate()?;
    let mut manifest = manifest.clone();
    let mut meta = SplitMeta::default();
    let mut splits = Vec::new();
    let mut stats = GenerationStats::default();
    for split in SplitKind::ALL {
        let (samples, metas, resampled) = generate_split(&manifest, split)?;
        stats.instances += samples.len();
        stats.resampled += resampled;
        *meta.get_mut(split) = metas;
        splits.push(samples);
    }
    if stats.resampled > 0 {
        info!("{}: resampled {} draws", manifest.name, stats.resampled);
    }
    manifest.realized = realized(&meta);
    manifest.resampled = stats.resampled;
    manifest.instances = Some(meta);
    let test = splits.pop().unwrap_or_default();
    let val = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok((
        Dataset {
            manifest,
            train,
            val,
            test,
        },
        stats,
    ))
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let m = &dataset.manifest;
    for split in SplitKind::ALL {
        let samples = dataset.split(split);
        if samples.len() != m.counts.get(split) {
            return Err(config(format!(
                "{} holds {} samples but the manifest declares {}",
                split.file_name(),
                samples.len(),
                m.counts.get(split)
            )));
        }
        let mut out = BufWriter::new(File::create(dir.join(split.file_name()))?);
        for s in samples {
            if (s.h, s.w) != (m.h, m.w) {
                return Err(config("sample grid differs from manifest grid"));
            }
            s.write_record(&mut out)?;
        }
        out.flush()?;
    }
    let json = serde_json::to_string_pretty(m)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", manifest.format_version)));
    }
    check_grid(manifest.h, manifest.w)?;
    let record_bytes = ((CHANNELS + 1) * manifest.h * manifest.w * 4) as u64;
    let mut splits = Vec::new();
    for split in SplitKind::ALL {
        let path = dir.join(split.file_name());
        let expected = manifest.counts.get(split);
        let len = fs::metadata(&path)?.len();
        if len != record_bytes * expected as u64 {
            return Err(Error::Format(format!(
                "{} has {len} bytes, expected {} records of {record_bytes}",
                split.file_name(),
                expected
            )));
        }
        let mut input = BufReader::new(File::open(&path)?);
        let samples = (0..expected)
            .map(|_| Sample::read_record(&mut input, manifest.h, manifest.w))
            .collect::<Result<Vec<_>>>()?;
        splits.push(samples);
    }
    let test = splits.pop().unwrap_or_default();
    let val = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Dataset {
        manifest,
        train,
        val,
        test,
    })
}
