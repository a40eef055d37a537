//! Constant-coefficient elliptic systems on the periodic unit square:
//! anisotropic Poisson, advection-diffusion and screened Helmholtz.

mod dataset;
mod solver;
mod source;

pub use dataset::{
    generate_dataset, generate_instance, generate_split, instance_seed, read_dataset,
    write_dataset, Dataset, DatasetManifest, GenerationStats, InstanceMeta, RealizedRanges,
    Sample, SplitCounts, SplitKind, SplitMeta, CHANNEL_LAYOUT_VERSION, FORMAT_VERSION,
};
pub use solver::{
    apply_operator, calibrate_velocity, grid_symbol, measure_psi, pde_symbol, solve_spectral,
    PSI_TOLERANCE,
};
pub use source::{sample_source, SourceConfig};

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::field::{ChannelStack, RealField, CHANNELS};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum System {
    Poisson,
    AdvDiff,
    Helmholtz,
}

impl System {
    pub const ALL: [System; 3] = [System::Poisson, System::AdvDiff, System::Helmholtz];

    pub fn tag(self) -> &'static str {
        match self {
            System::Poisson => "SYS-1",
            System::AdvDiff => "SYS-2",
            System::Helmholtz => "SYS-3",
        }
    }

    /// Whether the zero mode of the operator vanishes.
    pub fn needs_zero_mean(self) -> bool {
        !matches!(self, System::Helmholtz)
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Poisson => "POISSON",
            System::AdvDiff => "ADV_DIFF",
            System::Helmholtz => "HELMHOLTZ",
        })
    }
}

impl std::str::FromStr for System {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "POISSON" | "SYS-1" | "SYS1" => Ok(System::Poisson),
            "ADV_DIFF" | "ADVDIFF" | "SYS-2" | "SYS2" => Ok(System::AdvDiff),
            "HELMHOLTZ" | "SYS-3" | "SYS3" => Ok(System::Helmholtz),
            other => Err(config(format!("unknown system '{other}'"))),
        }
    }
}

/// Symmetric diffusion tensor `scale * R^T diag(1, e) R` with `R = rot(theta)`.
///
/// `scale` is 1 for every sampled tensor; other values only arise from
/// [`PdeCoefficients::scaled`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTensor {
    pub k11: f64,
    pub k22: f64,
    pub k12: f64,
    pub e: f64,
    pub theta: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl DiffusionTensor {
    pub fn identity() -> Self {
        Self::from_eigen(1.0, 0.0)
    }

    pub fn from_eigen(e: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            k11: c * c + e * s * s,
            k22: s * s + e * c * c,
            k12: (e - 1.0) * s * c,
            e,
            theta,
            scale: 1.0,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            k11: self.k11 * c,
            k22: self.k22 * c,
            k12: self.k12 * c,
            scale: self.scale * c,
            ..*self
        }
    }

    pub fn is_spd(&self) -> bool {
        self.k11 > 0.0 && self.k11 * self.k22 - self.k12 * self.k12 > 0.0
    }

    /// `k^T K k`.
    #[inline]
    pub fn quadratic(&self, kx: f64, ky: f64) -> f64 {
        self.k11 * kx * kx + self.k22 * ky * ky + 2.0 * self.k12 * kx * ky
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeCoefficients {
    pub system: System,
    pub diffusion: DiffusionTensor,
    pub velocity: [f64; 2],
    pub omega: f64,
}

impl PdeCoefficients {
    pub fn poisson(diffusion: DiffusionTensor) -> Self {
        Self {
            system: System::Poisson,
            diffusion,
            velocity: [0.0; 2],
            omega: 0.0,
        }
    }

    pub fn adv_diff(diffusion: DiffusionTensor, velocity: [f64; 2]) -> Self {
        Self {
            system: System::AdvDiff,
            diffusion,
            velocity,
            omega: 0.0,
        }
    }

    pub fn helmholtz(omega: f64) -> Self {
        Self {
            system: System::Helmholtz,
            diffusion: DiffusionTensor::identity(),
            velocity: [0.0; 2],
            omega,
        }
    }

    /// Every operator term multiplied by `c`; the solution for `c f` is unchanged.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            system: self.system,
            diffusion: self.diffusion.scaled(c),
            velocity: [self.velocity[0] * c, self.velocity[1] * c],
            omega: self.omega * c,
        }
    }

    /// Checks the per-system structure of sampled coefficients.
    pub fn validate(&self) -> Result<()> {
        if !self.diffusion.is_spd() {
            return Err(config("diffusion tensor is not positive definite"));
        }
        let no_velocity = self.velocity == [0.0, 0.0];
        match self.system {
            System::Poisson if !no_velocity || self.omega != 0.0 => {
                Err(config("POISSON coefficients carry advection or wavenumber terms"))
            }
            System::AdvDiff if self.omega != 0.0 => {
                Err(config("ADV_DIFF coefficients carry a wavenumber"))
            }
            System::Helmholtz => {
                let d = &self.diffusion;
                if !no_velocity || (d.k11, d.k22, d.k12) != (1.0, 1.0, 0.0) {
                    Err(config("HELMHOLTZ requires identity diffusion and no advection"))
                } else if self.omega < 1.0 || self.omega.fract() != 0.0 {
                    Err(config(format!("HELMHOLTZ wavenumber {} is not a positive integer", self.omega)))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Constant channel values `[k11, k22, k12, v1, v2, omega]`.
    pub fn channel_values(&self) -> [f64; CHANNELS - 1] {
        let d = &self.diffusion;
        [d.k11, d.k22, d.k12, self.velocity[0], self.velocity[1], self.omega]
    }
}

/// Sampling ranges for the physical coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRanges {
    pub e: [f64; 2],
    pub psi: [f64; 2],
    pub omega: [u32; 2],
}

impl Default for CoefficientRanges {
    fn default() -> Self {
        Self {
            e: [1.0, 5.0],
            psi: [0.2, 1.0],
            omega: [1, 10],
        }
    }
}

impl CoefficientRanges {
    pub fn validate(&self, system: System) -> Result<()> {
        let [e_lo, e_hi] = self.e;
        if system != System::Helmholtz && !(e_lo >= 1.0 && e_lo <= e_hi && e_hi.is_finite()) {
            return Err(config(format!("eigenvalue range [{e_lo}, {e_hi}] must satisfy 1 <= lo <= hi")));
        }
        let [p_lo, p_hi] = self.psi;
        if system == System::AdvDiff && !(p_lo > 0.0 && p_lo <= p_hi && p_hi.is_finite()) {
            return Err(config(format!("psi range [{p_lo}, {p_hi}] must satisfy 0 < lo <= hi")));
        }
        let [w_lo, w_hi] = self.omega;
        if system == System::Helmholtz && !(w_lo >= 1 && w_lo <= w_hi) {
            return Err(config(format!("omega range [{w_lo}, {w_hi}] must satisfy 1 <= lo <= hi")));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws coefficients for `system`. Advection-diffusion velocities come back
/// as unit vectors; their magnitude is set by [`calibrate_velocity`].
pub fn sample_coefficients<R: Rng + ?Sized>(
    rng: &mut R,
    system: System,
    ranges: &CoefficientRanges,
) -> Result<PdeCoefficients> {
    ranges.validate(system)?;
    Ok(match system {
        System::Poisson => {
            let e = uniform(rng, ranges.e);
            let theta = rng.gen_range(0.0..2.0 * PI);
            PdeCoefficients::poisson(DiffusionTensor::from_eigen(e, theta))
        }
        System::AdvDiff => {
            let e = uniform(rng, ranges.e);
            let theta = rng.gen_range(0.0..2.0 * PI);
            let (s, c) = rng.gen_range(0.0..2.0 * PI).sin_cos();
            PdeCoefficients::adv_diff(DiffusionTensor::from_eigen(e, theta), [c, s])
        }
        System::Helmholtz => {
            let [lo, hi] = ranges.omega;
            PdeCoefficients::helmholtz(rng.gen_range(lo..=hi) as f64)
        }
    })
}

/// One labeled example.
#[derive(Clone, Debug, PartialEq)]
pub struct PdeInstance {
    pub coeffs: PdeCoefficients,
    pub source: RealField<f64>,
    pub solution: RealField<f64>,
    pub psi: f64,
    pub seed: u64,
}

impl PdeInstance {
    /// `||apply_operator(u) - f|| / ||f||`.
    pub fn residual(&self) -> f64 {
        let applied = apply_operator(&self.coeffs, &self.solution);
        applied.sub(&self.source).l2_norm() / self.source.l2_norm()
    }
}

/// Channels `[f, k11, k22, k12, v1, v2, omega]`, constants replicated over the grid.
pub fn stack_channels<T: Scalar>(instance: &PdeInstance) -> ChannelStack<T> {
    stack_from_parts(&instance.source.cast(), &instance.coeffs.channel_values())
}

pub(crate) fn stack_from_parts<T: Scalar>(
    source: &RealField<T>,
    constants: &[f64; CHANNELS - 1],
) -> ChannelStack<T> {
    let (h, w) = (source.h(), source.w());
    let n = h * w;
    let mut values = Vec::with_capacity(n * CHANNELS);
    values.extend_from_slice(source.values());
    for &c in constants {
        values.extend(std::iter::repeat_n(T::of(c), n));
    }
    ChannelStack::from_raw(h, w, values)
}
