//! Ground-truth datasets for periodic elliptic PDEs, Fourier neural operator
//! surrogates trained on them, and the pre-train/fine-tune sweeps that
//! measure how well those surrogates transfer.
//!
//! Numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64` and
//! `*32` aliases below fix the precision.

pub mod error;
pub mod field;
pub mod fno;
pub mod harness;
pub mod normalize;
pub mod pde;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use field::{dft2, idft2, l2_norm, periodic_shift, ChannelStack, Fft2, RealField, SpectralField, CHANNELS};
pub use fno::{init_params, param_count, FnoConfig, FnoParams};
pub use normalize::{fit_references, normalize_stack, NormalizationReferences};
pub use pde::{PdeCoefficients, PdeInstance, System};
pub use scalar::Scalar;
pub use train::{Checkpoint, TrainConfig, TrainMode};

pub type RealField64 = RealField<f64>;
pub type RealField32 = RealField<f32>;
pub type SpectralField64 = SpectralField<f64>;
pub type SpectralField32 = SpectralField<f32>;
pub type ChannelStack64 = ChannelStack<f64>;
pub type ChannelStack32 = ChannelStack<f32>;
pub type FnoParams64 = FnoParams<f64>;
pub type FnoParams32 = FnoParams<f32>;
pub type Checkpoint64 = Checkpoint<f64>;
pub type Checkpoint32 = Checkpoint<f32>;
