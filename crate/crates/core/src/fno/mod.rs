//! Fourier neural operator: pointwise lifting, spectral-convolution blocks
//! and a pointwise projection head, with exact reverse-mode gradients.

mod network;
mod spectral;

pub use network::{forward, forward_normalized, Fno, ForwardCache};
pub use spectral::{retained_rows, SpectralConv};

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::field::CHANNELS;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Tanh-form Gaussian error linear unit.
    Gelu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let (a, b) = gelu_consts::<T>();
                let half = T::of(0.5);
                half * x * (T::one() + fast_tanh(a * (x + b * x * x * x)))
            }
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        self.apply_with_derivative(x).1
    }

    /// Value and slope from a single transcendental evaluation.
    #[inline]
    pub fn apply_with_derivative<T: Scalar>(self, x: T) -> (T, T) {
        match self {
            Activation::Gelu => {
                let (a, b) = gelu_consts::<T>();
                let half = T::of(0.5);
                let t = fast_tanh(a * (x + b * x * x * x));
                let y = half * x * (T::one() + t);
                let dy = half * (T::one() + t)
                    + half * x * (T::one() - t * t) * a * (T::one() + T::of(3.0) * b * x * x);
                (y, dy)
            }
        }
    }
}

/// `tanh` through one exponential; saturates correctly at both ends.
#[inline]
fn fast_tanh<T: Scalar>(u: T) -> T {
    let two = T::of(2.0);
    T::one() - two / (T::one() + (two * u).exp())
}

#[inline]
fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::of(0.797_884_560_802_865_4), T::of(0.044_715))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnoConfig {
    pub c_in: usize,
    /// Embedding width.
    pub d: usize,
    /// Mode cutoff per axis.
    pub m: usize,
    pub layers: usize,
    pub head_width: usize,
    pub activation: Activation,
}

impl FnoConfig {
    pub fn new(d: usize, m: usize) -> Self {
        Self {
            c_in: CHANNELS,
            d,
            m,
            layers: 4,
            head_width: 128,
            activation: Activation::Gelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 || self.layers == 0 || self.head_width == 0 || self.c_in == 0 {
            return Err(config(format!("invalid model configuration {self:?}")));
        }
        Ok(())
    }

    /// Mode cutoff must stay within the Nyquist limit of the grid.
    pub fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        crate::field::check_grid(h, w)?;
        if self.m > h / 2 || self.m > w / 2 {
            return Err(config(format!(
                "mode cutoff {} exceeds the Nyquist limit of a {h}x{w} grid",
                self.m
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!("d{}-m{}-L{}", self.d, self.m, self.layers)
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

/// Exact number of trainable scalars; each complex weight counts twice.
pub fn param_count(cfg: &FnoConfig) -> usize {
    let (d, m) = (cfg.d, cfg.m);
    cfg.layers * (2 * 2 * d * d * m * m + d * d + d)
        + (cfg.c_in * d + d)
        + (d * cfg.head_width + cfg.head_width)
        + (cfg.head_width + 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub phi_pos: Range<usize>,
    pub phi_neg: Range<usize>,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

/// Offsets into the flat parameter vector, in checkpoint traversal order:
/// lifting, blocks (`phi_pos`, `phi_neg` interleaved re/im, `W`, bias), head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub lift_weight: Range<usize>,
    pub lift_bias: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub head_weight1: Range<usize>,
    pub head_bias1: Range<usize>,
    pub head_weight2: Range<usize>,
    pub head_bias2: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &FnoConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (d, m) = (cfg.d, cfg.m);
        let lift_weight = take(d * cfg.c_in);
        let lift_bias = take(d);
        let blocks = (0..cfg.layers)
            .map(|_| BlockLayout {
                phi_pos: take(2 * d * d * m * m),
                phi_neg: take(2 * d * d * m * m),
                weight: take(d * d),
                bias: take(d),
            })
            .collect();
        let head_weight1 = take(cfg.head_width * d);
        let head_bias1 = take(cfg.head_width);
        let head_weight2 = take(cfg.head_width);
        let head_bias2 = take(1);
        Self {
            lift_weight,
            lift_bias,
            blocks,
            head_weight1,
            head_bias1,
            head_weight2,
            head_bias2,
            total: at,
        }
    }

    /// Named parameter groups in traversal order.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut g = vec![
            ("lift.weight".to_string(), self.lift_weight.clone()),
            ("lift.bias".to_string(), self.lift_bias.clone()),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            g.push((format!("block{l}.phi_pos"), b.phi_pos.clone()));
            g.push((format!("block{l}.phi_neg"), b.phi_neg.clone()));
            g.push((format!("block{l}.weight"), b.weight.clone()));
            g.push((format!("block{l}.bias"), b.bias.clone()));
        }
        g.push(("head.weight1".to_string(), self.head_weight1.clone()));
        g.push(("head.bias1".to_string(), self.head_bias1.clone()));
        g.push(("head.weight2".to_string(), self.head_weight2.clone()));
        g.push(("head.bias2".to_string(), self.head_bias2.clone()));
        g
    }
}

/// All learnable weights, stored flat in [`ParamLayout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct FnoParams<T> {
    pub config: FnoConfig,
    pub values: Vec<T>,
}

impl<T: Scalar> FnoParams<T> {
    pub fn zeros(config: FnoConfig) -> Self {
        Self {
            config,
            values: vec![T::zero(); param_count(&config)],
        }
    }

    pub fn from_values(config: FnoConfig, values: Vec<T>) -> Result<Self> {
        config.validate()?;
        if values.len() != param_count(&config) {
            return Err(config_err(values.len(), param_count(&config)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::Degenerate("non-finite parameter".into()));
        }
        Ok(Self { config, values })
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.config)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> FnoParams<U> {
        FnoParams {
            config: self.config,
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + *b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn config_err(got: usize, want: usize) -> crate::Error {
    config(format!("parameter vector has {got} entries, configuration needs {want}"))
}

/// Affine weights and biases `~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; spectral
/// weights have real and imaginary parts `~ U(0, 1) / d^2`.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(config: FnoConfig, rng: &mut R) -> Result<FnoParams<T>> {
    config.validate()?;
    let layout = ParamLayout::new(&config);
    let mut values = vec![T::zero(); layout.total];
    let mut fill_affine = |range: Range<usize>, fan_in: usize, rng: &mut R| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut values[range] {
            *v = T::of(rng.gen_range(-bound..bound));
        }
    };
    fill_affine(layout.lift_weight.clone(), config.c_in, rng);
    fill_affine(layout.lift_bias.clone(), config.c_in, rng);
    let spectral_scale = 1.0 / (config.d * config.d) as f64;
    let mut spectral = Vec::new();
    for b in &layout.blocks {
        spectral.push(b.phi_pos.clone());
        spectral.push(b.phi_neg.clone());
        fill_affine(b.weight.clone(), config.d, rng);
        fill_affine(b.bias.clone(), config.d, rng);
    }
    fill_affine(layout.head_weight1.clone(), config.d, rng);
    fill_affine(layout.head_bias1.clone(), config.d, rng);
    fill_affine(layout.head_weight2.clone(), config.head_width, rng);
    fill_affine(layout.head_bias2.clone(), config.head_width, rng);
    for range in spectral {
        for v in &mut values[range] {
            *v = T::of(rng.gen::<f64>() * spectral_scale);
        }
    }
    Ok(FnoParams { config, values })
}
