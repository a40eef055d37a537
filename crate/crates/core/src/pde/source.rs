use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::field::RealField;

/// Sparse sums of periodic Gaussians on a regular lattice of spacing `2 sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub sigma: f64,
    pub sparsity_range: [f64; 2],
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0 / 32.0,
            sparsity_range: [0.2, 0.8],
        }
    }
}

impl SourceConfig {
    pub fn spacing(&self) -> f64 {
        2.0 * self.sigma
    }

    /// Centers per axis, `1 / (2 sigma)`.
    pub fn per_axis(&self) -> Result<usize> {
        let n = 1.0 / self.spacing();
        let rounded = n.round();
        if !(self.sigma > 0.0) || rounded < 1.0 || (n - rounded).abs() > 1e-9 * n {
            return Err(config(format!(
                "sigma {} does not tile the unit square with spacing 2 sigma",
                self.sigma
            )));
        }
        Ok(rounded as usize)
    }

    /// Total number of Gaussian centers.
    pub fn n_g(&self) -> Result<usize> {
        Ok(self.per_axis()?.pow(2))
    }

    pub fn validate(&self) -> Result<()> {
        self.per_axis()?;
        let [lo, hi] = self.sparsity_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(config(format!("sparsity range [{lo}, {hi}] must lie in [0, 1]")));
        }
        Ok(())
    }
}

/// Gaussian profile along one axis with wrapped distance, `g[i][a]`.
fn axis_profile(n: usize, centers: usize, spacing: f64, sigma: f64) -> Vec<f64> {
    let mut g = vec![0.0; n * centers];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in 0..n {
        let x = i as f64 / n as f64;
        for a in 0..centers {
            let d = (x - a as f64 * spacing).rem_euclid(1.0);
            let d = d.min(1.0 - d);
            g[i * centers + a] = (-d * d * inv).exp();
        }
    }
    g
}

/// `f(x) = sum_i p_i phi_i(x)` with `p_i ~ U(0, 1)` and a fraction
/// `s ~ U(sparsity_range)` of the weights zeroed.
pub fn sample_source<R: Rng + ?Sized>(rng: &mut R, cfg: &SourceConfig, h: usize, w: usize) -> Result<RealField<f64>> {
    cfg.validate()?;
    crate::field::check_grid(h, w)?;
    let per_axis = cfg.per_axis()?;
    let n_g = per_axis * per_axis;
    let [lo, hi] = cfg.sparsity_range;
    let s = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let mut p: Vec<f64> = (0..n_g).map(|_| rng.gen_range(0.0..1.0)).collect();
    let zeros = ((s * n_g as f64).round() as usize).min(n_g);
    for idx in sample(rng, n_g, zeros) {
        p[idx] = 0.0;
    }

    // separable: f = Gx P Gy^T with p laid out as P[a][b]
    let gx = axis_profile(h, per_axis, cfg.spacing(), cfg.sigma);
    let gy = axis_profile(w, per_axis, cfg.spacing(), cfg.sigma);
    let mut tmp = vec![0.0; h * per_axis];
    for i in 0..h {
        for a in 0..per_axis {
            let g = gx[i * per_axis + a];
            if g < 1e-300 {
                continue;
            }
            for b in 0..per_axis {
                tmp[i * per_axis + b] += g * p[a * per_axis + b];
            }
        }
    }
    let mut values = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            values[i * w + j] = (0..per_axis)
                .map(|b| tmp[i * per_axis + b] * gy[j * per_axis + b])
                .sum();
        }
    }
    RealField::new(h, w, values)
}
