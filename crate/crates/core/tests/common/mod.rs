//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use fnotl::fno::{Fno, FnoConfig, FnoParams};
use fnotl::harness::preset;
use fnotl::pde::{generate_dataset, Dataset, DatasetManifest, PdeCoefficients, SplitCounts};
use fnotl::train::{loss_and_grad, Prepared};
use fnotl::{Fft2, RealField};
use num_complex::Complex;

pub fn dataset(name: &str, grid: usize, counts: SplitCounts, seed: u64) -> Dataset {
    let p = preset(name).expect("known preset");
    let m = DatasetManifest::new(p.name, p.system, grid, counts, p.ranges, seed);
    generate_dataset(&m).expect("generation succeeds").0
}

pub fn counts(train: usize, val: usize, test: usize) -> SplitCounts {
    SplitCounts { train, val, test }
}

/// Second-order centered finite differences of `-div(K grad u) + v.grad u + omega u`
/// on the periodic grid, applied in real space.
pub fn fd_apply(c: &PdeCoefficients, u: &RealField<f64>) -> RealField<f64> {
    let (h, w) = (u.h(), u.w());
    let (dx, dy) = (1.0 / h as f64, 1.0 / w as f64);
    let k = &c.diffusion;
    let at = |i: isize, j: isize| u.get(i.rem_euclid(h as isize) as usize, j.rem_euclid(w as isize) as usize);
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let uxx = (at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j)) / (dx * dx);
            let uyy = (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)) / (dy * dy);
            let uxy = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) / (4.0 * dx * dy);
            let ux = (at(i + 1, j) - at(i - 1, j)) / (2.0 * dx);
            let uy = (at(i, j + 1) - at(i, j - 1)) / (2.0 * dy);
            out[i as usize * w + j as usize] = -(k.k11 * uxx + 2.0 * k.k12 * uxy + k.k22 * uyy)
                + c.velocity[0] * ux
                + c.velocity[1] * uy
                + c.omega * at(i, j);
        }
    }
    RealField::new(h, w, out).unwrap()
}

/// Eigenvalue of the [`fd_apply`] stencil on Fourier mode `(kx, ky)`.
fn fd_symbol(c: &PdeCoefficients, kx: usize, ky: usize, h: usize, w: usize) -> Complex<f64> {
    let (tx, ty) = (2.0 * PI * kx as f64 / h as f64, 2.0 * PI * ky as f64 / w as f64);
    let (hx, hy) = (h as f64, w as f64);
    let k = &c.diffusion;
    let re = k.k11 * (2.0 - 2.0 * tx.cos()) * hx * hx
        + k.k22 * (2.0 - 2.0 * ty.cos()) * hy * hy
        + 2.0 * k.k12 * tx.sin() * ty.sin() * hx * hy
        + c.omega;
    let im = c.velocity[0] * tx.sin() * hx + c.velocity[1] * ty.sin() * hy;
    Complex::new(re, im)
}

/// Exact solution of the periodic finite-difference system, zero mean when singular.
pub fn fd_solve(c: &PdeCoefficients, f: &RealField<f64>) -> RealField<f64> {
    let (h, w) = (f.h(), f.w());
    let fft = Fft2::new(h, w).unwrap();
    let spec = fft.forward(f);
    let solved = spec.map_modes(|_, ky, kx| {
        let d = fd_symbol(c, kx, ky, h, w);
        if d.norm() < 1e-12 {
            Complex::new(0.0, 0.0)
        } else {
            Complex::new(1.0, 0.0) / d
        }
    });
    fft.inverse_real(&solved)
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Central-difference check of every parameter group. Returns
/// `(group, relative error)` with the error measured over up to `per_group`
/// evenly spaced entries of the group.
pub fn gradient_check(
    config: FnoConfig,
    params: &FnoParams<f64>,
    batch: &[Prepared<f64>],
    grid: usize,
    step: f64,
    per_group: usize,
) -> Vec<(String, f64)> {
    let fno = Fno::new(config, grid, grid).unwrap();
    let (_, grad) = loss_and_grad(&fno, params, batch).unwrap();
    let loss_at = |p: &FnoParams<f64>| loss_and_grad(&fno, p, batch).unwrap().0;
    let mut out = Vec::new();
    for (name, range) in params.layout().groups() {
        let stride = (range.len() / per_group).max(1);
        let (mut num, mut den) = (0.0, 0.0);
        for idx in range.clone().step_by(stride) {
            let mut plus = params.clone();
            plus.values[idx] += step;
            let mut minus = params.clone();
            minus.values[idx] -= step;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            num += (fd - grad.values[idx]).powi(2);
            den += fd * fd;
        }
        let rel = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        out.push((name, rel));
    }
    out
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Random real field built from twelve Fourier modes with `|kx|, ky <= 3`.
pub fn band_limited(rng: &mut impl rand::Rng, grid: usize) -> RealField<f64> {
    let terms: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.gen_range(-3..=3) as f64,
                rng.gen_range(0..=3) as f64,
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    RealField::from_fn(grid, grid, |x, y| {
        terms.iter().map(|(a, b, c, p)| c * (2.0 * PI * (a * x + b * y) + p).cos()).sum()
    })
    .unwrap()
}

/// Two-example probe batch whose energy sits inside the retained modes, so
/// every spectral weight has a gradient well above finite-difference roundoff.
pub fn probe_batch(seed: u64, grid: usize) -> Vec<Prepared<f64>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|_| Prepared {
            input: (0..fnotl::CHANNELS).flat_map(|_| band_limited(&mut rng, grid).into_values()).collect(),
            target: band_limited(&mut rng, grid).into_values(),
        })
        .collect()
}

/// Poisson instances whose sources, and hence solutions, lie inside `|kx|, ky <= 3`.
pub fn band_limited_samples(seed: u64, n: usize, grid: usize) -> Vec<fnotl::pde::Sample> {
    use fnotl::pde::{sample_coefficients, solve_spectral, Sample};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let source = band_limited(&mut rng, grid).subtract_mean();
            let coeffs = sample_coefficients(&mut rng, fnotl::System::Poisson, &Default::default()).unwrap();
            let solution = solve_spectral(&coeffs, &source).unwrap();
            Sample::from_instance(&fnotl::PdeInstance { coeffs, source, solution, psi: 0.0, seed: 0 })
        })
        .collect()
}
