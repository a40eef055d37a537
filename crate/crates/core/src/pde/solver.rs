use std::cell::Cell;
use std::f64::consts::PI;

use num_complex::Complex;

use super::PdeCoefficients;
use crate::error::{Error, Result};
use crate::field::{signed_freq, Fft2, RealField};
use crate::scalar::Scalar;

/// Relative tolerance on the calibrated advection/diffusion ratio.
pub const PSI_TOLERANCE: f64 = 0.05;

const CALIBRATION_BUDGET: usize = 64;

/// `D(k) = (2 pi)^2 k^T K k + i 2 pi v.k + omega` for signed integer frequencies.
pub fn pde_symbol(coeffs: &PdeCoefficients, kx: i64, ky: i64) -> Complex<f64> {
    let (kx, ky) = (kx as f64, ky as f64);
    let re = 4.0 * PI * PI * coeffs.diffusion.quadratic(kx, ky) + coeffs.omega;
    let im = 2.0 * PI * (coeffs.velocity[0] * kx + coeffs.velocity[1] * ky);
    Complex::new(re, im)
}

/// Frequencies used for odd-order terms: zero on Nyquist bins.
fn odd_freqs(kx: usize, ky: usize, h: usize, w: usize) -> (f64, f64) {
    let ox = if kx * 2 == h { 0.0 } else { signed_freq(kx, h) as f64 };
    let oy = if ky * 2 == w { 0.0 } else { signed_freq(ky, w) as f64 };
    (ox, oy)
}

/// `(2 pi)^2 k^T K k` at a stored bin, with the mixed term dropped on Nyquist bins.
fn grid_quadratic(coeffs: &PdeCoefficients, kx: usize, ky: usize, h: usize, w: usize) -> f64 {
    let (sx, sy) = (signed_freq(kx, h) as f64, signed_freq(ky, w) as f64);
    let (ox, oy) = odd_freqs(kx, ky, h, w);
    let k = &coeffs.diffusion;
    4.0 * PI * PI * (k.k11 * sx * sx + k.k22 * sy * sy + 2.0 * k.k12 * ox * oy)
}

/// Symbol at stored bin `(kx, ky)` of an `h x w` half spectrum.
///
/// Odd-order terms in a Nyquist frequency vanish so the discrete operator
/// maps real fields to real fields.
pub fn grid_symbol(coeffs: &PdeCoefficients, kx: usize, ky: usize, h: usize, w: usize) -> Complex<f64> {
    let (ox, oy) = odd_freqs(kx, ky, h, w);
    let odd = 2.0 * PI * (coeffs.velocity[0] * ox + coeffs.velocity[1] * oy);
    Complex::new(grid_quadratic(coeffs, kx, ky, h, w) + coeffs.omega, odd)
}

fn as_complex<T: Scalar>(z: Complex<f64>) -> Complex<T> {
    Complex::new(T::of(z.re), T::of(z.im))
}

fn zero_mean_tolerance<T: Scalar>(n: usize) -> f64 {
    1e-10_f64.max(100.0 * T::epsilon().f64() * (n as f64).sqrt())
}

/// Spectral solve: `u_hat = f_hat / D` away from vanishing symbols, zero mean when `D(0) = 0`.
pub fn solve_spectral<T: Scalar>(coeffs: &PdeCoefficients, source: &RealField<T>) -> Result<RealField<T>> {
    let (h, w) = (source.h(), source.w());
    let fft = Fft2::new(h, w)?;
    let mut spec = fft.forward(source);
    let singular_dc = grid_symbol(coeffs, 0, 0, h, w).norm() < 1e-12;
    if singular_dc {
        let norm = source.l2_norm().f64();
        let mean = spec.get(0, 0).norm().f64();
        if mean > zero_mean_tolerance::<T>(h * w) * norm {
            return Err(Error::Solvability { mean, norm });
        }
    }
    for kx in 0..h {
        for ky in 0..spec.half_w() {
            let d = grid_symbol(coeffs, kx, ky, h, w);
            let value = if d.norm() < 1e-12 {
                if (kx, ky) != (0, 0) {
                    return Err(Error::Resonance {
                        kx: signed_freq(kx, h),
                        ky: ky as i64,
                    });
                }
                Complex::new(T::zero(), T::zero())
            } else {
                spec.get(kx, ky) / as_complex::<T>(d)
            };
            spec.set(kx, ky, value);
        }
    }
    Ok(fft.inverse_real(&spec))
}

/// Forward application of the operator, `idft2(D * u_hat)`.
pub fn apply_operator<T: Scalar>(coeffs: &PdeCoefficients, u: &RealField<T>) -> RealField<T> {
    let (h, w) = (u.h(), u.w());
    let fft = Fft2::new(h, w).expect("RealField always has a valid grid");
    let spec = fft
        .forward(u)
        .map_modes(|_, ky, kx| as_complex(grid_symbol(coeffs, kx, ky, h, w)));
    fft.inverse_real(&spec)
}

/// `||v . grad u|| / ||div K grad u||` with spectral derivatives.
pub fn measure_psi<T: Scalar>(coeffs: &PdeCoefficients, u: &RealField<T>) -> Result<f64> {
    let (h, w) = (u.h(), u.w());
    let fft = Fft2::new(h, w)?;
    let spec = fft.forward(u);
    let advection = spec.map_modes(|_, ky, kx| {
        as_complex(Complex::new(0.0, grid_symbol(coeffs, kx, ky, h, w).im))
    });
    let diffusion = spec.map_modes(|_, ky, kx| Complex::new(T::of(-grid_quadratic(coeffs, kx, ky, h, w)), T::zero()));
    let num = fft.inverse_real(&advection).l2_norm().f64();
    let den = fft.inverse_real(&diffusion).l2_norm().f64();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::Degenerate("diffusion term vanishes; psi undefined".into()));
    }
    Ok(num / den)
}

/// Scales the velocity of `coeffs` so the realized ratio lands within
/// [`PSI_TOLERANCE`] of `target`. Returns the calibrated coefficients, the
/// solution and the realized ratio.
pub fn calibrate_velocity(
    coeffs: &PdeCoefficients,
    source: &RealField<f64>,
    target: f64,
) -> Result<(PdeCoefficients, RealField<f64>, f64)> {
    let [vx, vy] = coeffs.velocity;
    let speed = vx.hypot(vy);
    if speed == 0.0 || target <= 0.0 {
        return Err(Error::Degenerate("calibration needs a direction and a positive target".into()));
    }
    let dir = [vx / speed, vy / speed];
    let evals = Cell::new(0usize);
    let eval = |s: f64| -> Result<(PdeCoefficients, RealField<f64>, f64)> {
        evals.set(evals.get() + 1);
        let c = PdeCoefficients {
            velocity: [dir[0] * s, dir[1] * s],
            ..*coeffs
        };
        let u = solve_spectral(&c, source)?;
        let psi = measure_psi(&c, &u)?;
        Ok((c, u, psi))
    };
    let hit = |psi: f64| (psi - target).abs() <= PSI_TOLERANCE * target;

    // psi is close to linear in the speed when advection is weak
    let probe = eval(1.0)?;
    if hit(probe.2) {
        return Ok(probe);
    }
    let guess = if probe.2 > 0.0 { target / probe.2 } else { 1.0 };
    let first = eval(guess)?;
    if hit(first.2) {
        return Ok(first);
    }
    let (mut lo, mut hi) = if first.2 < target { (guess, guess * 2.0) } else { (0.0, guess) };
    if first.2 < target {
        loop {
            let r = eval(hi)?;
            if hit(r.2) {
                return Ok(r);
            }
            if r.2 > target {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if evals.get() >= CALIBRATION_BUDGET {
                return Err(Error::Degenerate(format!("could not bracket psi target {target}")));
            }
        }
    }
    while evals.get() < CALIBRATION_BUDGET {
        let mid = 0.5 * (lo + hi);
        let r = eval(mid)?;
        if hit(r.2) {
            return Ok(r);
        }
        if r.2 < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Degenerate(format!("psi calibration for target {target} did not converge")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::DiffusionTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sin_x(n: usize) -> RealField<f64> {
        RealField::from_fn(n, n, |x, _| (2.0 * PI * x).sin()).unwrap()
    }

    #[test]
    fn symbol_examples() {
        let p = PdeCoefficients::poisson(DiffusionTensor::identity());
        assert!((pde_symbol(&p, 1, 0) - Complex::new(4.0 * PI * PI, 0.0)).norm() < 1e-12);
        assert_eq!(pde_symbol(&p, 0, 0), Complex::new(0.0, 0.0));
        let hm = PdeCoefficients::helmholtz(1.0);
        assert!((pde_symbol(&hm, 1, 0).re - (4.0 * PI * PI + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn poisson_single_mode() {
        let p = PdeCoefficients::poisson(DiffusionTensor::identity());
        let u = solve_spectral(&p, &sin_x(64)).unwrap();
        let exact = sin_x(64).scale(1.0 / (4.0 * PI * PI));
        assert!(u.max_abs_diff(&exact) < 1e-10);
    }

    #[test]
    fn helmholtz_single_mode() {
        let f = RealField::<f64>::from_fn(64, 64, |_, y| (2.0 * PI * y).cos()).unwrap();
        let u = solve_spectral(&PdeCoefficients::helmholtz(1.0), &f).unwrap();
        let exact = f.scale(1.0 / (4.0 * PI * PI + 1.0));
        assert!(u.max_abs_diff(&exact) < 1e-10);
    }

    #[test]
    fn adv_diff_single_mode() {
        let c = PdeCoefficients::adv_diff(DiffusionTensor::identity(), [1.0, 0.0]);
        let u = solve_spectral(&c, &sin_x(64)).unwrap();
        let p2 = PI * PI;
        let exact = RealField::<f64>::from_fn(64, 64, |x, _| {
            (4.0 * p2 * (2.0 * PI * x).sin() - 2.0 * PI * (2.0 * PI * x).cos())
                / (16.0 * p2 * p2 + 4.0 * p2)
        })
        .unwrap();
        assert!(u.max_abs_diff(&exact) < 1e-10);
    }

    #[test]
    fn non_zero_mean_source_is_unsolvable() {
        let p = PdeCoefficients::poisson(DiffusionTensor::identity());
        let f = sin_x(16).map(|v| v + 0.5);
        assert!(matches!(solve_spectral(&p, &f), Err(Error::Solvability { .. })));
        // helmholtz has an invertible zero mode
        assert!(solve_spectral(&PdeCoefficients::helmholtz(2.0), &f).is_ok());
    }

    #[test]
    fn operator_of_constants() {
        let one = RealField::<f64>::constant(16, 16, 1.0).unwrap();
        let p = PdeCoefficients::poisson(DiffusionTensor::from_eigen(3.0, 0.2));
        assert!(apply_operator(&p, &one).max_abs() < 1e-12);
        let hm = apply_operator(&PdeCoefficients::helmholtz(3.0), &one);
        assert!(hm.values().iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn residual_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = RealField::<f64>::new(32, 32, (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
            .subtract_mean();
        let c = PdeCoefficients::adv_diff(DiffusionTensor::from_eigen(4.0, 1.1), [3.0, -2.0]);
        let u = solve_spectral(&c, &f).unwrap();
        let r = apply_operator(&c, &u).sub(&f).l2_norm() / f.l2_norm();
        assert!(r < 1e-12, "residual {r}");
        assert!(u.mean().abs() < 1e-12 * u.l2_norm());
    }

    #[test]
    fn psi_examples() {
        let f = sin_x(32);
        let still = PdeCoefficients::adv_diff(DiffusionTensor::identity(), [0.0, 0.0]);
        let u = solve_spectral(&still, &f).unwrap();
        assert_eq!(measure_psi(&still, &u).unwrap(), 0.0);

        let c = PdeCoefficients::adv_diff(DiffusionTensor::identity(), [2.0 * PI, 0.0]);
        let u = solve_spectral(&c, &f).unwrap();
        assert!((measure_psi(&c, &u).unwrap() - 1.0).abs() < 1e-12);

        let doubled = PdeCoefficients { velocity: [4.0 * PI, 0.0], ..c };
        assert!((measure_psi(&doubled, &u).unwrap() - 2.0).abs() < 1e-12);

        let zero = RealField::<f64>::zeros(8, 8).unwrap();
        assert!(matches!(measure_psi(&c, &zero), Err(Error::Degenerate(_))));
    }

    #[test]
    fn calibration_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = RealField::<f64>::new(32, 32, (0..1024).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap()
            .subtract_mean();
        let c = PdeCoefficients::adv_diff(DiffusionTensor::from_eigen(2.0, 0.5), [0.6, 0.8]);
        for target in [0.2, 1.0, 3.7] {
            let (cal, u, psi) = calibrate_velocity(&c, &f, target).unwrap();
            assert!((psi - target).abs() <= PSI_TOLERANCE * target);
            assert!((measure_psi(&cal, &u).unwrap() - psi).abs() < 1e-12);
        }
    }
}
