//! Real and spectral grid fields on the periodic unit square.
//!
//! Sample `(i, j)` of an `h x w` field sits at `x = i / h`, `y = j / w`, so
//! the row index carries the first coordinate and the row frequency `kx`.
//!
//! Transforms use the unnormalized forward convention
//! `F[kx, ky] = sum_{i,j} f[i, j] exp(-2 pi i (kx i / h + ky j / w))` and the
//! `1 / (h w)` scaled inverse. Spectra are stored in half-spectrum layout,
//! `h x (w / 2 + 1)`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::scalar::Scalar;

/// Number of input channels in the fixed layout `[f, k11, k22, k12, v1, v2, omega]`.
pub const CHANNELS: usize = 7;

pub fn check_grid(h: usize, w: usize) -> Result<()> {
    if h < 4 || w < 4 || h % 2 != 0 || w % 2 != 0 {
        return Err(config(format!(
            "grid {h}x{w} must have even dimensions of at least 4"
        )));
    }
    Ok(())
}

/// Signed frequency for an FFT bin index.
#[inline]
pub fn signed_freq(k: usize, n: usize) -> i64 {
    if k > n / 2 {
        k as i64 - n as i64
    } else {
        k as i64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealField<T> {
    h: usize,
    w: usize,
    values: Vec<T>,
}

impl<T: Scalar> RealField<T> {
    pub fn new(h: usize, w: usize, values: Vec<T>) -> Result<Self> {
        check_grid(h, w)?;
        if values.len() != h * w {
            return Err(config(format!(
                "field of {} values does not match grid {h}x{w}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("field contains non-finite values".into()));
        }
        Ok(Self { h, w, values })
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::new(h, w, vec![T::zero(); h * w])
    }

    pub fn constant(h: usize, w: usize, value: T) -> Result<Self> {
        Self::new(h, w, vec![value; h * w])
    }

    /// Samples `f(x, y)` at `x = i / h`, `y = j / w`.
    pub fn from_fn(h: usize, w: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(h * w);
        for i in 0..h {
            let x = i as f64 / h as f64;
            for j in 0..w {
                let y = j as f64 / w as f64;
                values.push(T::of(f(x, y)));
            }
        }
        Self::new(h, w, values)
    }

    /// Skips validation; only for values produced by crate-internal arithmetic.
    pub(crate) fn from_raw(h: usize, w: usize, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), h * w);
        Self { h, w, values }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.w + j]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.h, self.w, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: T, other: &Self, b: T) -> Self {
        assert_eq!((self.h, self.w), (other.h, other.w), "grid mismatch");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        Self::from_raw(self.h, self.w, values)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpby(T::one(), other, -T::one())
    }

    pub fn mean(&self) -> T {
        let sum: T = self.values.iter().copied().sum();
        sum / T::of((self.h * self.w) as f64)
    }

    pub fn subtract_mean(&self) -> Self {
        let mean = self.mean();
        self.map(|v| v - mean)
    }

    pub fn l2_norm(&self) -> T {
        l2_norm(self)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.sub(other).max_abs()
    }

    pub fn cast<U: Scalar>(&self) -> RealField<U> {
        RealField::from_raw(
            self.h,
            self.w,
            self.values.iter().map(|v| U::of(v.f64())).collect(),
        )
    }
}

/// Euclidean norm of the flattened sample vector.
pub fn l2_norm<T: Scalar>(field: &RealField<T>) -> T {
    norm(&field.values)
}

pub(crate) fn norm<T: Scalar>(values: &[T]) -> T {
    // accumulate in f64 so f32 fields do not lose precision on large grids
    let sum: f64 = values.iter().map(|v| v.f64() * v.f64()).sum();
    T::of(sum.sqrt())
}

/// Moves sample `(i, j)` to `((i + di) mod h, (j + dj) mod w)`.
pub fn periodic_shift<T: Scalar>(field: &RealField<T>, di: i64, dj: i64) -> RealField<T> {
    let (h, w) = (field.h, field.w);
    let mut out = vec![T::zero(); h * w];
    shift_into(&field.values, h, w, di, dj, &mut out);
    RealField::from_raw(h, w, out)
}

pub(crate) fn shift_into<T: Copy>(src: &[T], h: usize, w: usize, di: i64, dj: i64, out: &mut [T]) {
    let si = di.rem_euclid(h as i64) as usize;
    let sj = dj.rem_euclid(w as i64) as usize;
    for i in 0..h {
        let ti = (i + si) % h;
        for j in 0..w {
            out[ti * w + (j + sj) % w] = src[i * w + j];
        }
    }
}

/// Half-spectrum coefficients, `h x (w / 2 + 1)`, row-major in `(kx, ky)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField<T> {
    h: usize,
    w: usize,
    coeffs: Vec<Complex<T>>,
}

impl<T: Scalar> SpectralField<T> {
    pub fn new(h: usize, w: usize, coeffs: Vec<Complex<T>>) -> Result<Self> {
        check_grid(h, w)?;
        if coeffs.len() != h * (w / 2 + 1) {
            return Err(config(format!(
                "spectrum of {} coefficients does not match grid {h}x{w}",
                coeffs.len()
            )));
        }
        Ok(Self { h, w, coeffs })
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::new(h, w, vec![Complex::new(T::zero(), T::zero()); h * (w / 2 + 1)])
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// Stored columns, `w / 2 + 1`.
    pub fn half_w(&self) -> usize {
        self.w / 2 + 1
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    #[inline]
    pub fn get(&self, kx: usize, ky: usize) -> Complex<T> {
        self.coeffs[kx * self.half_w() + ky]
    }

    #[inline]
    pub fn set(&mut self, kx: usize, ky: usize, value: Complex<T>) {
        let hw = self.half_w();
        self.coeffs[kx * hw + ky] = value;
    }

    /// Multiplies every coefficient by `f(kx_signed, ky, kx_index)`.
    pub fn map_modes(&self, f: impl Fn(i64, usize, usize) -> Complex<T>) -> Self {
        let hw = self.half_w();
        let mut coeffs = self.coeffs.clone();
        for kx in 0..self.h {
            let sk = signed_freq(kx, self.h);
            for ky in 0..hw {
                coeffs[kx * hw + ky] = coeffs[kx * hw + ky] * f(sk, ky, kx);
            }
        }
        Self {
            h: self.h,
            w: self.w,
            coeffs,
        }
    }

    /// `sum |f|^2` over the full spectrum, reconstructing conjugate partners.
    pub fn energy(&self) -> T {
        let hw = self.half_w();
        let mut total = 0.0;
        for kx in 0..self.h {
            for ky in 0..hw {
                let weight = if ky == 0 || ky == self.w / 2 { 1.0 } else { 2.0 };
                total += weight * self.coeffs[kx * hw + ky].norm_sqr().f64();
            }
        }
        T::of(total)
    }
}

/// Cached 1-D plans for a fixed `h x w` grid.
#[derive(Clone)]
pub struct Fft2<T: Scalar> {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> std::fmt::Debug for Fft2<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.h, self.w)
    }
}

impl<T: Scalar> Fft2<T> {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        check_grid(h, w)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn forward(&self, field: &RealField<T>) -> SpectralField<T> {
        assert_eq!((field.h, field.w), (self.h, self.w), "grid mismatch");
        let cols: Vec<usize> = (0..self.w / 2 + 1).collect();
        let rows: Vec<usize> = (0..self.h).collect();
        let mut coeffs = vec![zero(); self.h * cols.len()];
        self.analyze(&field.values, &rows, &cols, &mut coeffs);
        SpectralField {
            h: self.h,
            w: self.w,
            coeffs,
        }
    }

    /// Inverse with real-output semantics: imaginary parts at the
    /// self-conjugate bins are ignored and conjugate partners are implied.
    pub fn inverse_real(&self, spec: &SpectralField<T>) -> RealField<T> {
        assert_eq!((spec.h, spec.w), (self.h, self.w), "grid mismatch");
        let hw = self.w / 2 + 1;
        let mut cols = vec![zero(); hw * self.h];
        for kx in 0..self.h {
            for ky in 0..hw {
                cols[ky * self.h + kx] = spec.coeffs[kx * hw + ky];
            }
        }
        self.col_inv.process(&mut cols);
        let mut rows = vec![zero(); self.h * self.w];
        for i in 0..self.h {
            let row = &mut rows[i * self.w..(i + 1) * self.w];
            for ky in 0..hw {
                let z = cols[ky * self.h + i];
                row[ky] = z;
                if ky > 0 && ky < self.w / 2 {
                    row[self.w - ky] = z.conj();
                }
            }
        }
        self.row_inv.process(&mut rows);
        let scale = T::one() / T::of((self.h * self.w) as f64);
        RealField::from_raw(
            self.h,
            self.w,
            rows.into_iter().map(|z| z.re * scale).collect(),
        )
    }

    /// Checked inverse: the four self-conjugate bins must be real.
    pub fn inverse(&self, spec: &SpectralField<T>) -> Result<RealField<T>> {
        let scale = spec
            .coeffs
            .iter()
            .fold(0.0f64, |acc, z| acc.max(z.norm().f64()))
            .max(1.0);
        let tol = 1e-12_f64.max(T::epsilon().f64() * 64.0) * scale;
        for kx in [0, self.h / 2] {
            for ky in [0, self.w / 2] {
                let im = spec.get(kx, ky).im.f64();
                if im.abs() > tol {
                    return Err(Error::InvalidSpectrum(format!(
                        "self-conjugate bin ({kx}, {ky}) has imaginary part {im:e}"
                    )));
                }
            }
        }
        Ok(self.inverse_real(spec))
    }

    /// Unnormalized forward transform restricted to the given row/column bins.
    ///
    /// `out[r * cols.len() + c] = F[rows[r], cols[c]]`; every column index
    /// must be at most `w / 2`.
    pub fn analyze(&self, values: &[T], rows: &[usize], cols: &[usize], out: &mut [Complex<T>]) {
        let (h, w) = (self.h, self.w);
        debug_assert_eq!(values.len(), h * w);
        debug_assert_eq!(out.len(), rows.len() * cols.len());
        let mut buf: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.row_fwd.process(&mut buf);
        let mut colbuf = vec![zero(); cols.len() * h];
        for (c, &ky) in cols.iter().enumerate() {
            for i in 0..h {
                colbuf[c * h + i] = buf[i * w + ky];
            }
        }
        self.col_fwd.process(&mut colbuf);
        let nc = cols.len();
        for (r, &kx) in rows.iter().enumerate() {
            for c in 0..nc {
                out[r * nc + c] = colbuf[c * h + kx];
            }
        }
    }

    /// Adjoint of [`Fft2::analyze`]: `out[x] = Re sum_k z_k exp(+i theta_k(x))`
    /// over the listed bins, with no conjugate-partner doubling and no scaling.
    pub fn synthesize(&self, z: &[Complex<T>], rows: &[usize], cols: &[usize], out: &mut [T]) {
        let (h, w) = (self.h, self.w);
        let nc = cols.len();
        debug_assert_eq!(z.len(), rows.len() * nc);
        let mut colbuf = vec![zero(); nc * h];
        for (r, &kx) in rows.iter().enumerate() {
            for c in 0..nc {
                colbuf[c * h + kx] = z[r * nc + c];
            }
        }
        self.col_inv.process(&mut colbuf);
        let mut buf = vec![zero(); h * w];
        for (c, &ky) in cols.iter().enumerate() {
            for i in 0..h {
                buf[i * w + ky] = colbuf[c * h + i];
            }
        }
        self.row_inv.process(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re;
        }
    }
}

#[inline]
fn zero<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

pub fn dft2<T: Scalar>(field: &RealField<T>) -> SpectralField<T> {
    Fft2::new(field.h, field.w)
        .expect("RealField always has a valid grid")
        .forward(field)
}

pub fn idft2<T: Scalar>(spec: &SpectralField<T>) -> Result<RealField<T>> {
    Fft2::new(spec.h, spec.w)?.inverse(spec)
}

/// `c` channels of `h x w` samples, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStack<T> {
    h: usize,
    w: usize,
    values: Vec<T>,
}

impl<T: Scalar> ChannelStack<T> {
    pub fn new(h: usize, w: usize, values: Vec<T>) -> Result<Self> {
        check_grid(h, w)?;
        if values.len() != h * w * CHANNELS {
            return Err(config(format!(
                "stack of {} values does not match {CHANNELS} channels on {h}x{w}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("stack contains non-finite values".into()));
        }
        Ok(Self { h, w, values })
    }

    pub fn from_channels(channels: &[RealField<T>]) -> Result<Self> {
        if channels.len() != CHANNELS {
            return Err(config(format!("expected {CHANNELS} channels, got {}", channels.len())));
        }
        let (h, w) = (channels[0].h, channels[0].w);
        let mut values = Vec::with_capacity(h * w * CHANNELS);
        for ch in channels {
            if (ch.h, ch.w) != (h, w) {
                return Err(config("channel grids differ"));
            }
            values.extend_from_slice(&ch.values);
        }
        Self::new(h, w, values)
    }

    pub(crate) fn from_raw(h: usize, w: usize, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), h * w * CHANNELS);
        Self { h, w, values }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        CHANNELS
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.h * self.w;
        &self.values[ch * n..(ch + 1) * n]
    }

    pub fn channel_field(&self, ch: usize) -> RealField<T> {
        RealField::from_raw(self.h, self.w, self.channel(ch).to_vec())
    }

    pub fn source(&self) -> RealField<T> {
        self.channel_field(0)
    }

    pub fn scale(&self, c: T) -> Self {
        Self::from_raw(self.h, self.w, self.values.iter().map(|&v| v * c).collect())
    }

    pub fn shift(&self, di: i64, dj: i64) -> Self {
        let n = self.h * self.w;
        let mut out = vec![T::zero(); self.values.len()];
        for ch in 0..CHANNELS {
            shift_into(
                &self.values[ch * n..(ch + 1) * n],
                self.h,
                self.w,
                di,
                dj,
                &mut out[ch * n..(ch + 1) * n],
            );
        }
        Self::from_raw(self.h, self.w, out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }
}
