use num_complex::Complex;

use crate::error::{config, Result};
use crate::field::Fft2;
use crate::scalar::Scalar;

/// Row bins kept by a cutoff `m`: `0..m` (positive half) then `h-m..h` (negative half).
pub fn retained_rows(h: usize, m: usize) -> Vec<usize> {
    (0..m).chain(h - m..h).collect()
}

/// Spectral convolution on a fixed grid.
///
/// Retained coefficients are laid out `[channel][row][ky]` with the `2m`
/// retained rows from [`retained_rows`] and `ky in 0..m`. Weights are
/// `[out][in][kx][ky]` complex, stored as interleaved re/im pairs, one array
/// per half-plane.
#[derive(Clone, Debug)]
pub struct SpectralConv<T: Scalar> {
    fft: Fft2<T>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    d: usize,
    m: usize,
}

impl<T: Scalar> SpectralConv<T> {
    pub fn new(h: usize, w: usize, d: usize, m: usize) -> Result<Self> {
        if m == 0 || m > h / 2 || m > w / 2 {
            return Err(config(format!("mode cutoff {m} outside 1..=Nyquist for {h}x{w}")));
        }
        Ok(Self {
            fft: Fft2::new(h, w)?,
            rows: retained_rows(h, m),
            cols: (0..m).collect(),
            d,
            m,
        })
    }

    /// Retained modes per channel, `2 m^2`.
    pub fn modes(&self) -> usize {
        2 * self.m * self.m
    }

    fn n(&self) -> usize {
        self.fft.h() * self.fft.w()
    }

    /// Output scale per retained mode: conjugate-partner doubling over `h w`.
    fn mode_scale(&self) -> Vec<T> {
        let n = T::of(self.n() as f64);
        let mut s = Vec::with_capacity(self.modes());
        for _ in 0..2 * self.m {
            for ky in 0..self.m {
                s.push(if ky == 0 { T::one() / n } else { T::of(2.0) / n });
            }
        }
        s
    }

    /// Retained transforms of every channel of `x` (`d x n`, channel-major).
    pub fn analyze(&self, x: &[T]) -> Vec<Complex<T>> {
        let (n, mm) = (self.n(), self.modes());
        let channels = x.len() / n;
        let mut out = vec![Complex::new(T::zero(), T::zero()); channels * mm];
        for c in 0..channels {
            self.fft.analyze(
                &x[c * n..(c + 1) * n],
                &self.rows,
                &self.cols,
                &mut out[c * mm..(c + 1) * mm],
            );
        }
        out
    }

    fn synthesize(&self, z: &[Complex<T>]) -> Vec<T> {
        let (n, mm) = (self.n(), self.modes());
        let channels = z.len() / mm;
        let mut out = vec![T::zero(); channels * n];
        for c in 0..channels {
            self.fft.synthesize(
                &z[c * mm..(c + 1) * mm],
                &self.rows,
                &self.cols,
                &mut out[c * n..(c + 1) * n],
            );
        }
        out
    }

    /// `y = F^-1[Phi . F[x]]` truncated to the retained modes. Returns `y`
    /// and the retained input coefficients needed by [`SpectralConv::backward`].
    pub fn forward(&self, phi_pos: &[T], phi_neg: &[T], x: &[T]) -> (Vec<T>, Vec<Complex<T>>) {
        let xhat = self.analyze(x);
        let (d, mm, half) = (self.d, self.modes(), self.m * self.m);
        let mut v = vec![Complex::new(T::zero(), T::zero()); d * mm];
        for o in 0..d {
            for i in 0..d {
                for (p, phi) in [phi_pos, phi_neg].into_iter().enumerate() {
                    let wbase = (o * d + i) * half;
                    let xs = &xhat[i * mm + p * half..i * mm + (p + 1) * half];
                    let vs = &mut v[o * mm + p * half..o * mm + (p + 1) * half];
                    for t in 0..half {
                        let wr = phi[2 * (wbase + t)];
                        let wi = phi[2 * (wbase + t) + 1];
                        let xv = xs[t];
                        vs[t].re = vs[t].re + wr * xv.re - wi * xv.im;
                        vs[t].im = vs[t].im + wr * xv.im + wi * xv.re;
                    }
                }
            }
        }
        let scale = self.mode_scale();
        for o in 0..d {
            for (z, &s) in v[o * mm..(o + 1) * mm].iter_mut().zip(&scale) {
                *z = *z * s;
            }
        }
        (self.synthesize(&v), xhat)
    }

    /// Accumulates weight gradients and returns the input gradient.
    pub fn backward(
        &self,
        phi_pos: &[T],
        phi_neg: &[T],
        xhat: &[Complex<T>],
        gy: &[T],
        gphi_pos: &mut [T],
        gphi_neg: &mut [T],
    ) -> Vec<T> {
        let (d, mm, half) = (self.d, self.modes(), self.m * self.m);
        let mut gv = self.analyze(gy);
        let scale = self.mode_scale();
        for o in 0..d {
            for (z, &s) in gv[o * mm..(o + 1) * mm].iter_mut().zip(&scale) {
                *z = *z * s;
            }
        }
        let mut gx = vec![Complex::new(T::zero(), T::zero()); d * mm];
        let grads = [gphi_pos, gphi_neg];
        for o in 0..d {
            for i in 0..d {
                for p in 0..2 {
                    let phi = if p == 0 { phi_pos } else { phi_neg };
                    let gphi = &mut *grads[p];
                    let wbase = (o * d + i) * half;
                    let xs = &xhat[i * mm + p * half..i * mm + (p + 1) * half];
                    let gvs = &gv[o * mm + p * half..o * mm + (p + 1) * half];
                    let gxs = &mut gx[i * mm + p * half..i * mm + (p + 1) * half];
                    for t in 0..half {
                        let g = gvs[t];
                        let xv = xs[t];
                        let k = 2 * (wbase + t);
                        // dPhi += g conj(x)
                        gphi[k] = gphi[k] + g.re * xv.re + g.im * xv.im;
                        gphi[k + 1] = gphi[k + 1] + g.im * xv.re - g.re * xv.im;
                        // dx += conj(Phi) g
                        let (wr, wi) = (phi[k], phi[k + 1]);
                        gxs[t].re = gxs[t].re + wr * g.re + wi * g.im;
                        gxs[t].im = gxs[t].im + wr * g.im - wi * g.re;
                    }
                }
            }
        }
        self.synthesize(&gx)
    }
}
