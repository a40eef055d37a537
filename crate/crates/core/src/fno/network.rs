use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use num_complex::Complex;

use super::{FnoConfig, FnoParams, ParamLayout, SpectralConv};
use crate::error::{config, Result};
use crate::field::{ChannelStack, RealField};
use crate::normalize::{normalize_stack, NormalizationReferences};
use crate::scalar::Scalar;

/// A network bound to one grid: cached transform plans plus parameter layout.
#[derive(Clone, Debug)]
pub struct Fno<T: Scalar> {
    config: FnoConfig,
    layout: ParamLayout,
    conv: SpectralConv<T>,
    h: usize,
    w: usize,
}

/// Activations kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    input: Array2<T>,
    /// Block inputs, `layers + 1` entries of `d x n`.
    xs: Vec<Array2<T>>,
    /// Activation slopes at the block pre-activations; the last block has none.
    slopes: Vec<Array2<T>>,
    xhats: Vec<Vec<Complex<T>>>,
    hidden: Array2<T>,
    hidden_slope: Array2<T>,
}

fn view<'a, T>(values: &'a [T], range: &std::ops::Range<usize>, rows: usize, cols: usize) -> ArrayView2<'a, T> {
    ArrayView2::from_shape((rows, cols), &values[range.clone()]).expect("layout matches shape")
}

fn view_mut<'a, T>(values: &'a mut [T], range: &std::ops::Range<usize>, rows: usize, cols: usize) -> ArrayViewMut2<'a, T> {
    ArrayViewMut2::from_shape((rows, cols), &mut values[range.clone()]).expect("layout matches shape")
}

fn vec_view<'a, T>(values: &'a [T], range: &std::ops::Range<usize>) -> ArrayView1<'a, T> {
    ArrayView1::from(&values[range.clone()])
}

fn vec_view_mut<'a, T>(values: &'a mut [T], range: &std::ops::Range<usize>) -> ArrayViewMut1<'a, T> {
    ArrayViewMut1::from(&mut values[range.clone()])
}

impl<T: Scalar> Fno<T> {
    pub fn new(config: FnoConfig, h: usize, w: usize) -> Result<Self> {
        config.validate()?;
        config.check_grid(h, w)?;
        Ok(Self {
            config,
            layout: ParamLayout::new(&config),
            conv: SpectralConv::new(h, w, config.d, config.m)?,
            h,
            w,
        })
    }

    pub fn config(&self) -> &FnoConfig {
        &self.config
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn check(&self, params: &FnoParams<T>, input: &[T]) -> Result<()> {
        if params.config != self.config {
            return Err(config("parameters were built for a different configuration"));
        }
        if input.len() != self.config.c_in * self.h * self.w {
            return Err(config(format!(
                "input has {} values, expected {} channels on {}x{}",
                input.len(),
                self.config.c_in,
                self.h,
                self.w
            )));
        }
        Ok(())
    }

    /// Raw network on already-normalized channel-major input.
    pub fn forward_raw(&self, params: &FnoParams<T>, input: &[T]) -> Result<Vec<T>> {
        Ok(self.run(params, input, false)?.0)
    }

    pub fn forward_cached(&self, params: &FnoParams<T>, input: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        let (out, cache) = self.run(params, input, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    fn run(&self, params: &FnoParams<T>, input: &[T], keep: bool) -> Result<(Vec<T>, Option<ForwardCache<T>>)> {
        self.check(params, input)?;
        let cfg = &self.config;
        let (d, n) = (cfg.d, self.h * self.w);
        let p = &params.values;
        let l = &self.layout;
        let act = cfg.activation;

        let input = ArrayView2::from_shape((cfg.c_in, n), input).expect("checked length").to_owned();
        let mut x = view(p, &l.lift_weight, d, cfg.c_in).dot(&input);
        x += &vec_view(p, &l.lift_bias).insert_axis(Axis(1));

        let mut xs = Vec::with_capacity(cfg.layers + 1);
        let mut slopes = Vec::with_capacity(cfg.layers);
        let mut xhats = Vec::with_capacity(cfg.layers);
        for (k, blk) in l.blocks.iter().enumerate() {
            let (spec, xhat) = self.conv.forward(
                &p[blk.phi_pos.clone()],
                &p[blk.phi_neg.clone()],
                x.as_slice().expect("standard layout"),
            );
            let mut z = view(p, &blk.weight, d, d).dot(&x);
            z += &vec_view(p, &blk.bias).insert_axis(Axis(1));
            z += &ArrayView2::from_shape((d, n), &spec[..]).expect("spectral output shape");
            if keep {
                xs.push(x);
                xhats.push(xhat);
            }
            if k + 1 < cfg.layers {
                let (next, slope) = activate(act, z, keep);
                slopes.extend(slope);
                x = next;
            } else {
                x = z;
            }
        }

        let mut head_pre = view(p, &l.head_weight1, cfg.head_width, d).dot(&x);
        head_pre += &vec_view(p, &l.head_bias1).insert_axis(Axis(1));
        let (hidden, hidden_slope) = activate(act, head_pre, keep);
        let mut out = view(p, &l.head_weight2, 1, cfg.head_width).dot(&hidden);
        out += p[l.head_bias2.start];
        let out = out.into_raw_vec_and_offset().0;
        if !keep {
            return Ok((out, None));
        }
        xs.push(x);
        let cache = ForwardCache {
            input,
            xs,
            slopes,
            xhats,
            hidden,
            hidden_slope: hidden_slope.expect("slopes kept"),
        };
        Ok((out, Some(cache)))
    }

    /// Adds `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, params: &FnoParams<T>, cache: &ForwardCache<T>, grad_out: &[T], grad: &mut [T]) {
        let cfg = &self.config;
        let (d, n) = (cfg.d, self.h * self.w);
        let p = &params.values;
        let l = &self.layout;
        let gout = ArrayView2::from_shape((1, n), grad_out).expect("output gradient shape");

        // head
        let hidden = &cache.hidden;
        grad[l.head_bias2.start] = grad[l.head_bias2.start] + gout.sum();
        view_mut(grad, &l.head_weight2, 1, cfg.head_width).scaled_add(T::one(), &gout.dot(&hidden.t()));
        let mut g_hidden = view(p, &l.head_weight2, 1, cfg.head_width).t().dot(&gout);
        g_hidden *= &cache.hidden_slope;
        let x_last = &cache.xs[cfg.layers];
        view_mut(grad, &l.head_weight1, cfg.head_width, d).scaled_add(T::one(), &g_hidden.dot(&x_last.t()));
        vec_view_mut(grad, &l.head_bias1).scaled_add(T::one(), &g_hidden.sum_axis(Axis(1)));
        let mut gx = view(p, &l.head_weight1, cfg.head_width, d).t().dot(&g_hidden);

        // blocks, last to first
        for k in (0..cfg.layers).rev() {
            let blk = &l.blocks[k];
            let mut gz = gx;
            if k + 1 < cfg.layers {
                gz *= &cache.slopes[k];
            }
            let x = &cache.xs[k];
            view_mut(grad, &blk.weight, d, d).scaled_add(T::one(), &gz.dot(&x.t()));
            vec_view_mut(grad, &blk.bias).scaled_add(T::one(), &gz.sum_axis(Axis(1)));
            let (gpos, gneg) = split_pair(grad, &blk.phi_pos, &blk.phi_neg);
            let g_spec = self.conv.backward(
                &p[blk.phi_pos.clone()],
                &p[blk.phi_neg.clone()],
                &cache.xhats[k],
                gz.as_slice().expect("standard layout"),
                gpos,
                gneg,
            );
            let mut g_next = view(p, &blk.weight, d, d).t().dot(&gz);
            g_next += &ArrayView2::from_shape((d, n), &g_spec[..]).expect("spectral gradient shape");
            gx = g_next;
        }

        view_mut(grad, &l.lift_weight, d, cfg.c_in).scaled_add(T::one(), &gx.dot(&cache.input.t()));
        vec_view_mut(grad, &l.lift_bias).scaled_add(T::one(), &gx.sum_axis(Axis(1)));
    }

    /// Normalizes `stack` with `refs` and runs the network.
    pub fn predict(&self, params: &FnoParams<T>, stack: &ChannelStack<T>, refs: &NormalizationReferences) -> Result<RealField<T>> {
        let normalized = normalize_stack(stack, refs)?;
        let out = self.forward_raw(params, normalized.values())?;
        Ok(RealField::from_raw(self.h, self.w, out))
    }
}

/// Applies `act` elementwise, optionally returning the slopes too.
fn activate<T: Scalar>(act: super::Activation, z: Array2<T>, slopes: bool) -> (Array2<T>, Option<Array2<T>>) {
    if !slopes {
        return (z.mapv_into(|v| act.apply(v)), None);
    }
    let mut slope = z;
    let mut value = slope.clone();
    ndarray::Zip::from(&mut value).and(&mut slope).for_each(|v, s| {
        let (y, dy) = act.apply_with_derivative(*s);
        *v = y;
        *s = dy;
    });
    (value, Some(slope))
}

/// Two disjoint mutable sub-slices; `a` must precede `b`.
fn split_pair<'a, T>(
    values: &'a mut [T],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = values.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Full model: input normalization followed by the network.
pub fn forward<T: Scalar>(
    params: &FnoParams<T>,
    stack: &ChannelStack<T>,
    refs: &NormalizationReferences,
) -> Result<RealField<T>> {
    Fno::new(params.config, stack.h(), stack.w())?.predict(params, stack, refs)
}

/// Network only, on a stack that is already normalized (or deliberately raw).
pub fn forward_normalized<T: Scalar>(params: &FnoParams<T>, stack: &ChannelStack<T>) -> Result<RealField<T>> {
    let out = Fno::new(params.config, stack.h(), stack.w())?.forward_raw(params, stack.values())?;
    Ok(RealField::from_raw(stack.h(), stack.w(), out))
}

