//! Grouped 2D convolution with zero padding, optional tap masks, and the
//! matching backward pass.
//!
//! Every output element is accumulated as `bias + sum over (ic, ky, kx)` in that
//! fixed order, whatever the tensor size or thread count. The autoregressive
//! decoder relies on this: evaluating a network on a cropped window yields
//! bit-identical values to the full-plane evaluation at positions whose
//! receptive field lies inside the window.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Work (multiply-adds) below which the kernels stay single-threaded.
const PAR_THRESHOLD: usize = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride 1, "same" zero padding, dense.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    /// Stride 1, no padding (caller pads explicitly).
    pub fn valid(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            padding: 0,
            ..Self::same(in_channels, out_channels, kernel)
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} is not odd", self.kernel)));
        }
        if self.stride == 0 || self.groups == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("degenerate conv spec {self:?}")));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "channels {}->{} not divisible by {} groups",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::Shape(format!(
                "input {h}x{w} with padding {} smaller than kernel {}",
                self.padding, self.kernel
            )));
        }
        Ok((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel * self.kernel
    }
}

/// Which kernel taps take part in a masked (raster-causal) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CausalMask {
    /// Strictly preceding positions in raster order (center excluded).
    A,
    /// Preceding positions plus the center.
    B,
}

impl CausalMask {
    pub fn taps(self, kernel: usize) -> Vec<bool> {
        let c = kernel / 2;
        let mut taps = vec![false; kernel * kernel];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let before = ky < c || (ky == c && kx < c);
                let center = ky == c && kx == c;
                taps[ky * kernel + kx] = before || (center && self == CausalMask::B);
            }
        }
        taps
    }
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Range of output coordinates `o` for which `o * stride + k - pad` lies in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    // i = o*s + k - pad >= 0  =>  o >= ceil((pad - k) / s)
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // i < len  =>  o*s < len + pad - k
    let lim = len + pad;
    let hi = if lim > k { (lim - k).div_ceil(stride) } else { 0 };
    (lo.min(out_len), hi.min(out_len).max(lo.min(out_len)))
}

fn check_inputs(
    input: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    bias: Option<&Tensor>,
    mask: Option<&[bool]>,
) -> Result<(usize, usize)> {
    spec.validate()?;
    if input.c() != spec.in_channels {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            spec.in_channels,
            input.c()
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::Shape(format!(
            "conv weight {:?} != expected {:?}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::Shape(format!(
                "conv bias has {} values, expected {}",
                b.len(),
                spec.out_channels
            )));
        }
    }
    if let Some(m) = mask {
        if m.len() != spec.kernel * spec.kernel {
            return Err(Error::Shape("tap mask size does not match kernel".into()));
        }
    }
    spec.output_size(input.h(), input.w())
}

/// Forward convolution.
pub fn conv2d(
    input: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    bias: Option<&Tensor>,
    mask: Option<&[bool]>,
) -> Result<Tensor> {
    let (oh, ow) = check_inputs(input, spec, weight, bias, mask)?;
    let n = input.n();
    let mut out = Tensor::zeros([n, spec.out_channels, oh, ow]);
    let work = n * spec.out_channels * oh * ow * spec.fan_in();

    let plane_len = oh * ow;
    let run = |(idx, out_plane): (usize, &mut [f64])| {
        let b = idx / spec.out_channels;
        let oc = idx % spec.out_channels;
        forward_plane(input, spec, weight, bias, mask, b, oc, oh, ow, out_plane);
    };
    if work >= PAR_THRESHOLD {
        out.data_mut().par_chunks_mut(plane_len).enumerate().for_each(run);
    } else {
        out.data_mut().chunks_mut(plane_len).enumerate().for_each(run);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn forward_plane(
    input: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    bias: Option<&Tensor>,
    mask: Option<&[bool]>,
    b: usize,
    oc: usize,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    let k = spec.kernel;
    let (h, w) = (input.h(), input.w());
    let icpg = spec.in_channels / spec.groups;
    let ocpg = spec.out_channels / spec.groups;
    let g = oc / ocpg;
    let b0 = bias.map_or(0.0, |t| t.data()[oc]);
    out.fill(b0);
    for icl in 0..icpg {
        let ic = g * icpg + icl;
        let inp = input.plane(b, ic);
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(oh, h, ky, spec.padding, spec.stride);
            for kx in 0..k {
                if let Some(m) = mask {
                    if !m[ky * k + kx] {
                        continue;
                    }
                }
                let wv = weight.get(oc, icl, ky, kx);
                if wv == 0.0 {
                    continue;
                }
                let (ox_lo, ox_hi) = valid_range(ow, w, kx, spec.padding, spec.stride);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in oy_lo..oy_hi {
                    let iy = oy * spec.stride + ky - spec.padding;
                    let orow = &mut out[oy * ow..(oy + 1) * ow];
                    let irow = &inp[iy * w..(iy + 1) * w];
                    if spec.stride == 1 {
                        let ix0 = ox_lo + kx - spec.padding;
                        axpy(
                            &mut orow[ox_lo..ox_hi],
                            wv,
                            &irow[ix0..ix0 + (ox_hi - ox_lo)],
                        );
                    } else {
                        for ox in ox_lo..ox_hi {
                            orow[ox] += wv * irow[ox * spec.stride + kx - spec.padding];
                        }
                    }
                }
            }
        }
    }
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Backward pass: gradients with respect to input (optional), weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    mask: Option<&[bool]>,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let (oh, ow) = check_inputs(input, spec, weight, None, mask)?;
    if grad_out.shape() != [input.n(), spec.out_channels, oh, ow] {
        return Err(Error::Shape("conv grad_out shape mismatch".into()));
    }
    let k = spec.kernel;
    let (n, h, w) = (input.n(), input.h(), input.w());
    let icpg = spec.in_channels / spec.groups;
    let ocpg = spec.out_channels / spec.groups;
    let work = n * spec.out_channels * oh * ow * spec.fan_in();
    let par = work >= PAR_THRESHOLD;

    // bias
    let mut dbias = Tensor::zeros([spec.out_channels, 1, 1, 1]);
    for oc in 0..spec.out_channels {
        let mut s = 0.0;
        for b in 0..n {
            s += grad_out.plane(b, oc).iter().sum::<f64>();
        }
        dbias.data_mut()[oc] = s;
    }

    // weight: one chunk per output channel
    let mut dweight = Tensor::zeros(spec.weight_shape());
    let wchunk = icpg * k * k;
    let wrun = |(oc, dw): (usize, &mut [f64])| {
        let g = oc / ocpg;
        for icl in 0..icpg {
            let ic = g * icpg + icl;
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, ky, spec.padding, spec.stride);
                for kx in 0..k {
                    if let Some(m) = mask {
                        if !m[ky * k + kx] {
                            continue;
                        }
                    }
                    let (ox_lo, ox_hi) = valid_range(ow, w, kx, spec.padding, spec.stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for b in 0..n {
                        let go = grad_out.plane(b, oc);
                        let inp = input.plane(b, ic);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * spec.stride + ky - spec.padding;
                            let grow = &go[oy * ow..(oy + 1) * ow];
                            let irow = &inp[iy * w..(iy + 1) * w];
                            if spec.stride == 1 {
                                let ix0 = ox_lo + kx - spec.padding;
                                acc += dot(&grow[ox_lo..ox_hi], &irow[ix0..ix0 + (ox_hi - ox_lo)]);
                            } else {
                                for ox in ox_lo..ox_hi {
                                    acc += grow[ox] * irow[ox * spec.stride + kx - spec.padding];
                                }
                            }
                        }
                    }
                    dw[(icl * k + ky) * k + kx] = acc;
                }
            }
        }
    };
    if par {
        dweight.data_mut().par_chunks_mut(wchunk).enumerate().for_each(wrun);
    } else {
        dweight.data_mut().chunks_mut(wchunk).enumerate().for_each(wrun);
    }

    // input: one chunk per (batch, input channel) plane
    let dinput = if need_input {
        let mut din = Tensor::zeros(input.shape());
        let irun = |(idx, dplane): (usize, &mut [f64])| {
            let b = idx / spec.in_channels;
            let ic = idx % spec.in_channels;
            let g = ic / icpg;
            let icl = ic % icpg;
            for ocl in 0..ocpg {
                let oc = g * ocpg + ocl;
                let go = grad_out.plane(b, oc);
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(oh, h, ky, spec.padding, spec.stride);
                    for kx in 0..k {
                        if let Some(m) = mask {
                            if !m[ky * k + kx] {
                                continue;
                            }
                        }
                        let wv = weight.get(oc, icl, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox_lo, ox_hi) = valid_range(ow, w, kx, spec.padding, spec.stride);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * spec.stride + ky - spec.padding;
                            let grow = &go[oy * ow..(oy + 1) * ow];
                            let drow = &mut dplane[iy * w..(iy + 1) * w];
                            if spec.stride == 1 {
                                let ix0 = ox_lo + kx - spec.padding;
                                axpy(&mut drow[ix0..ix0 + (ox_hi - ox_lo)], wv, &grow[ox_lo..ox_hi]);
                            } else {
                                for ox in ox_lo..ox_hi {
                                    drow[ox * spec.stride + kx - spec.padding] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        };
        let plane = h * w;
        if par {
            din.data_mut().par_chunks_mut(plane).enumerate().for_each(irun);
        } else {
            din.data_mut().chunks_mut(plane).enumerate().for_each(irun);
        }
        Some(din)
    } else {
        None
    };

    Ok(ConvGrads {
        input: dinput,
        weight: dweight,
        bias: dbias,
    })
}
