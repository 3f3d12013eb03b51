//! Direct 2-D convolution and its transpose.
//!
//! Convolution is cross-correlation (no kernel flip). Kernels are laid out
//! `(C_out, C_in / groups, kH, kW)` for `conv2d` and `(C_in, C_out, kH, kW)`
//! for the transpose, so a transposed convolution with the same weight
//! tensor is the exact adjoint of the forward one.
//!
//! Each output plane is produced by a single worker in a fixed summation
//! order (bias, then input channel, kernel row, kernel column), so results
//! do not depend on the rayon pool size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LfaError, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: Padding,
}

/// Resolved spatial geometry for one input extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvWindow {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    /// Stride 1, dilation 1, one group, same padding.
    pub fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvGeom {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: 1,
            dilation: 1,
            groups: 1,
            padding: Padding::Same,
        }
    }

    /// The `k`×`k`, stride-`k` upsampling geometry used by the decoder.
    pub fn upsample(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvGeom {
            stride: k,
            padding: Padding::Valid,
            ..ConvGeom::new(in_channels, out_channels, k)
        }
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn with_groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn with_padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 || self.stride == 0 || self.dilation == 0 || self.groups == 0 {
            return Err(LfaError::config(format!(
                "kernel, stride, dilation and groups must be positive: {self:?}"
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(LfaError::config("convolution with zero channels"));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(LfaError::config(format!(
                "channels {}→{} not divisible by {} groups",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        if self.padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0) {
            return Err(LfaError::config(format!(
                "same padding requires an odd kernel, got {kh}x{kw}"
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn transposed_weight_shape(&self) -> Shape {
        Shape::new(self.in_channels, self.out_channels, self.kernel.0, self.kernel.1)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    fn span(&self, k: usize) -> usize {
        self.dilation * (k - 1) + 1
    }

    /// Output extent and leading padding for an `h`×`w` input. With same
    /// padding an odd total is split with the extra cell on the bottom/right.
    pub fn window(&self, h: usize, w: usize) -> Result<ConvWindow> {
        let axis = |len: usize, k: usize| -> Result<(usize, usize)> {
            let span = self.span(k);
            match self.padding {
                Padding::Same => {
                    let out = len.div_ceil(self.stride);
                    let total = ((out - 1) * self.stride + span).saturating_sub(len);
                    Ok((out, total / 2))
                }
                Padding::Valid => {
                    if len < span {
                        return Err(LfaError::shape(format!(
                            "input extent {len} smaller than kernel span {span}"
                        )));
                    }
                    Ok(((len - span) / self.stride + 1, 0))
                }
            }
        };
        let (out_h, pad_top) = axis(h, self.kernel.0)?;
        let (out_w, pad_left) = axis(w, self.kernel.1)?;
        Ok(ConvWindow {
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let win = self.window(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_channels, win.out_h, win.out_w))
    }

    /// Output shape of the transposed convolution (no padding).
    pub fn transposed_output_shape(&self, input: Shape) -> Shape {
        let grow = |len: usize, k: usize| (len - 1) * self.stride + self.span(k);
        Shape::new(
            input.n,
            self.out_channels,
            grow(input.h, self.kernel.0),
            grow(input.w, self.kernel.1),
        )
    }

    /// Multiply-accumulate count for one forward pass over `input`.
    pub fn macs(&self, input: Shape) -> Result<u64> {
        let out = self.output_shape(input)?;
        let per_out = (self.in_channels / self.groups * self.kernel.0 * self.kernel.1) as u64;
        Ok(out.numel() as u64 * per_out)
    }

    pub fn transposed_macs(&self, input: Shape) -> u64 {
        input.numel() as u64 * (self.out_channels * self.kernel.0 * self.kernel.1) as u64
    }
}

/// Kernel, bias and geometry of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub geom: ConvGeom,
}

impl ConvParams {
    pub fn zeros(geom: ConvGeom) -> Self {
        ConvParams {
            weight: Tensor::zeros(geom.weight_shape()),
            bias: Tensor::zeros(geom.bias_shape()),
            geom,
        }
    }

    /// Zero parameters laid out for a transposed convolution.
    pub fn zeros_transposed(geom: ConvGeom) -> Self {
        ConvParams {
            weight: Tensor::zeros(geom.transposed_weight_shape()),
            bias: Tensor::zeros(geom.bias_shape()),
            geom,
        }
    }
}

pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv2d_forward(input, &p.weight, &p.bias, &p.geom)
}

pub fn transposed_conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv_transpose2d_forward(input, &p.weight, &p.bias, &p.geom)
}

/// Gradients of a convolution; `input` is `None` when it was not requested.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check_conv(input: &Tensor, weight: &Tensor, bias: &Tensor, geom: &ConvGeom, transposed: bool) -> Result<()> {
    geom.validate()?;
    let s = input.shape();
    if s.c != geom.in_channels {
        return Err(LfaError::shape(format!(
            "convolution expects {} input channels, got {:?}",
            geom.in_channels, s
        )));
    }
    let ws = if transposed {
        geom.transposed_weight_shape()
    } else {
        geom.weight_shape()
    };
    if weight.shape() != ws {
        return Err(LfaError::shape(format!(
            "kernel shape {:?}, expected {ws:?}",
            weight.shape()
        )));
    }
    if bias.len() != geom.out_channels {
        return Err(LfaError::shape(format!(
            "bias length {}, expected {}",
            bias.len(),
            geom.out_channels
        )));
    }
    Ok(())
}

/// Range of output columns `ox` for which `ox * stride + offset` lands in
/// `[0, len)`.
#[inline]
fn valid_range(out_len: usize, len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let hi_excl = if (len as isize) - offset <= 0 {
        0
    } else {
        ((len as isize - 1 - offset) / s + 1).min(out_len as isize)
    };
    let lo = lo.min(out_len as isize) as usize;
    let hi = (hi_excl.max(lo as isize)) as usize;
    (lo, hi)
}

/// `dst[i] += w * src[i * stride]` over matching ranges.
#[inline]
fn axpy_strided(dst: &mut [f32], src: &[f32], w: f32, stride: usize) {
    if stride == 1 {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    } else {
        for (d, s) in dst.iter_mut().zip(src.iter().step_by(stride)) {
            *d += w * s;
        }
    }
}

/// `dst[j * stride] += w * src[j]`.
fn scatter_strided(dst: &mut [f32], src: &[f32], w: f32, stride: usize) {
    if stride == 1 {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    } else {
        for (d, s) in dst.iter_mut().step_by(stride).zip(src) {
            *d += w * s;
        }
    }
}

/// `Σ a[j] · b[j * stride]`, accumulated left to right in f32.
fn dot_strided(a: &[f32], b: &[f32], stride: usize) -> f32 {
    if stride == 1 {
        a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
    } else {
        a.iter().zip(b.iter().step_by(stride)).fold(0.0, |acc, (x, y)| acc + x * y)
    }
}

pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
    check_conv(input, weight, bias, geom, false)?;
    let s = input.shape();
    let win = geom.window(s.h, s.w)?;
    let out_shape = Shape::new(s.n, geom.out_channels, win.out_h, win.out_w);
    let mut out = Tensor::zeros(out_shape);

    let (kh, kw) = geom.kernel;
    let in_pg = geom.in_channels / geom.groups;
    let out_pg = geom.out_channels / geom.groups;
    let (stride, dil) = (geom.stride, geom.dilation);
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let in_plane = s.plane();
    let out_plane = out_shape.plane();

    out.data_mut()
        .par_chunks_mut(out_plane)
        .enumerate()
        .for_each(|(idx, plane)| {
            let n = idx / geom.out_channels;
            let oc = idx % geom.out_channels;
            let g = oc / out_pg;
            plane.fill(b[oc]);
            for icg in 0..in_pg {
                let ic = g * in_pg + icg;
                let xin = &x[(n * s.c + ic) * in_plane..][..in_plane];
                for ky in 0..kh {
                    let yoff = (ky * dil) as isize - win.pad_top as isize;
                    let (oy_lo, oy_hi) = valid_range(win.out_h, s.h, stride, yoff);
                    for kx in 0..kw {
                        let w = wt[((oc * in_pg + icg) * kh + ky) * kw + kx];
                        let xoff = (kx * dil) as isize - win.pad_left as isize;
                        let (ox_lo, ox_hi) = valid_range(win.out_w, s.w, stride, xoff);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = (oy * stride) as isize + yoff;
                            let row = &xin[iy as usize * s.w..][..s.w];
                            let ix0 = ((ox_lo * stride) as isize + xoff) as usize;
                            let dst = &mut plane[oy * win.out_w + ox_lo..oy * win.out_w + ox_hi];
                            axpy_strided(dst, &row[ix0..], w, stride);
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    geom: &ConvGeom,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let s = input.shape();
    let win = geom.window(s.h, s.w)?;
    let os = grad_out.shape();
    if os != Shape::new(s.n, geom.out_channels, win.out_h, win.out_w) {
        return Err(LfaError::shape(format!(
            "conv2d backward: gradient {os:?} does not match forward output"
        )));
    }
    let (kh, kw) = geom.kernel;
    let in_pg = geom.in_channels / geom.groups;
    let out_pg = geom.out_channels / geom.groups;
    let (stride, dil) = (geom.stride, geom.dilation);
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let in_plane = s.plane();
    let out_plane = os.plane();

    let grad_input = if need_input {
        let mut gin = Tensor::zeros(s);
        gin.data_mut()
            .par_chunks_mut(in_plane)
            .enumerate()
            .for_each(|(idx, gplane)| {
                let n = idx / s.c;
                let ic = idx % s.c;
                let g = ic / in_pg;
                let icg = ic - g * in_pg;
                for oc in g * out_pg..(g + 1) * out_pg {
                    let gop = &go[(n * os.c + oc) * out_plane..][..out_plane];
                    for ky in 0..kh {
                        let yoff = (ky * dil) as isize - win.pad_top as isize;
                        let (oy_lo, oy_hi) = valid_range(win.out_h, s.h, stride, yoff);
                        for kx in 0..kw {
                            let w = wt[((oc * in_pg + icg) * kh + ky) * kw + kx];
                            let xoff = (kx * dil) as isize - win.pad_left as isize;
                            let (ox_lo, ox_hi) = valid_range(win.out_w, s.w, stride, xoff);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let ix0 = ((ox_lo * stride) as isize + xoff) as usize;
                            for oy in oy_lo..oy_hi {
                                let iy = ((oy * stride) as isize + yoff) as usize;
                                let grow = &gop[oy * win.out_w + ox_lo..oy * win.out_w + ox_hi];
                                scatter_strided(&mut gplane[iy * s.w + ix0..(iy + 1) * s.w], grow, w, stride);
                            }
                        }
                    }
                }
            });
        Some(gin)
    } else {
        None
    };

    let per_oc = in_pg * kh * kw;
    let mut gw = Tensor::zeros(weight.shape());
    gw.data_mut()
        .par_chunks_mut(per_oc)
        .enumerate()
        .for_each(|(oc, gwo)| {
            let g = oc / out_pg;
            for icg in 0..in_pg {
                let ic = g * in_pg + icg;
                for ky in 0..kh {
                    let yoff = (ky * dil) as isize - win.pad_top as isize;
                    let (oy_lo, oy_hi) = valid_range(win.out_h, s.h, stride, yoff);
                    for kx in 0..kw {
                        let xoff = (kx * dil) as isize - win.pad_left as isize;
                        let (ox_lo, ox_hi) = valid_range(win.out_w, s.w, stride, xoff);
                        let mut acc = 0.0f64;
                        if ox_lo < ox_hi {
                            let ix0 = ((ox_lo * stride) as isize + xoff) as usize;
                            for n in 0..s.n {
                                let xin = &x[(n * s.c + ic) * in_plane..][..in_plane];
                                let gop = &go[(n * os.c + oc) * out_plane..][..out_plane];
                                for oy in oy_lo..oy_hi {
                                    let iy = ((oy * stride) as isize + yoff) as usize;
                                    let grow = &gop[oy * win.out_w + ox_lo..oy * win.out_w + ox_hi];
                                    acc += dot_strided(grow, &xin[iy * s.w + ix0..(iy + 1) * s.w], stride) as f64;
                                }
                            }
                        }
                        gwo[(icg * kh + ky) * kw + kx] = acc as f32;
                    }
                }
            }
        });

    let gb = bias_grad(grad_out);
    Ok(ConvGrads {
        input: grad_input,
        weight: gw,
        bias: gb,
    })
}

fn bias_grad(grad_out: &Tensor) -> Tensor {
    let os = grad_out.shape();
    let mut gb = vec![0.0f64; os.c];
    for n in 0..os.n {
        for (c, acc) in gb.iter_mut().enumerate() {
            *acc += grad_out.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    Tensor::from_vec(
        Shape::new(1, os.c, 1, 1),
        gb.into_iter().map(|v| v as f32).collect(),
    )
    .expect("bias gradient shape")
}

pub fn conv_transpose2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: &ConvGeom,
) -> Result<Tensor> {
    if geom.groups != 1 {
        return Err(LfaError::config("grouped transposed convolution is not supported"));
    }
    check_conv(input, weight, bias, &geom.with_padding(Padding::Valid), true)?;
    let s = input.shape();
    let out_shape = geom.transposed_output_shape(s);
    let mut out = Tensor::zeros(out_shape);
    let (kh, kw) = geom.kernel;
    let (stride, dil) = (geom.stride, geom.dilation);
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let in_plane = s.plane();
    let out_plane = out_shape.plane();
    let oc_total = geom.out_channels;

    out.data_mut()
        .par_chunks_mut(out_plane)
        .enumerate()
        .for_each(|(idx, plane)| {
            let n = idx / oc_total;
            let oc = idx % oc_total;
            plane.fill(b[oc]);
            for ic in 0..s.c {
                let xin = &x[(n * s.c + ic) * in_plane..][..in_plane];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let w = wt[((ic * oc_total + oc) * kh + ky) * kw + kx];
                        for iy in 0..s.h {
                            let oy = iy * stride + ky * dil;
                            let orow = &mut plane[oy * out_shape.w..][..out_shape.w];
                            let xrow = &xin[iy * s.w..][..s.w];
                            for (ix, &xv) in xrow.iter().enumerate() {
                                orow[ix * stride + kx * dil] += w * xv;
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    geom: &ConvGeom,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let s = input.shape();
    let os = grad_out.shape();
    if os != geom.transposed_output_shape(s) {
        return Err(LfaError::shape(format!(
            "transposed conv backward: gradient {os:?} does not match forward output"
        )));
    }
    let (kh, kw) = geom.kernel;
    let (stride, dil) = (geom.stride, geom.dilation);
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let in_plane = s.plane();
    let out_plane = os.plane();
    let oc_total = geom.out_channels;

    let grad_input = if need_input {
        let mut gin = Tensor::zeros(s);
        gin.data_mut()
            .par_chunks_mut(in_plane)
            .enumerate()
            .for_each(|(idx, gplane)| {
                let n = idx / s.c;
                let ic = idx % s.c;
                for oc in 0..oc_total {
                    let gop = &go[(n * oc_total + oc) * out_plane..][..out_plane];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let w = wt[((ic * oc_total + oc) * kh + ky) * kw + kx];
                            for iy in 0..s.h {
                                let oy = iy * stride + ky * dil;
                                let grow = &gop[oy * os.w..][..os.w];
                                let dst = &mut gplane[iy * s.w..][..s.w];
                                axpy_strided(dst, &grow[kx * dil..], w, stride);
                            }
                        }
                    }
                }
            });
        Some(gin)
    } else {
        None
    };

    let mut gw = Tensor::zeros(weight.shape());
    let per_ic = oc_total * kh * kw;
    gw.data_mut()
        .par_chunks_mut(per_ic)
        .enumerate()
        .for_each(|(ic, gwi)| {
            for oc in 0..oc_total {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0f64;
                        for n in 0..s.n {
                            let xin = &x[(n * s.c + ic) * in_plane..][..in_plane];
                            let gop = &go[(n * oc_total + oc) * out_plane..][..out_plane];
                            for iy in 0..s.h {
                                let oy = iy * stride + ky * dil;
                                let grow = &gop[oy * os.w..][..os.w];
                                let xrow = &xin[iy * s.w..][..s.w];
                                let mut row = 0.0f32;
                                for (ix, &xv) in xrow.iter().enumerate() {
                                    row += xv * grow[ix * stride + kx * dil];
                                }
                                acc += row as f64;
                            }
                        }
                        gwi[(oc * kh + ky) * kw + kx] = acc as f32;
                    }
                }
            }
        });

    Ok(ConvGrads {
        input: grad_input,
        weight: gw,
        bias: bias_grad(grad_out),
    })
}
