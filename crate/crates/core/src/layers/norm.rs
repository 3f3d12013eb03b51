//! Batch normalization (per channel over N, H, W) and layer normalization
//! (per position over C).

use crate::error::{LfaError, Result};
use crate::tensor::{Shape, Tensor};
use crate::Mode;

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;
pub const LN_EPSILON: f32 = 1e-5;

/// Per-channel mean and (biased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl ChannelStats {
    /// Mean 0, variance 1.
    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `running ← momentum · running + (1 − momentum) · batch`
    pub fn update(&mut self, batch: &ChannelStats, momentum: f32) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (momentum * *r + (1.0 - momentum) * b).max(0.0);
        }
    }
}

/// Scale, shift and (batch norm only) running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running: ChannelStats,
    pub epsilon: f32,
    pub momentum: f32,
}

impl NormParams {
    pub fn new(channels: usize) -> Self {
        NormParams {
            scale: Tensor::ones([1, channels, 1, 1]),
            shift: Tensor::zeros([1, channels, 1, 1]),
            running: ChannelStats::identity(channels),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NormCache {
    pub xhat: Tensor,
    /// One entry per channel (batch norm) or per position (layer norm).
    pub inv_std: Vec<f32>,
    pub mode: Mode,
}

#[derive(Clone, Debug)]
pub struct BatchNormOutput {
    pub output: Tensor,
    pub cache: NormCache,
    /// Statistics of this batch, present in train mode.
    pub batch_stats: Option<ChannelStats>,
}

fn check_affine(s: Shape, scale: &Tensor, shift: &Tensor, what: &str) -> Result<()> {
    if scale.len() != s.c || shift.len() != s.c {
        return Err(LfaError::shape(format!(
            "{what}: scale/shift of length {}/{} for {} channels",
            scale.len(),
            shift.len(),
            s.c
        )));
    }
    Ok(())
}

pub fn batch_norm_forward(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running: &ChannelStats,
    epsilon: f32,
    mode: Mode,
) -> Result<BatchNormOutput> {
    let s = input.shape();
    check_affine(s, scale, shift, "batch norm")?;
    if running.channels() != s.c {
        return Err(LfaError::shape(format!(
            "batch norm: running stats for {} channels, input has {}",
            running.channels(),
            s.c
        )));
    }
    let count = s.n * s.plane();
    let stats = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(LfaError::shape(format!(
                    "batch norm in train mode needs N·H·W ≥ 2, got {count}"
                )));
            }
            let mut mean = vec![0.0f32; s.c];
            let mut var = vec![0.0f32; s.c];
            for c in 0..s.c {
                let mut sum = 0.0f64;
                for n in 0..s.n {
                    sum += input.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
                }
                let m = sum / count as f64;
                let mut sq = 0.0f64;
                for n in 0..s.n {
                    sq += input
                        .plane(n, c)
                        .iter()
                        .map(|&v| (v as f64 - m).powi(2))
                        .sum::<f64>();
                }
                mean[c] = m as f32;
                var[c] = (sq / count as f64) as f32;
            }
            Some(ChannelStats { mean, var })
        }
        Mode::Infer => None,
    };
    let used = stats.as_ref().unwrap_or(running);
    let inv_std: Vec<f32> = used
        .var
        .iter()
        .map(|&v| (1.0 / ((v as f64) + epsilon as f64).sqrt()) as f32)
        .collect();

    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let p = s.plane();
    for n in 0..s.n {
        for (c, &is) in inv_std.iter().enumerate() {
            let m = used.mean[c];
            let (g, b) = (scale.data()[c], shift.data()[c]);
            let off = (n * s.c + c) * p;
            let src = input.plane(n, c);
            let xh = &mut xhat.data_mut()[off..off + p];
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - m) * is;
            }
            let xh = &xhat.data()[off..off + p];
            for (o, &v) in out.data_mut()[off..off + p].iter_mut().zip(xh) {
                *o = g * v + b;
            }
        }
    }
    Ok(BatchNormOutput {
        output: out,
        cache: NormCache {
            xhat,
            inv_std,
            mode,
        },
        batch_stats: stats,
    })
}

/// Returns `(d input, d scale, d shift)`.
pub fn batch_norm_backward(cache: &NormCache, scale: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let s = grad_out.shape();
    let p = s.plane();
    let count = (s.n * p) as f64;
    let mut gx = Tensor::zeros(s);
    let mut gscale = vec![0.0f32; s.c];
    let mut gshift = vec![0.0f32; s.c];
    for c in 0..s.c {
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for n in 0..s.n {
            let off = (n * s.c + c) * p;
            let g = &grad_out.data()[off..off + p];
            let xh = &cache.xhat.data()[off..off + p];
            for (&gv, &xv) in g.iter().zip(xh) {
                sum_g += gv as f64;
                sum_gx += (gv * xv) as f64;
            }
        }
        gscale[c] = sum_gx as f32;
        gshift[c] = sum_g as f32;
        let gamma = scale.data()[c];
        let is = cache.inv_std[c];
        for n in 0..s.n {
            let off = (n * s.c + c) * p;
            let g = &grad_out.data()[off..off + p];
            let xh = &cache.xhat.data()[off..off + p];
            let dst = &mut gx.data_mut()[off..off + p];
            match cache.mode {
                Mode::Infer => {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d = gamma * is * gv;
                    }
                }
                Mode::Train => {
                    let mg = (sum_g / count) as f32;
                    let mgx = (sum_gx / count) as f32;
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xh) {
                        *d = gamma * is * (gv - mg - xv * mgx);
                    }
                }
            }
        }
    }
    let affine = |v: Vec<f32>| Tensor::from_vec([1, s.c, 1, 1], v).expect("affine grad shape");
    (gx, affine(gscale), affine(gshift))
}

/// Batch norm that updates `p.running` in train mode.
pub fn batch_norm(input: &Tensor, p: &mut NormParams, mode: Mode) -> Result<Tensor> {
    let out = batch_norm_forward(input, &p.scale, &p.shift, &p.running, p.epsilon, mode)?;
    if let Some(batch) = &out.batch_stats {
        p.running.update(batch, p.momentum);
    }
    Ok(out.output)
}

pub fn layer_norm_forward(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    epsilon: f32,
) -> Result<(Tensor, NormCache)> {
    let s = input.shape();
    check_affine(s, scale, shift, "layer norm")?;
    let p = s.plane();
    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![0.0f32; s.n * p];
    let x = input.data();
    for n in 0..s.n {
        let mut mean = vec![0.0f64; p];
        for c in 0..s.c {
            for (m, &v) in mean.iter_mut().zip(input.plane(n, c)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= s.c as f64);
        let mut var = vec![0.0f64; p];
        for c in 0..s.c {
            for ((acc, &v), &m) in var.iter_mut().zip(input.plane(n, c)).zip(&mean) {
                *acc += (v as f64 - m).powi(2);
            }
        }
        for (i, v) in var.iter().enumerate() {
            inv_std[n * p + i] = (1.0 / (v / s.c as f64 + epsilon as f64).sqrt()) as f32;
        }
        for c in 0..s.c {
            let off = (n * s.c + c) * p;
            let (g, b) = (scale.data()[c], shift.data()[c]);
            for i in 0..p {
                let xh = ((x[off + i] as f64 - mean[i]) as f32) * inv_std[n * p + i];
                xhat.data_mut()[off + i] = xh;
                out.data_mut()[off + i] = g * xh + b;
            }
        }
    }
    Ok((
        out,
        NormCache {
            xhat,
            inv_std,
            mode: Mode::Train,
        },
    ))
}

/// Returns `(d input, d scale, d shift)`.
pub fn layer_norm_backward(cache: &NormCache, scale: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let s = grad_out.shape();
    let p = s.plane();
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let mut gx = Tensor::zeros(s);
    let mut gscale = vec![0.0f64; s.c];
    let mut gshift = vec![0.0f64; s.c];
    for n in 0..s.n {
        let mut sum_gy = vec![0.0f64; p];
        let mut sum_gyx = vec![0.0f64; p];
        for c in 0..s.c {
            let off = (n * s.c + c) * p;
            let gamma = scale.data()[c];
            for i in 0..p {
                let gy = (g[off + i] * gamma) as f64;
                sum_gy[i] += gy;
                sum_gyx[i] += gy * xh[off + i] as f64;
                gscale[c] += (g[off + i] * xh[off + i]) as f64;
                gshift[c] += g[off + i] as f64;
            }
        }
        let inv_c = 1.0 / s.c as f64;
        for c in 0..s.c {
            let off = (n * s.c + c) * p;
            let gamma = scale.data()[c];
            for i in 0..p {
                let gy = g[off + i] * gamma;
                let mg = (sum_gy[i] * inv_c) as f32;
                let mgx = (sum_gyx[i] * inv_c) as f32;
                gx.data_mut()[off + i] = cache.inv_std[n * p + i] * (gy - mg - xh[off + i] * mgx);
            }
        }
    }
    let affine = |v: Vec<f64>| {
        Tensor::from_vec([1, s.c, 1, 1], v.into_iter().map(|x| x as f32).collect())
            .expect("affine grad shape")
    };
    (gx, affine(gscale), affine(gshift))
}

pub fn layer_norm(input: &Tensor, p: &NormParams) -> Result<Tensor> {
    Ok(layer_norm_forward(input, &p.scale, &p.shift, p.epsilon)?.0)
}
