use serde::{Deserialize, Serialize};

use crate::error::{LfaError, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Pooled tensor plus, for max pooling, the flat input index that won each
/// window.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Option<Vec<u32>>,
}

pub fn pool_output_shape(input: Shape, window: usize, stride: usize) -> Result<Shape> {
    if window == 0 || stride == 0 {
        return Err(LfaError::config("pool window and stride must be positive"));
    }
    if input.h < window || input.w < window {
        return Err(LfaError::shape(format!(
            "pool window {window} larger than spatial extent {}x{}",
            input.h, input.w
        )));
    }
    Ok(Shape::new(
        input.n,
        input.c,
        (input.h - window) / stride + 1,
        (input.w - window) / stride + 1,
    ))
}

/// Square-window pooling. Extents that do not divide evenly are floor
/// truncated; max ties go to the first tap in scan order.
pub fn pool2d(input: &Tensor, mode: PoolMode, window: usize, stride: usize) -> Result<Pooled> {
    let s = input.shape();
    let os = pool_output_shape(s, window, stride)?;
    let mut out = Vec::with_capacity(os.numel());
    let mut argmax = (mode == PoolMode::Max).then(|| Vec::with_capacity(os.numel()));
    let x = input.data();
    let inv = 1.0 / (window * window) as f32;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                match mode {
                    PoolMode::Max => {
                        let mut best = f32::NEG_INFINITY;
                        let mut at = base + oy * stride * s.w + ox * stride;
                        for ky in 0..window {
                            for kx in 0..window {
                                let i = base + (oy * stride + ky) * s.w + ox * stride + kx;
                                if x[i] > best {
                                    best = x[i];
                                    at = i;
                                }
                            }
                        }
                        out.push(best);
                        argmax.as_mut().unwrap().push(at as u32);
                    }
                    PoolMode::Avg => {
                        let mut acc = 0.0f32;
                        for ky in 0..window {
                            let row = base + (oy * stride + ky) * s.w + ox * stride;
                            acc += x[row..row + window].iter().sum::<f32>();
                        }
                        out.push(acc * inv);
                    }
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(os, out)?,
        argmax,
    })
}

pub fn pool2d_backward(
    input_shape: Shape,
    grad_out: &Tensor,
    mode: PoolMode,
    window: usize,
    stride: usize,
    argmax: Option<&[u32]>,
) -> Result<Tensor> {
    let os = pool_output_shape(input_shape, window, stride)?;
    if grad_out.shape() != os {
        return Err(LfaError::shape(format!(
            "pool backward: gradient {:?} does not match {os:?}",
            grad_out.shape()
        )));
    }
    let mut gin = Tensor::zeros(input_shape);
    let g = grad_out.data();
    match mode {
        PoolMode::Max => {
            let idx = argmax.ok_or_else(|| LfaError::shape("max pool backward needs argmax"))?;
            let gd = gin.data_mut();
            for (&i, &v) in idx.iter().zip(g) {
                gd[i as usize] += v;
            }
        }
        PoolMode::Avg => {
            let inv = 1.0 / (window * window) as f32;
            let w = input_shape.w;
            let gd = gin.data_mut();
            for nc in 0..os.n * os.c {
                let base = nc * input_shape.plane();
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        let v = g[(nc * os.h + oy) * os.w + ox] * inv;
                        for ky in 0..window {
                            let row = base + (oy * stride + ky) * w + ox * stride;
                            gd[row..row + window].iter_mut().for_each(|d| *d += v);
                        }
                    }
                }
            }
        }
    }
    Ok(gin)
}

/// Per-channel reduction over all spatial positions, shape `(N, C, 1, 1)`.
pub fn global_pool(input: &Tensor, mode: PoolMode) -> Result<Pooled> {
    let s = input.shape();
    if s.plane() == 0 {
        return Err(LfaError::shape("global pool over an empty plane"));
    }
    let mut out = Vec::with_capacity(s.n * s.c);
    let mut argmax = (mode == PoolMode::Max).then(|| Vec::with_capacity(s.n * s.c));
    for nc in 0..s.n * s.c {
        let plane = &input.data()[nc * s.plane()..][..s.plane()];
        match mode {
            PoolMode::Max => {
                let (mut at, mut best) = (0usize, f32::NEG_INFINITY);
                for (i, &v) in plane.iter().enumerate() {
                    if v > best {
                        best = v;
                        at = i;
                    }
                }
                out.push(best);
                argmax.as_mut().unwrap().push((nc * s.plane() + at) as u32);
            }
            PoolMode::Avg => {
                let sum: f64 = plane.iter().map(|&v| v as f64).sum();
                out.push((sum / plane.len() as f64) as f32);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(s.per_channel(), out)?,
        argmax,
    })
}

pub fn global_pool_backward(
    input_shape: Shape,
    grad_out: &Tensor,
    mode: PoolMode,
    argmax: Option<&[u32]>,
) -> Result<Tensor> {
    if grad_out.shape() != input_shape.per_channel() {
        return Err(LfaError::shape(format!(
            "global pool backward: gradient {:?} for input {input_shape:?}",
            grad_out.shape()
        )));
    }
    let mut gin = Tensor::zeros(input_shape);
    let p = input_shape.plane();
    match mode {
        PoolMode::Max => {
            let idx = argmax.ok_or_else(|| LfaError::shape("max pool backward needs argmax"))?;
            let gd = gin.data_mut();
            for (&i, &v) in idx.iter().zip(grad_out.data()) {
                gd[i as usize] += v;
            }
        }
        PoolMode::Avg => {
            let inv = 1.0 / p as f32;
            for (plane, &g) in gin.data_mut().chunks_exact_mut(p).zip(grad_out.data()) {
                plane.fill(g * inv);
            }
        }
    }
    Ok(gin)
}
