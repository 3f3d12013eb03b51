//! Dense rank-4 tensors in `(N, C, H, W)` row-major layout.
//!
//! Every feature map in the network is a [`Tensor`]. The optional gradient
//! slot is used by parameters as an accumulator; intermediate activations
//! keep their gradients on the tape instead.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{LfaError, Result};

/// Extents of a rank-4 tensor: batch, channels, height, width.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Same batch and channels, spatial collapsed to 1×1.
    pub const fn per_channel(&self) -> Self {
        Shape::new(self.n, self.c, 1, 1)
    }

    pub const fn with_channels(&self, c: usize) -> Self {
        Shape::new(self.n, c, self.h, self.w)
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOW {
            write!(f, ", …")?;
        }
        write!(f, "]")
    }
}

impl Tensor {
    pub fn full(shape: impl Into<Shape>, value: f32) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(LfaError::shape(format!(
                "value list of length {} does not fill shape {shape:?} ({} elements)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn(shape: impl Into<Shape>, std: f32, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| {
                let z: f32 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn uniform(shape: impl Into<Shape>, lo: f32, hi: f32, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut [f32] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient slot, creating it if absent.
    pub fn accumulate_grad(&mut self, delta: &Tensor) -> Result<()> {
        if delta.shape != self.shape {
            return Err(LfaError::shape(format!(
                "gradient {:?} does not match tensor {:?}",
                delta.shape, self.shape
            )));
        }
        for (g, d) in self.grad_mut().iter_mut().zip(&delta.data) {
            *g += d;
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.shape.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f32) {
        let o = self.shape.offset(n, c, h, w);
        self.data[o] = v;
    }

    /// Spatial plane of one (sample, channel) pair.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.shape.numel() {
            return Err(LfaError::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// CRC-32 of the shape and the little-endian value bytes; equal
    /// digests mean bitwise-equal tensors up to hash collisions.
    pub fn digest(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for e in [self.shape.n, self.shape.c, self.shape.h, self.shape.w] {
            h.update(&(e as u64).to_le_bytes());
        }
        for v in &self.data {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Selects samples `[start, start + count)` along the batch axis.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Tensor> {
        if start + count > self.shape.n || count == 0 {
            return Err(LfaError::shape(format!(
                "batch slice {start}..{} out of range for {:?}",
                start + count,
                self.shape
            )));
        }
        let per = self.shape.c * self.shape.plane();
        Tensor::from_vec(
            Shape::new(count, self.shape.c, self.shape.h, self.shape.w),
            self.data[start * per..(start + count) * per].to_vec(),
        )
    }

    /// Stacks tensors of identical `(C, H, W)` along the batch axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| LfaError::shape("cannot stack an empty list"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in parts {
            if (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return Err(LfaError::shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, s
                )));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), data)
    }
}

/// Binary elementwise operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

fn broadcast_ok(a: Shape, b: Shape) -> bool {
    a == b || (b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1)
}

/// `a ∘ b` where `b` either matches `a` or is a per-channel `(N, C, 1, 1)`
/// vector broadcast over the spatial axes.
pub fn elementwise(kind: Elementwise, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape, b.shape);
    if !broadcast_ok(sa, sb) {
        return Err(LfaError::shape(format!(
            "elementwise {kind:?}: {sa:?} is incompatible with {sb:?}"
        )));
    }
    let op = |x: f32, y: f32| match kind {
        Elementwise::Add => x + y,
        Elementwise::Sub => x - y,
        Elementwise::Mul => x * y,
    };
    let data = if sa == sb {
        a.data.iter().zip(&b.data).map(|(&x, &y)| op(x, y)).collect()
    } else {
        let p = sa.plane();
        let mut out = Vec::with_capacity(a.len());
        for (plane, &y) in a.data.chunks_exact(p).zip(&b.data) {
            out.extend(plane.iter().map(|&x| op(x, y)));
        }
        out
    };
    Tensor::from_vec(sa, data)
}

/// Gradients of [`elementwise`] with respect to `a` and `b`.
///
/// For a broadcast `b` the gradient is summed over the spatial axes.
pub fn elementwise_backward(
    kind: Elementwise,
    a: &Tensor,
    b: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor) {
    let sa = a.shape;
    let sb = b.shape;
    let p = sa.plane();
    let broadcast = sa != sb;
    let b_at = |i: usize| if broadcast { b.data[i / p] } else { b.data[i] };

    let ga: Vec<f32> = match kind {
        Elementwise::Add | Elementwise::Sub => grad_out.data.clone(),
        Elementwise::Mul => grad_out
            .data
            .iter()
            .enumerate()
            .map(|(i, g)| g * b_at(i))
            .collect(),
    };
    let per_elem = |i: usize, g: f32| match kind {
        Elementwise::Add => g,
        Elementwise::Sub => -g,
        Elementwise::Mul => g * a.data[i],
    };
    let gb: Vec<f32> = if broadcast {
        grad_out
            .data
            .chunks_exact(p)
            .enumerate()
            .map(|(plane, gs)| {
                let base = plane * p;
                gs.iter()
                    .enumerate()
                    .map(|(j, &g)| per_elem(base + j, g) as f64)
                    .sum::<f64>() as f32
            })
            .collect()
    } else {
        grad_out
            .data
            .iter()
            .enumerate()
            .map(|(i, &g)| per_elem(i, g))
            .collect()
    };
    (
        Tensor {
            shape: sa,
            data: ga,
            grad: None,
        },
        Tensor {
            shape: sb,
            data: gb,
            grad: None,
        },
    )
}

/// Concatenates along the channel axis in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.len() < 2 {
        return Err(LfaError::shape("concatenation needs at least two parts"));
    }
    let s0 = parts[0].shape;
    for p in parts {
        let s = p.shape;
        if s.n != s0.n || s.h != s0.h || s.w != s0.w {
            return Err(LfaError::shape(format!(
                "cannot concatenate {s:?} with {s0:?}: batch/spatial extents differ"
            )));
        }
    }
    let c: usize = parts.iter().map(|p| p.shape.c).sum();
    let out_shape = Shape::new(s0.n, c, s0.h, s0.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    let plane = s0.plane();
    for n in 0..s0.n {
        for p in parts {
            let per = p.shape.c * plane;
            data.extend_from_slice(&p.data[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Inverse of [`concat_channels`]: splits `t` into consecutive channel
/// groups of the given sizes.
pub fn split_channels(t: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let s = t.shape;
    if sizes.iter().sum::<usize>() != s.c {
        return Err(LfaError::shape(format!(
            "channel split {sizes:?} does not sum to {}",
            s.c
        )));
    }
    let plane = s.plane();
    let mut outs: Vec<Vec<f32>> = sizes
        .iter()
        .map(|&c| Vec::with_capacity(s.n * c * plane))
        .collect();
    for n in 0..s.n {
        let mut c0 = 0;
        for (out, &c) in outs.iter_mut().zip(sizes) {
            let start = (n * s.c + c0) * plane;
            out.extend_from_slice(&t.data[start..start + c * plane]);
            c0 += c;
        }
    }
    outs.into_iter()
        .zip(sizes)
        .map(|(d, &c)| Tensor::from_vec(s.with_channels(c), d))
        .collect()
}
