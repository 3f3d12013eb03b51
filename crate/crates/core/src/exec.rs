//! The operation vocabulary the network is written against.
//!
//! Blocks and the model express their forward pass once, generically over
//! [`Exec`]. The [`Tape`](crate::tape::Tape) executor computes values and
//! records what backward needs; the
//! [`FlopCounter`](crate::evalx::FlopCounter) walks the same calls with
//! shapes only to account parameters and FLOPs per layer.

use crate::error::Result;
use crate::layers::{Activation, BatchNormLayer, ConvLayer, DenseLayer, LayerNormLayer, PoolMode};
use crate::tensor::{Elementwise, Shape};

pub trait Exec {
    type Var: Copy;

    fn shape(&self, v: Self::Var) -> Shape;

    /// Dispatches on `layer.transposed`.
    fn conv(&mut self, x: Self::Var, layer: &ConvLayer) -> Result<Self::Var>;

    fn batch_norm(&mut self, x: Self::Var, layer: &BatchNormLayer) -> Result<Self::Var>;

    fn layer_norm(&mut self, x: Self::Var, layer: &LayerNormLayer) -> Result<Self::Var>;

    fn dense(&mut self, x: Self::Var, layer: &DenseLayer) -> Result<Self::Var>;

    fn pool(&mut self, x: Self::Var, mode: PoolMode, window: usize, stride: usize) -> Result<Self::Var>;

    fn global_pool(&mut self, x: Self::Var, mode: PoolMode) -> Result<Self::Var>;

    fn activation(&mut self, x: Self::Var, kind: Activation) -> Result<Self::Var>;

    fn dropout(&mut self, x: Self::Var, rate: f32) -> Result<Self::Var>;

    fn elementwise(&mut self, kind: Elementwise, a: Self::Var, b: Self::Var) -> Result<Self::Var>;

    /// Multiplies every element by a constant.
    fn scale(&mut self, x: Self::Var, s: f32) -> Result<Self::Var>;

    fn concat(&mut self, parts: &[Self::Var]) -> Result<Self::Var>;
}
