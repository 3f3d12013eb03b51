use rand::Rng;

use crate::error::{LfaError, Result};
use crate::exec::Exec;
use crate::layers::{Activation, BatchNormLayer, ConvGeom, ConvLayer, PoolMode};
use crate::params::ParamStore;
use crate::tensor::Elementwise;

/// Smallest spatial extent the two-stage pooling accepts.
pub const RAA_MIN_EXTENT: usize = 8;

/// Region-aware attention: a per-channel gate computed from multi-scale
/// max and average pooling of a refined feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct RaaBlock {
    pub name: String,
    pub channels: usize,
    pub conv: ConvLayer,
    pub bn: BatchNormLayer,
}

impl RaaBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let conv = store.conv(&format!("{name}.conv3"), ConvGeom::new(channels, channels, 3), rng)?;
        let bn = store.batch_norm(&format!("{name}.bn"), channels);
        Ok(RaaBlock {
            name: name.to_string(),
            channels,
            conv,
            bn,
        })
    }

    /// `m = ReLU(BN(conv3(I)))`, `S = maxpool(m) ⊗ avgpool(m)` at one eighth
    /// resolution, gate = mean(S) · mean(m) per channel, output `I ⊗ gate`.
    pub fn forward<E: Exec>(&self, ex: &mut E, input: E::Var) -> Result<E::Var> {
        let s = ex.shape(input);
        if s.c != self.channels {
            return Err(LfaError::shape(format!(
                "{}: expected {} channels, got {s:?}",
                self.name, self.channels
            )));
        }
        if s.h < RAA_MIN_EXTENT || s.w < RAA_MIN_EXTENT {
            return Err(LfaError::shape(format!(
                "{}: spatial extent {}x{} below the {RAA_MIN_EXTENT}x{RAA_MIN_EXTENT} minimum",
                self.name, s.h, s.w
            )));
        }
        let m = ex.conv(input, &self.conv)?;
        let m = ex.batch_norm(m, &self.bn)?;
        let m = ex.activation(m, Activation::Relu)?;

        let m1 = ex.pool(m, PoolMode::Max, 2, 2)?;
        let m1 = ex.pool(m1, PoolMode::Max, 4, 4)?;
        let m2 = ex.pool(m, PoolMode::Avg, 2, 2)?;
        let m2 = ex.pool(m2, PoolMode::Avg, 4, 4)?;
        let region = ex.elementwise(Elementwise::Mul, m1, m2)?;

        let region_mean = ex.global_pool(region, PoolMode::Avg)?;
        let map_mean = ex.global_pool(m, PoolMode::Avg)?;
        let gate = ex.elementwise(Elementwise::Mul, region_mean, map_mean)?;
        ex.elementwise(Elementwise::Mul, input, gate)
    }
}
