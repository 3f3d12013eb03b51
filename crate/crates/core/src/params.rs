//! Named parameter tensors and batch-norm running statistics.

use rand::Rng;

use crate::error::{LfaError, Result};
use crate::layers::norm::{BN_EPSILON, BN_MOMENTUM, LN_EPSILON};
use crate::layers::{BatchNormLayer, ChannelStats, ConvGeom, ConvLayer, DenseLayer, LayerNormLayer};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedStats {
    pub name: String,
    pub stats: ChannelStats,
}

/// Batch statistics observed during a train-mode forward pass, applied to
/// the running estimates once the step completes.
#[derive(Clone, Debug)]
pub struct StatsUpdate {
    pub buffer: BufferId,
    pub batch: ChannelStats,
    pub momentum: f32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<NamedTensor>,
    buffers: Vec<NamedStats>,
}

/// He-normal standard deviation for a given fan-in.
fn he_std(fan_in: usize) -> f32 {
    (2.0 / fan_in.max(1) as f32).sqrt()
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(NamedTensor {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, stats: ChannelStats) -> BufferId {
        self.buffers.push(NamedStats {
            name: name.into(),
            stats,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn stats(&self, id: BufferId) -> &ChannelStats {
        &self.buffers[id.0].stats
    }

    pub fn stats_mut(&mut self, id: BufferId) -> &mut ChannelStats {
        &mut self.buffers[id.0].stats
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn buffers(&self) -> &[NamedStats] {
        &self.buffers
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Learnable element count; running statistics are excluded.
    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn apply_stats_updates(&mut self, updates: &[StatsUpdate]) {
        for u in updates {
            self.buffers[u.buffer.0].stats.update(&u.batch, u.momentum);
        }
    }

    /// All parameter values concatenated in registration order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.element_count());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.element_count() {
            return Err(LfaError::shape(format!(
                "flat parameter vector of length {} for {} parameters",
                flat.len(),
                self.element_count()
            )));
        }
        let mut at = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Replaces parameter and buffer values by name; every entry must exist
    /// with the same shape.
    pub fn load_named(&mut self, tensors: &[NamedTensor], buffers: &[NamedStats]) -> Result<()> {
        if tensors.len() != self.params.len() || buffers.len() != self.buffers.len() {
            return Err(LfaError::shape(format!(
                "expected {} parameters and {} buffers, found {} and {}",
                self.params.len(),
                self.buffers.len(),
                tensors.len(),
                buffers.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(tensors) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(LfaError::shape(format!(
                    "parameter `{}` {:?} does not match stored `{}` {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        for (dst, src) in self.buffers.iter_mut().zip(buffers) {
            if dst.name != src.name || dst.stats.channels() != src.stats.channels() {
                return Err(LfaError::shape(format!(
                    "buffer `{}` does not match stored `{}`",
                    dst.name, src.name
                )));
            }
            dst.stats = src.stats.clone();
        }
        Ok(())
    }

    pub fn conv(&mut self, name: &str, geom: ConvGeom, rng: &mut impl Rng) -> Result<ConvLayer> {
        geom.validate()?;
        let ws = geom.weight_shape();
        let fan_in = ws.c * ws.h * ws.w;
        let weight = self.add(format!("{name}.weight"), Tensor::randn(ws, he_std(fan_in), rng));
        let bias = self.add(format!("{name}.bias"), Tensor::zeros(geom.bias_shape()));
        Ok(ConvLayer {
            name: name.to_string(),
            weight,
            bias,
            geom,
            transposed: false,
        })
    }

    pub fn conv_transpose(&mut self, name: &str, geom: ConvGeom, rng: &mut impl Rng) -> Result<ConvLayer> {
        if geom.groups != 1 {
            return Err(LfaError::config("grouped transposed convolution is not supported"));
        }
        let ws = geom.transposed_weight_shape();
        // each output pixel receives in_channels · (k / stride)² taps
        let taps = (geom.kernel.0 * geom.kernel.1) / (geom.stride * geom.stride).max(1);
        let fan_in = geom.in_channels * taps.max(1);
        let weight = self.add(format!("{name}.weight"), Tensor::randn(ws, he_std(fan_in), rng));
        let bias = self.add(format!("{name}.bias"), Tensor::zeros(geom.bias_shape()));
        Ok(ConvLayer {
            name: name.to_string(),
            weight,
            bias,
            geom,
            transposed: true,
        })
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> BatchNormLayer {
        let scale = self.add(format!("{name}.scale"), Tensor::ones([1, channels, 1, 1]));
        let shift = self.add(format!("{name}.shift"), Tensor::zeros([1, channels, 1, 1]));
        let stats = self.add_buffer(format!("{name}.running"), ChannelStats::identity(channels));
        BatchNormLayer {
            name: name.to_string(),
            scale,
            shift,
            stats,
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn layer_norm(&mut self, name: &str, channels: usize) -> LayerNormLayer {
        let scale = self.add(format!("{name}.scale"), Tensor::ones([1, channels, 1, 1]));
        let shift = self.add(format!("{name}.shift"), Tensor::zeros([1, channels, 1, 1]));
        LayerNormLayer {
            name: name.to_string(),
            scale,
            shift,
            epsilon: LN_EPSILON,
        }
    }

    pub fn dense(&mut self, name: &str, features_in: usize, features_out: usize, rng: &mut impl Rng) -> DenseLayer {
        let weight = self.add(
            format!("{name}.weight"),
            Tensor::randn([features_out, features_in, 1, 1], he_std(features_in), rng),
        );
        let bias = self.add(format!("{name}.bias"), Tensor::zeros([1, features_out, 1, 1]));
        DenseLayer {
            name: name.to_string(),
            weight,
            bias,
            features_in,
            features_out,
        }
    }
}
