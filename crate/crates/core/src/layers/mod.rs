//! Layer kernels with explicit forward and backward passes, plus the
//! handles the network uses to refer to parameters held in a
//! [`ParamStore`](crate::params::ParamStore).

pub mod activation;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod norm;
pub mod pool;

pub use activation::{activation, activation_backward, Activation, LEAKY_SLOPE};
pub use conv::{
    conv2d, conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward,
    transposed_conv2d, ConvGeom, ConvGrads, ConvParams, Padding,
};
pub use dense::{dense, dense_backward, dense_forward, DenseParams};
pub use dropout::{dropout, dropout_backward};
pub use norm::{
    batch_norm, batch_norm_backward, batch_norm_forward, layer_norm, layer_norm_backward,
    layer_norm_forward, ChannelStats, NormParams,
};
pub use pool::{global_pool, global_pool_backward, pool2d, pool2d_backward, PoolMode};

use crate::params::{BufferId, ParamId};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub transposed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer {
    pub name: String,
    pub scale: ParamId,
    pub shift: ParamId,
    pub stats: BufferId,
    pub epsilon: f32,
    pub momentum: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormLayer {
    pub name: String,
    pub scale: ParamId,
    pub shift: ParamId,
    pub epsilon: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub features_in: usize,
    pub features_out: usize,
}
