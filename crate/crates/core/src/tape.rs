//! Reverse-mode execution: a Wengert list of forward values and the data
//! each backward kernel needs.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand_chacha::ChaCha8Rng;

use crate::error::{LfaError, Result};
use crate::exec::Exec;
use crate::layers::norm::NormCache;
use crate::layers::{self, Activation, BatchNormLayer, ConvGeom, ConvLayer, DenseLayer, LayerNormLayer, PoolMode};
use crate::params::{ParamId, ParamStore, StatsUpdate};
use crate::tensor::{self, Elementwise, Shape, Tensor};
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Input,
    Conv {
        x: NodeId,
        weight: ParamId,
        bias: ParamId,
        geom: ConvGeom,
        transposed: bool,
    },
    BatchNorm {
        x: NodeId,
        scale: ParamId,
        shift: ParamId,
        cache: NormCache,
    },
    LayerNorm {
        x: NodeId,
        scale: ParamId,
        shift: ParamId,
        cache: NormCache,
    },
    Dense {
        x: NodeId,
        weight: ParamId,
        bias: ParamId,
    },
    Pool {
        x: NodeId,
        mode: PoolMode,
        window: usize,
        stride: usize,
        argmax: Option<Vec<u32>>,
    },
    GlobalPool {
        x: NodeId,
        mode: PoolMode,
        argmax: Option<Vec<u32>>,
    },
    Act {
        x: NodeId,
        kind: Activation,
    },
    Dropout {
        x: NodeId,
        mask: Option<Vec<f32>>,
    },
    Elementwise {
        kind: Elementwise,
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        s: f32,
    },
    Concat {
        parts: Vec<NodeId>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].as_ref()
    }

    /// Parameter gradients in store order, zero-filled for parameters the
    /// output did not depend on.
    pub fn into_param_grads(self, store: &ParamStore) -> Vec<Tensor> {
        self.params
            .into_iter()
            .zip(store.params())
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    mode: Mode,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node>,
    stats_updates: Vec<StatsUpdate>,
    clamped: usize,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Tape {
            store,
            mode,
            rng: None,
            nodes: Vec::new(),
            stats_updates: Vec::new(),
            clamped: 0,
        }
    }

    /// Supplies the generator that train-mode dropout draws from.
    pub fn with_rng(mut self, rng: &'a mut ChaCha8Rng) -> Self {
        self.rng = Some(rng);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Input that does not need a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Input whose gradient [`Tape::backward`] will report.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Negative inputs clamped by power activations so far.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    /// Fingerprint of every piecewise choice made so far: the sign of each
    /// ReLU-family input and each max-pool selection. Two evaluations with
    /// the same pattern lie on the same smooth piece.
    pub fn kink_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Act {
                    x,
                    kind: Activation::Relu | Activation::LeakyRelu(_),
                } => {
                    for &v in self.value(*x).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::Pool { argmax: Some(a), .. } | Op::GlobalPool { argmax: Some(a), .. } => a.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn take_stats_updates(&mut self) -> Vec<StatsUpdate> {
        std::mem::take(&mut self.stats_updates)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Back-propagates `seed` (the gradient of some scalar with respect to
    /// `output`) through every recorded operation.
    pub fn backward(&self, output: NodeId, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return Err(LfaError::shape(format!(
                "seed gradient {:?} for output {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        fn acc(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Conv {
                    x,
                    weight,
                    bias,
                    geom,
                    transposed,
                } => {
                    let xv = self.value(*x);
                    let w = self.store.get(*weight);
                    let cg = if *transposed {
                        layers::conv_transpose2d_backward(xv, w, geom, &g, self.needs(*x))?
                    } else {
                        layers::conv2d_backward(xv, w, geom, &g, self.needs(*x))?
                    };
                    if let Some(gx) = cg.input {
                        acc(&mut grads[x.0], gx);
                    }
                    acc(&mut pgrads[weight.0], cg.weight);
                    acc(&mut pgrads[bias.0], cg.bias);
                }
                Op::BatchNorm { x, scale, shift, cache } => {
                    let (gx, gs, gb) = layers::batch_norm_backward(cache, self.store.get(*scale), &g);
                    if self.needs(*x) {
                        acc(&mut grads[x.0], gx);
                    }
                    acc(&mut pgrads[scale.0], gs);
                    acc(&mut pgrads[shift.0], gb);
                }
                Op::LayerNorm { x, scale, shift, cache } => {
                    let (gx, gs, gb) = layers::layer_norm_backward(cache, self.store.get(*scale), &g);
                    if self.needs(*x) {
                        acc(&mut grads[x.0], gx);
                    }
                    acc(&mut pgrads[scale.0], gs);
                    acc(&mut pgrads[shift.0], gb);
                }
                Op::Dense { x, weight, bias } => {
                    let (gx, gw, gb) =
                        layers::dense_backward(self.value(*x), self.store.get(*weight), &g, self.needs(*x));
                    if let Some(gx) = gx {
                        acc(&mut grads[x.0], gx);
                    }
                    acc(&mut pgrads[weight.0], gw);
                    acc(&mut pgrads[bias.0], gb);
                }
                Op::Pool {
                    x,
                    mode,
                    window,
                    stride,
                    argmax,
                } => {
                    let gx = layers::pool2d_backward(
                        self.value(*x).shape(),
                        &g,
                        *mode,
                        *window,
                        *stride,
                        argmax.as_deref(),
                    )?;
                    acc(&mut grads[x.0], gx);
                }
                Op::GlobalPool { x, mode, argmax } => {
                    let gx = layers::global_pool_backward(self.value(*x).shape(), &g, *mode, argmax.as_deref())?;
                    acc(&mut grads[x.0], gx);
                }
                Op::Act { x, kind } => {
                    let gx = layers::activation_backward(*kind, self.value(*x), &node.value, &g);
                    acc(&mut grads[x.0], gx);
                }
                Op::Dropout { x, mask } => {
                    acc(&mut grads[x.0], layers::dropout_backward(mask.as_deref(), &g));
                }
                Op::Elementwise { kind, a, b } => {
                    let (ga, gb) = tensor::elementwise_backward(*kind, self.value(*a), self.value(*b), &g);
                    if self.needs(*a) {
                        acc(&mut grads[a.0], ga);
                    }
                    if self.needs(*b) {
                        acc(&mut grads[b.0], gb);
                    }
                }
                Op::Scale { x, s } => {
                    acc(&mut grads[x.0], g.scale(*s));
                }
                Op::Concat { parts } => {
                    let sizes: Vec<usize> = parts.iter().map(|p| self.value(*p).shape().c).collect();
                    for (p, gp) in parts.iter().zip(tensor::split_channels(&g, &sizes)?) {
                        if self.needs(*p) {
                            acc(&mut grads[p.0], gp);
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params: pgrads,
        })
    }
}

impl Exec for Tape<'_> {
    type Var = NodeId;

    fn shape(&self, v: NodeId) -> Shape {
        self.value(v).shape()
    }

    fn conv(&mut self, x: NodeId, layer: &ConvLayer) -> Result<NodeId> {
        let w = self.store.get(layer.weight);
        let b = self.store.get(layer.bias);
        let out = if layer.transposed {
            layers::conv_transpose2d_forward(self.value(x), w, b, &layer.geom)?
        } else {
            layers::conv2d_forward(self.value(x), w, b, &layer.geom)?
        };
        Ok(self.push(
            out,
            Op::Conv {
                x,
                weight: layer.weight,
                bias: layer.bias,
                geom: layer.geom,
                transposed: layer.transposed,
            },
            true,
        ))
    }

    fn batch_norm(&mut self, x: NodeId, layer: &BatchNormLayer) -> Result<NodeId> {
        let out = layers::batch_norm_forward(
            self.value(x),
            self.store.get(layer.scale),
            self.store.get(layer.shift),
            self.store.stats(layer.stats),
            layer.epsilon,
            self.mode,
        )?;
        if let Some(batch) = out.batch_stats {
            self.stats_updates.push(StatsUpdate {
                buffer: layer.stats,
                batch,
                momentum: layer.momentum,
            });
        }
        Ok(self.push(
            out.output,
            Op::BatchNorm {
                x,
                scale: layer.scale,
                shift: layer.shift,
                cache: out.cache,
            },
            true,
        ))
    }

    fn layer_norm(&mut self, x: NodeId, layer: &LayerNormLayer) -> Result<NodeId> {
        let (out, cache) = layers::layer_norm_forward(
            self.value(x),
            self.store.get(layer.scale),
            self.store.get(layer.shift),
            layer.epsilon,
        )?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                scale: layer.scale,
                shift: layer.shift,
                cache,
            },
            true,
        ))
    }

    fn dense(&mut self, x: NodeId, layer: &DenseLayer) -> Result<NodeId> {
        let out = layers::dense_forward(self.value(x), self.store.get(layer.weight), self.store.get(layer.bias))?;
        Ok(self.push(
            out,
            Op::Dense {
                x,
                weight: layer.weight,
                bias: layer.bias,
            },
            true,
        ))
    }

    fn pool(&mut self, x: NodeId, mode: PoolMode, window: usize, stride: usize) -> Result<NodeId> {
        let p = layers::pool2d(self.value(x), mode, window, stride)?;
        let ng = self.needs(x);
        Ok(self.push(
            p.output,
            Op::Pool {
                x,
                mode,
                window,
                stride,
                argmax: p.argmax,
            },
            ng,
        ))
    }

    fn global_pool(&mut self, x: NodeId, mode: PoolMode) -> Result<NodeId> {
        let p = layers::global_pool(self.value(x), mode)?;
        let ng = self.needs(x);
        Ok(self.push(
            p.output,
            Op::GlobalPool {
                x,
                mode,
                argmax: p.argmax,
            },
            ng,
        ))
    }

    fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        let a = layers::activation(kind, self.value(x));
        self.clamped += a.clamped;
        let ng = self.needs(x);
        Ok(self.push(a.output, Op::Act { x, kind }, ng))
    }

    fn dropout(&mut self, x: NodeId, rate: f32) -> Result<NodeId> {
        let mode = self.mode;
        let d = if mode == Mode::Train && rate > 0.0 {
            let rng = self
                .rng
                .as_deref_mut()
                .ok_or_else(|| LfaError::config("train-mode dropout needs a random generator"))?;
            layers::dropout(&self.nodes[x.0].value, rate, rng, mode)?
        } else {
            layers::dropout::Dropped {
                output: self.value(x).clone(),
                mask: None,
            }
        };
        let ng = self.needs(x);
        Ok(self.push(d.output, Op::Dropout { x, mask: d.mask }, ng))
    }

    fn elementwise(&mut self, kind: Elementwise, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = tensor::elementwise(kind, self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Elementwise { kind, a, b }, ng))
    }

    fn scale(&mut self, x: NodeId, s: f32) -> Result<NodeId> {
        let out = self.value(x).scale(s);
        let ng = self.needs(x);
        Ok(self.push(out, Op::Scale { x, s }, ng))
    }

    fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = tensor::concat_channels(&refs)?;
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }
}
