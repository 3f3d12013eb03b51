use std::fmt;

use crate::error::{LfaError, Result};
use crate::exec::Exec;
use crate::layers::pool::pool_output_shape;
use crate::layers::{Activation, BatchNormLayer, ConvLayer, DenseLayer, LayerNormLayer, PoolMode};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::{Elementwise, Shape};

/// Cost of one executed operation.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub output: Shape,
    pub params: usize,
    pub flops: u64,
}

/// Learnable element count, excluding normalization running statistics.
pub fn count_params(model: &Model) -> usize {
    model.params.element_count()
}

/// Shape-only executor that records parameters and floating-point
/// operations for every call. Multiply-accumulates count as two operations;
/// pooling, activations, normalization and elementwise ops count one per
/// output element; dropout and concatenation are free.
pub struct FlopCounter<'a> {
    store: &'a ParamStore,
    shapes: Vec<Shape>,
    layers: Vec<LayerCost>,
}

impl<'a> FlopCounter<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        FlopCounter {
            store,
            shapes: Vec::new(),
            layers: Vec::new(),
        }
    }

    pub fn input(&mut self, shape: Shape) -> usize {
        self.shapes.push(shape);
        self.shapes.len() - 1
    }

    pub fn layers(&self) -> &[LayerCost] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<LayerCost> {
        self.layers
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    fn record(&mut self, name: Option<&str>, kind: &'static str, output: Shape, params: usize, flops: u64) -> usize {
        let name = match name {
            Some(n) => n.to_string(),
            None => format!("{kind}#{}", self.layers.len()),
        };
        self.layers.push(LayerCost {
            name,
            kind,
            output,
            params,
            flops,
        });
        self.shapes.push(output);
        self.shapes.len() - 1
    }

    fn numel(&self, ids: &[crate::params::ParamId]) -> usize {
        ids.iter().map(|&id| self.store.get(id).len()).sum()
    }
}

fn check_channels(name: &str, got: Shape, want: usize) -> Result<()> {
    if got.c != want {
        return Err(LfaError::shape(format!("{name}: expected {want} channels, got {got:?}")));
    }
    Ok(())
}

impl Exec for FlopCounter<'_> {
    type Var = usize;

    fn shape(&self, v: usize) -> Shape {
        self.shapes[v]
    }

    fn conv(&mut self, x: usize, layer: &ConvLayer) -> Result<usize> {
        let s = self.shapes[x];
        check_channels(&layer.name, s, layer.geom.in_channels)?;
        let params = self.numel(&[layer.weight, layer.bias]);
        let (out, macs, kind) = if layer.transposed {
            (layer.geom.transposed_output_shape(s), layer.geom.transposed_macs(s), "conv_transpose")
        } else {
            (layer.geom.output_shape(s)?, layer.geom.macs(s)?, "conv")
        };
        Ok(self.record(Some(&layer.name), kind, out, params, 2 * macs))
    }

    fn batch_norm(&mut self, x: usize, layer: &BatchNormLayer) -> Result<usize> {
        let s = self.shapes[x];
        let params = self.numel(&[layer.scale, layer.shift]);
        check_channels(&layer.name, s, params / 2)?;
        Ok(self.record(Some(&layer.name), "batch_norm", s, params, s.numel() as u64))
    }

    fn layer_norm(&mut self, x: usize, layer: &LayerNormLayer) -> Result<usize> {
        let s = self.shapes[x];
        let params = self.numel(&[layer.scale, layer.shift]);
        check_channels(&layer.name, s, params / 2)?;
        Ok(self.record(Some(&layer.name), "layer_norm", s, params, s.numel() as u64))
    }

    fn dense(&mut self, x: usize, layer: &DenseLayer) -> Result<usize> {
        let s = self.shapes[x];
        check_channels(&layer.name, s, layer.features_in)?;
        let out = s.with_channels(layer.features_out);
        let macs = (s.n * s.h * s.w * layer.features_in * layer.features_out) as u64;
        let params = self.numel(&[layer.weight, layer.bias]);
        Ok(self.record(Some(&layer.name), "dense", out, params, 2 * macs))
    }

    fn pool(&mut self, x: usize, mode: PoolMode, window: usize, stride: usize) -> Result<usize> {
        let out = pool_output_shape(self.shapes[x], window, stride)?;
        let kind = match mode {
            PoolMode::Max => "max_pool",
            PoolMode::Avg => "avg_pool",
        };
        Ok(self.record(None, kind, out, 0, out.numel() as u64))
    }

    fn global_pool(&mut self, x: usize, mode: PoolMode) -> Result<usize> {
        let s = self.shapes[x];
        let out = Shape::new(s.n, s.c, 1, 1);
        let kind = match mode {
            PoolMode::Max => "global_max_pool",
            PoolMode::Avg => "global_avg_pool",
        };
        Ok(self.record(None, kind, out, 0, out.numel() as u64))
    }

    fn activation(&mut self, x: usize, kind: Activation) -> Result<usize> {
        let s = self.shapes[x];
        let k = match kind {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Gelu => "gelu",
            Activation::Sigmoid => "sigmoid",
            Activation::Power(_) => "power",
        };
        Ok(self.record(None, k, s, 0, s.numel() as u64))
    }

    fn dropout(&mut self, x: usize, _rate: f32) -> Result<usize> {
        let s = self.shapes[x];
        Ok(self.record(None, "dropout", s, 0, 0))
    }

    fn elementwise(&mut self, kind: Elementwise, a: usize, b: usize) -> Result<usize> {
        let (sa, sb) = (self.shapes[a], self.shapes[b]);
        let broadcast = sb == Shape::new(sa.n, sa.c, 1, 1);
        if sa != sb && !broadcast {
            return Err(LfaError::shape(format!("elementwise operands {sa:?} and {sb:?}")));
        }
        let k = match kind {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
        };
        Ok(self.record(None, k, sa, 0, sa.numel() as u64))
    }

    fn scale(&mut self, x: usize, _s: f32) -> Result<usize> {
        let s = self.shapes[x];
        Ok(self.record(None, "scale", s, 0, s.numel() as u64))
    }

    fn concat(&mut self, parts: &[usize]) -> Result<usize> {
        let first = self.shapes[parts[0]];
        let mut c = 0;
        for &p in parts {
            let s = self.shapes[p];
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(LfaError::shape(format!("concat of {first:?} and {s:?}")));
            }
            c += s.c;
        }
        Ok(self.record(None, "concat", first.with_channels(c), 0, 0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub input: Shape,
    pub param_count: usize,
    pub flops: u64,
    /// Four bytes per parameter.
    pub model_size_bytes: usize,
    pub layers: Vec<LayerCost>,
}

impl ComplexityReport {
    pub fn params_millions(&self) -> f64 {
        self.param_count as f64 / 1e6
    }

    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    pub fn size_megabytes(&self) -> f64 {
        self.model_size_bytes as f64 / 1e6
    }

    /// `name,kind,n,c,h,w,params,flops` per layer.
    pub fn layers_csv(&self) -> String {
        let mut out = String::from("name,kind,n,c,h,w,params,flops\n");
        for l in &self.layers {
            let o = l.output;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                l.name, l.kind, o.n, o.c, o.h, o.w, l.params, l.flops
            ));
        }
        out
    }

    /// Aligned per-layer table followed by the totals.
    pub fn layers_table(&self) -> String {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(4).max(4);
        let mut out = format!(
            "{:<width$}  {:<16} {:>20} {:>8} {:>14}\n",
            "name", "kind", "output", "params", "flops"
        );
        for l in &self.layers {
            out.push_str(&format!(
                "{:<width$}  {:<16} {:>20} {:>8} {:>14}\n",
                l.name,
                l.kind,
                l.output.to_string(),
                l.params,
                l.flops
            ));
        }
        let p: usize = self.layers.iter().map(|l| l.params).sum();
        let f: u64 = self.layers.iter().map(|l| l.flops).sum();
        out.push_str(&format!("{:<width$}  {:<16} {:>20} {:>8} {:>14}\n", "total", "", "", p, f));
        out
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input:  {}", self.input)?;
        writeln!(f, "params: {:.2} M ({})", self.params_millions(), self.param_count)?;
        writeln!(f, "FLOPs:  {:.2} G ({})", self.gflops(), self.flops)?;
        write!(f, "size:   {:.2} MB ({} bytes)", self.size_megabytes(), self.model_size_bytes)
    }
}

/// Walks the forward graph for `input` with shapes only.
pub fn estimate_flops(model: &Model, input: Shape) -> Result<ComplexityReport> {
    let mut counter = FlopCounter::new(&model.params);
    let x = counter.input(input);
    model.forward(&mut counter, x)?;
    let flops = counter.total_flops();
    let param_count = count_params(model);
    Ok(ComplexityReport {
        input,
        param_count,
        flops,
        model_size_bytes: 4 * param_count,
        layers: counter.into_layers(),
    })
}
