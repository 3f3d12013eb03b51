//! Named gradient checks covering every differentiable operation, both
//! attention blocks, the loss and the assembled network.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{compare_coords, grad_check, select_coords, GradCheckOptions, GradReport, Probe, MIN_SAMPLES};
use crate::attention::{focal_modulation, LiteFusionBlock, LiteFusionSettings, RaaBlock};
use crate::error::{LfaError, Result};
use crate::exec::Exec;
use crate::layers::{Activation, ConvGeom, Padding, PoolMode, LEAKY_SLOPE};
use crate::model::{build_model, Model, ModelConfig};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Elementwise, Shape, Tensor};
use crate::training::{weighted_dice_loss, DiceLossConfig};
use crate::Mode;

pub const LAYER_TOLERANCE: f64 = 1e-3;
pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-2;
const DROPOUT_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteOptions {
    /// Overrides every check's own tolerance.
    pub tolerance: Option<f64>,
    /// Runs only the named check.
    pub only: Option<String>,
    pub seed: u64,
}

type Forward = dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>;

enum Objective {
    /// Σ wᵢyᵢ with standard-normal weights.
    RandomWeights,
    Mean,
}

struct Graph<'f> {
    name: &'static str,
    store: ParamStore,
    inputs: Vec<Tensor>,
    mode: Mode,
    check_inputs: bool,
    objective: Objective,
    /// Exclude coordinates whose perturbation changes a ReLU sign or max
    /// selection. Off for the full network, where some of its many units
    /// always cross and each crossing moves the objective negligibly.
    skip_kinks: bool,
    forward: &'f Forward,
}

fn evaluate(store: &ParamStore, inputs: &[Tensor], mode: Mode, forward: &Forward, weights: &[f64]) -> Result<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(DROPOUT_SEED);
    let mut tape = Tape::new(store, mode).with_rng(&mut rng);
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let y = forward(&mut tape, &ids)?;
    Ok(Probe {
        value: tape.value(y).data().iter().zip(weights).map(|(&v, &w)| v as f64 * w).sum(),
        pattern: tape.kink_pattern(),
    })
}

fn check_graph(g: Graph<'_>, opts: &GradCheckOptions) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(17));
    let weights: Vec<f64>;
    let (input_grads, param_grads, pattern) = {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(DROPOUT_SEED);
        let mut tape = Tape::new(&g.store, g.mode).with_rng(&mut drop_rng);
        let ids: Vec<NodeId> = g.inputs.iter().map(|t| tape.input(t.clone())).collect();
        let y = (g.forward)(&mut tape, &ids)?;
        let out = tape.value(y).clone();
        let seed = match g.objective {
            Objective::RandomWeights => Tensor::randn(out.shape(), 1.0, &mut rng),
            Objective::Mean => Tensor::full(out.shape(), (1.0 / out.len() as f64) as f32),
        };
        weights = seed.data().iter().map(|&w| w as f64).collect();
        let grads = tape.backward(y, seed)?;
        let ig: Vec<Tensor> = ids
            .iter()
            .zip(&g.inputs)
            .map(|(&id, t)| grads.node(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (ig, grads.into_param_grads(&g.store), tape.kink_pattern())
    };
    let skip = g.skip_kinks;
    let eval = |store: &ParamStore, inputs: &[Tensor]| {
        evaluate(store, inputs, g.mode, g.forward, &weights).map(|p| Probe {
            pattern: if skip { p.pattern } else { pattern },
            ..p
        })
    };
    let mut reports = Vec::new();

    if g.check_inputs {
        for (k, (x, ga)) in g.inputs.iter().zip(&input_grads).enumerate() {
            let name = if g.inputs.len() == 1 {
                g.name.to_string()
            } else {
                format!("{}/input{}", g.name, k + 1)
            };
            let mut inputs = g.inputs.clone();
            let coords = select_coords(x.len(), opts);
            reports.push(compare_coords(
                &name,
                &coords,
                |i| x.data()[i],
                |i| ga.data()[i] as f64,
                pattern,
                |i, v| {
                    inputs[k].data_mut()[i] = v;
                    let r = eval(&g.store, &inputs);
                    inputs[k].data_mut()[i] = x.data()[i];
                    r
                },
                opts,
            )?);
        }
    }

    if !g.store.is_empty() {
        // flatten (tensor, element) pairs across all parameters
        let mut index = Vec::new();
        for (p, t) in g.store.params().iter().enumerate() {
            index.extend((0..t.value.len()).map(|e| (p, e)));
        }
        let coords = select_coords(index.len(), opts);
        let mut store = g.store.clone();
        let ids: Vec<_> = g.store.ids().collect();
        let name = if g.check_inputs {
            format!("{}/params", g.name)
        } else {
            g.name.to_string()
        };
        reports.push(compare_coords(
            &name,
            &coords,
            |i| {
                let (p, e) = index[i];
                g.store.params()[p].value.data()[e]
            },
            |i| {
                let (p, e) = index[i];
                param_grads[p].data()[e] as f64
            },
            pattern,
            |i, v| {
                let (p, e) = index[i];
                store.get_mut(ids[p]).data_mut()[e] = v;
                let r = eval(&store, &g.inputs);
                store.get_mut(ids[p]).data_mut()[e] = g.store.params()[p].value.data()[e];
                r
            },
            opts,
        )?);
    }
    Ok(reports)
}

/// Moves every parameter off its initial value. Zero biases map pixels whose
/// channels are all clamped by a power or ReLU to exact zero vectors, where
/// layer norm and later ReLUs sit on a kink.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let noise = Tensor::randn(store.get(id).shape(), 0.1, rng);
        let t = store.get_mut(id);
        for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
}

/// Values with magnitude at least 0.1, away from activation kinks.
fn kink_free(shape: impl Into<Shape>, rng: &mut ChaCha8Rng) -> Tensor {
    let shape = shape.into();
    let data = (0..shape.numel())
        .map(|_| {
            let m: f32 = rng.gen_range(0.1..1.5);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// Distinct values at least 0.03 apart with magnitude at least 0.1, so max
/// selections cannot flip under a perturbation.
fn well_separated(shape: impl Into<Shape>, rng: &mut ChaCha8Rng) -> Tensor {
    let shape = shape.into();
    let mut data: Vec<f32> = (0..shape.numel())
        .map(|k| {
            let m = 0.1 + 0.03 * (k / 2) as f32;
            if k % 2 == 0 {
                m
            } else {
                -m - 0.015
            }
        })
        .collect();
    data.shuffle(rng);
    Tensor::from_vec(shape, data).expect("shape")
}

struct Case {
    name: &'static str,
    tolerance: f64,
    run: fn(&GradCheckOptions, &mut ChaCha8Rng) -> Result<Vec<GradReport>>,
}

fn unary(
    name: &'static str,
    input: Tensor,
    mode: Mode,
    f: &Forward,
    opts: &GradCheckOptions,
) -> Result<Vec<GradReport>> {
    check_graph(
        Graph {
            name,
            store: ParamStore::new(),
            inputs: vec![input],
            mode,
            check_inputs: true,
            objective: Objective::RandomWeights,
            skip_kinks: true,
            forward: f,
        },
        opts,
    )
}

fn conv_case(name: &'static str, geom: ConvGeom, input: Shape, opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GradReport>> {
    let mut store = ParamStore::new();
    let layer = store.conv(name, geom, rng)?;
    // non-zero biases so their gradients are exercised from a generic point
    let b = Tensor::randn(geom.bias_shape(), 0.5, rng);
    *store.get_mut(layer.bias) = b;
    let x = Tensor::randn(input, 1.0, rng);
    let f = move |t: &mut Tape, v: &[NodeId]| t.conv(v[0], &layer);
    check_graph(
        Graph {
            name,
            store,
            inputs: vec![x],
            mode: Mode::Infer,
            check_inputs: true,
            objective: Objective::RandomWeights,
            skip_kinks: true,
            forward: &f,
        },
        opts,
    )
}

fn binary(name: &'static str, kind: Elementwise, b_shape: Shape, opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GradReport>> {
    let a = Tensor::randn([2, 3, 4, 4], 1.0, rng);
    let b = Tensor::randn(b_shape, 1.0, rng);
    let f = move |t: &mut Tape, v: &[NodeId]| t.elementwise(kind, v[0], v[1]);
    check_graph(
        Graph {
            name,
            store: ParamStore::new(),
            inputs: vec![a, b],
            mode: Mode::Infer,
            check_inputs: true,
            objective: Objective::RandomWeights,
            skip_kinks: true,
            forward: &f,
        },
        opts,
    )
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "conv2d",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| conv_case("conv2d", ConvGeom::new(2, 3, 3), Shape::new(2, 2, 6, 5), o, r),
        },
        Case {
            name: "conv2d_pointwise",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| conv_case("conv2d_pointwise", ConvGeom::new(3, 4, 1), Shape::new(1, 3, 5, 5), o, r),
        },
        Case {
            name: "conv2d_dilated",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| conv_case("conv2d_dilated", ConvGeom::new(2, 3, 3).with_dilation(2), Shape::new(1, 2, 7, 6), o, r),
        },
        Case {
            name: "conv2d_depthwise",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| conv_case("conv2d_depthwise", ConvGeom::new(4, 4, 1).with_groups(4), Shape::new(2, 4, 3, 3), o, r),
        },
        Case {
            name: "conv2d_strided",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let g = ConvGeom::new(2, 3, 2).with_stride(2).with_padding(Padding::Valid);
                conv_case("conv2d_strided", g, Shape::new(1, 2, 6, 6), o, r)
            },
        },
        Case {
            name: "conv_transpose2d",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let mut store = ParamStore::new();
                let layer = store.conv_transpose("conv_transpose2d", ConvGeom::upsample(3, 2, 2), r)?;
                *store.get_mut(layer.bias) = Tensor::randn([1, 2, 1, 1], 0.5, r);
                let x = Tensor::randn([2, 3, 3, 4], 1.0, r);
                let f = move |t: &mut Tape, v: &[NodeId]| t.conv(v[0], &layer);
                check_graph(
                    Graph {
                        name: "conv_transpose2d",
                        store,
                        inputs: vec![x],
                        mode: Mode::Infer,
                        check_inputs: true,
                        objective: Objective::RandomWeights,
            skip_kinks: true,
                        forward: &f,
                    },
                    o,
                )
            },
        },
        Case {
            name: "dense",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let mut store = ParamStore::new();
                let layer = store.dense("dense", 4, 6, r);
                *store.get_mut(layer.bias) = Tensor::randn([1, 6, 1, 1], 0.5, r);
                let x = Tensor::randn([2, 4, 3, 2], 1.0, r);
                let f = move |t: &mut Tape, v: &[NodeId]| t.dense(v[0], &layer);
                check_graph(
                    Graph {
                        name: "dense",
                        store,
                        inputs: vec![x],
                        mode: Mode::Infer,
                        check_inputs: true,
                        objective: Objective::RandomWeights,
            skip_kinks: true,
                        forward: &f,
                    },
                    o,
                )
            },
        },
        Case {
            name: "batch_norm",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| norm_case("batch_norm", Mode::Infer, o, r),
        },
        Case {
            name: "batch_norm_train",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| norm_case("batch_norm_train", Mode::Train, o, r),
        },
        Case {
            name: "layer_norm",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let mut store = ParamStore::new();
                let layer = store.layer_norm("layer_norm", 4);
                *store.get_mut(layer.scale) = Tensor::uniform([1, 4, 1, 1], 0.5, 1.5, r);
                *store.get_mut(layer.shift) = Tensor::randn([1, 4, 1, 1], 0.5, r);
                let x = Tensor::randn([2, 4, 3, 3], 1.0, r);
                let f = move |t: &mut Tape, v: &[NodeId]| t.layer_norm(v[0], &layer);
                check_graph(
                    Graph {
                        name: "layer_norm",
                        store,
                        inputs: vec![x],
                        mode: Mode::Infer,
                        check_inputs: true,
                        objective: Objective::RandomWeights,
            skip_kinks: true,
                        forward: &f,
                    },
                    o,
                )
            },
        },
        Case {
            name: "max_pool",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let x = well_separated([2, 2, 8, 8], r);
                unary("max_pool", x, Mode::Infer, &|t, v| t.pool(v[0], PoolMode::Max, 2, 2), o)
            },
        },
        Case {
            name: "avg_pool",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let x = Tensor::randn([2, 2, 8, 8], 1.0, r);
                unary("avg_pool", x, Mode::Infer, &|t, v| t.pool(v[0], PoolMode::Avg, 4, 4), o)
            },
        },
        Case {
            name: "global_max_pool",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let x = well_separated([2, 3, 4, 4], r);
                unary("global_max_pool", x, Mode::Infer, &|t, v| t.global_pool(v[0], PoolMode::Max), o)
            },
        },
        Case {
            name: "global_avg_pool",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let x = Tensor::randn([2, 3, 4, 4], 1.0, r);
                unary("global_avg_pool", x, Mode::Infer, &|t, v| t.global_pool(v[0], PoolMode::Avg), o)
            },
        },
        Case {
            name: "relu",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| unary("relu", kink_free([1, 2, 4, 4], r), Mode::Infer, &|t, v| t.activation(v[0], Activation::Relu), o),
        },
        Case {
            name: "leaky_relu",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let f = |t: &mut Tape, v: &[NodeId]| t.activation(v[0], Activation::LeakyRelu(LEAKY_SLOPE));
                unary("leaky_relu", kink_free([1, 2, 4, 4], r), Mode::Infer, &f, o)
            },
        },
        Case {
            name: "gelu",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let x = Tensor::randn([1, 2, 4, 4], 1.5, r);
                unary("gelu", x, Mode::Infer, &|t, v| t.activation(v[0], Activation::Gelu), o)
            },
        },
        Case {
            name: "sigmoid",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let x = Tensor::randn([1, 2, 4, 4], 2.0, r);
                unary("sigmoid", x, Mode::Infer, &|t, v| t.activation(v[0], Activation::Sigmoid), o)
            },
        },
        Case {
            name: "power",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| unary("power", kink_free([1, 2, 4, 4], r), Mode::Infer, &|t, v| t.activation(v[0], Activation::Power(2.0)), o),
        },
        Case {
            name: "dropout",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let x = Tensor::randn([1, 2, 4, 4], 1.0, r);
                unary("dropout", x, Mode::Train, &|t, v| t.dropout(v[0], 0.5), o)
            },
        },
        Case {
            name: "add",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| binary("add", Elementwise::Add, Shape::new(2, 3, 4, 4), o, r),
        },
        Case {
            name: "sub",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| binary("sub", Elementwise::Sub, Shape::new(2, 3, 4, 4), o, r),
        },
        Case {
            name: "mul",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| binary("mul", Elementwise::Mul, Shape::new(2, 3, 4, 4), o, r),
        },
        Case {
            name: "broadcast_mul",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| binary("broadcast_mul", Elementwise::Mul, Shape::new(2, 3, 1, 1), o, r),
        },
        Case {
            name: "scale",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| unary("scale", Tensor::randn([1, 2, 3, 3], 1.0, r), Mode::Infer, &|t, v| t.scale(v[0], 0.25), o),
        },
        Case {
            name: "concat",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let a = Tensor::randn([2, 2, 3, 3], 1.0, r);
                let b = Tensor::randn([2, 3, 3, 3], 1.0, r);
                let f = |t: &mut Tape, v: &[NodeId]| t.concat(v);
                check_graph(
                    Graph {
                        name: "concat",
                        store: ParamStore::new(),
                        inputs: vec![a, b],
                        mode: Mode::Infer,
                        check_inputs: true,
                        objective: Objective::RandomWeights,
            skip_kinks: true,
                        forward: &f,
                    },
                    o,
                )
            },
        },
        Case {
            name: "focal_modulation",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let mut store = ParamStore::new();
                let layer = store.conv("focal_modulation.mod_pw", ConvGeom::new(3, 3, 1), r)?;
                jitter(&mut store, r);
                let x = well_separated([2, 3, 5, 5], r);
                let f = move |t: &mut Tape, v: &[NodeId]| Ok(focal_modulation(t, v[0], &layer, 0.25, 2.0)?.output);
                check_graph(
                    Graph {
                        name: "focal_modulation",
                        store,
                        inputs: vec![x],
                        mode: Mode::Infer,
                        check_inputs: true,
                        objective: Objective::RandomWeights,
            skip_kinks: true,
                        forward: &f,
                    },
                    o,
                )
            },
        },
        Case {
            name: "raa",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let mut store = ParamStore::new();
                let block = RaaBlock::new(&mut store, "raa", 3, r)?;
                jitter(&mut store, r);
                let x = Tensor::randn([1, 3, 16, 16], 0.5, r);
                let f = move |t: &mut Tape, v: &[NodeId]| block.forward(t, v[0]);
                check_graph(
                    Graph {
                        name: "raa",
                        store,
                        inputs: vec![x],
                        mode: Mode::Infer,
                        check_inputs: true,
                        objective: Objective::RandomWeights,
            skip_kinks: true,
                        forward: &f,
                    },
                    o,
                )
            },
        },
        Case {
            name: "litefusion",
            tolerance: LAYER_TOLERANCE,
            run: |o, r| {
                let mut store = ParamStore::new();
                let block = LiteFusionBlock::new(&mut store, "litefusion", 8, LiteFusionSettings::default(), r)?;
                jitter(&mut store, r);
                let x = Tensor::randn([1, 8, 8, 8], 0.5, r);
                let f = move |t: &mut Tape, v: &[NodeId]| block.forward(t, v[0]);
                check_graph(
                    Graph {
                        name: "litefusion",
                        store,
                        inputs: vec![x],
                        mode: Mode::Infer,
                        check_inputs: true,
                        objective: Objective::RandomWeights,
            skip_kinks: true,
                        forward: &f,
                    },
                    o,
                )
            },
        },
        Case {
            name: "weighted_dice_loss",
            tolerance: LOSS_TOLERANCE,
            run: |o, r| {
                let s = Tensor::uniform([2, 1, 4, 4], 0.01, 0.99, r);
                let g = Tensor::uniform([2, 1, 4, 4], 0.0, 1.0, r).map(|v| if v > 0.6 { 1.0 } else { 0.0 });
                let cfg = DiceLossConfig::default();
                let (_, grad) = weighted_dice_loss(&s, &g, &cfg)?;
                Ok(vec![grad_check(
                    "weighted_dice_loss",
                    &s,
                    &grad,
                    |t| Ok(weighted_dice_loss(t, &g, &cfg)?.0),
                    o,
                )?])
            },
        },
        Case {
            name: "model",
            tolerance: MODEL_TOLERANCE,
            run: |o, r| {
                let mut model = build_model(&ModelConfig::default(), r.gen())?;
                let x = Tensor::uniform([1, 3, 64, 64], 0.0, 1.0, r);
                calibrate_norms(&mut model, &x)?;
                let store = model.params.clone();
                let f = move |t: &mut Tape, v: &[NodeId]| model.forward(t, v[0]);
                let opts = GradCheckOptions {
                    samples: MIN_SAMPLES,
                    ..*o
                };
                check_graph(
                    Graph {
                        name: "model",
                        store,
                        inputs: vec![x],
                        mode: Mode::Infer,
                        check_inputs: false,
                        objective: Objective::Mean,
                        skip_kinks: false,
                        forward: &f,
                    },
                    &opts,
                )
            },
        },
    ]
}

/// Sets every batch-norm running estimate to the statistics of `x`, the
/// state a trained network is in; the identity estimates of a fresh network
/// let the cubic attention gates blow up in inference mode.
fn calibrate_norms(model: &mut Model, x: &Tensor) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(DROPOUT_SEED);
    let updates = {
        let mut tape = Tape::new(&model.params, Mode::Train).with_rng(&mut rng);
        let v = tape.constant(x.clone());
        model.forward(&mut tape, v)?;
        tape.take_stats_updates()
    };
    for u in updates {
        *model.params.stats_mut(u.buffer) = u.batch;
    }
    Ok(())
}

fn norm_case(name: &'static str, mode: Mode, o: &GradCheckOptions, r: &mut ChaCha8Rng) -> Result<Vec<GradReport>> {
    let mut store = ParamStore::new();
    let layer = store.batch_norm(name, 3);
    *store.get_mut(layer.scale) = Tensor::uniform([1, 3, 1, 1], 0.5, 1.5, r);
    *store.get_mut(layer.shift) = Tensor::randn([1, 3, 1, 1], 0.5, r);
    let stats = store.stats_mut(layer.stats);
    for c in 0..3 {
        stats.mean[c] = r.gen_range(-0.5..0.5);
        stats.var[c] = r.gen_range(0.5..1.5);
    }
    let x = Tensor::randn([2, 3, 3, 3], 1.0, r);
    let f = move |t: &mut Tape, v: &[NodeId]| t.batch_norm(v[0], &layer);
    check_graph(
        Graph {
            name,
            store,
            inputs: vec![x],
            mode,
            check_inputs: true,
            objective: Objective::RandomWeights,
            skip_kinks: true,
            forward: &f,
        },
        o,
    )
}

pub fn suite_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

/// Runs every named check (or only `opts.only`) with its own tolerance
/// unless overridden.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<GradReport>> {
    let all = cases();
    let selected: Vec<&Case> = match &opts.only {
        None => all.iter().collect(),
        Some(name) => {
            let hit: Vec<&Case> = all.iter().filter(|c| c.name.eq_ignore_ascii_case(name)).collect();
            if hit.is_empty() {
                return Err(LfaError::config(format!(
                    "unknown gradient check `{name}`; available: {}",
                    suite_names().join(", ")
                )));
            }
            hit
        }
    };
    let mut reports = Vec::new();
    for case in selected {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let o = GradCheckOptions {
            tolerance: opts.tolerance.unwrap_or(case.tolerance),
            seed: opts.seed,
            ..Default::default()
        };
        reports.extend((case.run)(&o, &mut rng)?);
    }
    Ok(reports)
}
