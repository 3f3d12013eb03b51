use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::attention::{LiteFusionBlock, RaaBlock};
use crate::error::{LfaError, Result};
use crate::exec::Exec;
use crate::layers::{Activation, BatchNormLayer, ConvGeom, ConvLayer, PoolMode};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::Mode;

/// Spatial extents must be a multiple of this.
pub const SPATIAL_MULTIPLE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage {
    pub branches: Vec<ConvLayer>,
    pub bn: BatchNormLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck {
    pub lite_fusion: Option<LiteFusionBlock>,
    pub raa: Option<RaaBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStage {
    pub up: ConvLayer,
    pub skip_raa: Option<RaaBlock>,
    pub conv: ConvLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub seed: u64,
    pub encoder: [EncoderStage; 3],
    pub bottleneck: Bottleneck,
    /// Ordered deepest first: stage 3, 2, 1.
    pub decoder: [DecoderStage; 3],
    pub head: ConvLayer,
}

/// Builds every layer with He-normal kernels drawn from a generator seeded
/// with `seed`; identical arguments give bitwise-identical parameters.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = config;

    let mut encoder = Vec::with_capacity(3);
    let mut c_in = cfg.in_channels;
    for k in 1..=3 {
        let widths = cfg.branch_widths(k);
        let mut branches = Vec::new();
        if cfg.use_multiscale {
            let geoms = [
                ("pw", ConvGeom::new(c_in, widths[0], 1)),
                ("conv3", ConvGeom::new(c_in, widths[1], 3)),
                ("dil3", ConvGeom::new(c_in, widths[2], 3).with_dilation(2)),
            ];
            for (tag, g) in geoms {
                branches.push(store.conv(&format!("enc{k}.{tag}"), g, &mut rng)?);
            }
        } else {
            branches.push(store.conv(&format!("enc{k}.conv3"), ConvGeom::new(c_in, widths[0], 3), &mut rng)?);
        }
        let width = cfg.encoder_width(k);
        let bn = store.batch_norm(&format!("enc{k}.bn"), width);
        encoder.push(EncoderStage { branches, bn });
        c_in = width;
    }

    let c3 = cfg.encoder_width(3);
    let lite_fusion = if cfg.use_lf_bottleneck {
        Some(LiteFusionBlock::new(&mut store, "bottleneck.lf", c3, cfg.lite_fusion(), &mut rng)?)
    } else {
        None
    };
    let raa = if cfg.use_raa_bottleneck {
        Some(RaaBlock::new(&mut store, "bottleneck.raa", c3, &mut rng)?)
    } else {
        None
    };

    let mut decoder = Vec::with_capacity(3);
    let mut below = cfg.bottleneck_width();
    for k in (1..=3).rev() {
        let w = cfg.stage_widths[k - 1];
        let up = store.conv_transpose(&format!("dec{k}.up"), ConvGeom::upsample(below, w, 2), &mut rng)?;
        let skip_w = cfg.encoder_width(k);
        let skip_raa = if cfg.raa_on_skips.contains(&k) {
            Some(RaaBlock::new(&mut store, &format!("dec{k}.skip_raa"), skip_w, &mut rng)?)
        } else {
            None
        };
        let fused = if cfg.use_skips { skip_w + w } else { w };
        let conv = store.conv(&format!("dec{k}.conv3"), ConvGeom::new(fused, w, 3), &mut rng)?;
        decoder.push(DecoderStage { up, skip_raa, conv });
        below = w;
    }
    let head = store.conv("head", ConvGeom::new(cfg.stage_widths[0], 1, 1), &mut rng)?;

    let encoder: [EncoderStage; 3] = encoder.try_into().expect("three encoder stages");
    let decoder: [DecoderStage; 3] = decoder.try_into().expect("three decoder stages");
    Ok(Model {
        config: cfg.clone(),
        params: store,
        seed,
        encoder,
        bottleneck: Bottleneck { lite_fusion, raa },
        decoder,
        head,
    })
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.params.element_count()
    }

    /// Encoder stage `k` (1-based). Returns the full-resolution skip map and
    /// the pooled map passed to the next stage.
    pub fn encoder_block<E: Exec>(&self, ex: &mut E, x: E::Var, k: usize) -> Result<(E::Var, E::Var)> {
        let stage = &self.encoder[k - 1];
        let mut outs = Vec::with_capacity(stage.branches.len());
        for conv in &stage.branches {
            outs.push(ex.conv(x, conv)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { ex.concat(&outs)? };
        let normed = ex.batch_norm(merged, &stage.bn)?;
        // the activation is monotone, so applying it before the pool is
        // identical to applying it after
        let skip = ex.activation(normed, Activation::LeakyRelu(self.config.leaky_slope))?;
        let pooled = ex.pool(skip, PoolMode::Max, 2, 2)?;
        Ok((skip, pooled))
    }

    pub fn bottleneck<E: Exec>(&self, ex: &mut E, c3: E::Var) -> Result<E::Var> {
        let b = &self.bottleneck;
        if b.lite_fusion.is_none() && b.raa.is_none() {
            return Ok(c3);
        }
        let mut att = c3;
        if let Some(lf) = &b.lite_fusion {
            att = lf.forward(ex, att)?;
        }
        if let Some(raa) = &b.raa {
            att = raa.forward(ex, att)?;
        }
        ex.concat(&[att, c3])
    }

    /// Decoder stage `k` (1-based): upsample `below`, fuse with the skip,
    /// refine with a 3×3 convolution.
    pub fn decoder_stage<E: Exec>(&self, ex: &mut E, skip: E::Var, below: E::Var, k: usize) -> Result<E::Var> {
        let stage = &self.decoder[3 - k];
        let (ss, bs) = (ex.shape(skip), ex.shape(below));
        if bs.h * 2 != ss.h || bs.w * 2 != ss.w {
            return Err(LfaError::shape(format!(
                "decoder stage {k}: skip {ss:?} is not twice the extent of {bs:?}"
            )));
        }
        let up = ex.conv(below, &stage.up)?;
        let up = ex.activation(up, Activation::Relu)?;
        let fused = if self.config.use_skips {
            let s = match &stage.skip_raa {
                Some(raa) => raa.forward(ex, skip)?,
                None => skip,
            };
            ex.concat(&[s, up])?
        } else {
            up
        };
        let d = ex.conv(fused, &stage.conv)?;
        ex.activation(d, Activation::Relu)
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, image: E::Var) -> Result<E::Var> {
        let s = ex.shape(image);
        if s.c != self.config.in_channels {
            return Err(LfaError::shape(format!(
                "model expects {} input channels, got {s:?}",
                self.config.in_channels
            )));
        }
        if s.h % SPATIAL_MULTIPLE != 0 || s.w % SPATIAL_MULTIPLE != 0 || s.h == 0 || s.w == 0 {
            return Err(LfaError::shape(format!(
                "input extent {}x{} must be a positive multiple of {SPATIAL_MULTIPLE}",
                s.h, s.w
            )));
        }
        let mut skips = Vec::with_capacity(3);
        let mut x = image;
        for k in 1..=3 {
            let (skip, pooled) = self.encoder_block(ex, x, k)?;
            skips.push(skip);
            x = pooled;
        }
        let mut d = self.bottleneck(ex, x)?;
        for k in (1..=3).rev() {
            d = self.decoder_stage(ex, skips[k - 1], d, k)?;
        }
        let logits = ex.conv(d, &self.head)?;
        ex.activation(logits, Activation::Sigmoid)
    }
}

/// Runs the network on `image` and returns per-pixel probabilities of shape
/// (N, 1, H, W). Train mode needs `rng` for dropout; batch statistics seen
/// in train mode are not folded into the running estimates here.
pub fn model_forward(model: &Model, image: &Tensor, mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let mut tape = Tape::new(&model.params, mode);
    if let Some(r) = rng {
        tape = tape.with_rng(r);
    }
    let x = tape.constant(image.clone());
    let y = model.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}
