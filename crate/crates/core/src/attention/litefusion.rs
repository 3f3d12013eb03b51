use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LfaError, Result};
use crate::exec::Exec;
use crate::layers::{Activation, ConvGeom, ConvLayer, DenseLayer, LayerNormLayer, PoolMode};
use crate::params::ParamStore;
use crate::tensor::Elementwise;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiteFusionSettings {
    /// Scale on the max-minus-mean modulation signal.
    pub alpha: f32,
    /// Focal exponent.
    pub gamma: f32,
    pub drop_rate: f32,
    /// Channel-mixer hidden width as a multiple of the block width.
    pub hidden_ratio: usize,
}

impl Default for LiteFusionSettings {
    fn default() -> Self {
        LiteFusionSettings {
            alpha: 0.25,
            gamma: 2.0,
            drop_rate: 0.5,
            hidden_ratio: 2,
        }
    }
}

impl LiteFusionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(LfaError::config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.gamma >= 1.0) {
            return Err(LfaError::config(format!("gamma {} below 1", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(LfaError::config(format!("drop rate {} outside [0, 1)", self.drop_rate)));
        }
        if self.hidden_ratio == 0 {
            return Err(LfaError::config("hidden ratio must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiteFusionBlock {
    pub name: String,
    pub channels: usize,
    pub settings: LiteFusionSettings,
    pub entry_pw: ConvLayer,
    pub entry_ln: LayerNormLayer,
    pub entry_conv3: ConvLayer,
    pub ctx_conv3: ConvLayer,
    pub ctx_pw: ConvLayer,
    pub att_pw: ConvLayer,
    pub spatial_conv3: ConvLayer,
    pub mod_pw: ConvLayer,
    pub proj_a: ConvLayer,
    pub proj_b: ConvLayer,
    pub tok_ln: LayerNormLayer,
    /// Depthwise 1×1, i.e. a learned per-channel scale and bias.
    pub tok_dwc: ConvLayer,
    pub chan_ln: LayerNormLayer,
    pub chan_dense1: DenseLayer,
    pub chan_dense2: DenseLayer,
}

/// Intermediate values of the focal modulation step.
#[derive(Clone, Copy, Debug)]
pub struct Focal<V> {
    /// Per-channel modulation gate `m′`, shape (N, C, 1, 1).
    pub gate: V,
    /// `max(L₄ ⊗ m′, 0)^γ`.
    pub modulated: V,
    /// `modulated ⊗ L₄`.
    pub output: V,
}

/// Selected intermediates of one block pass, for inspection and tests.
#[derive(Clone, Copy, Debug)]
pub struct LiteFusionTrace<V> {
    /// Context attention weights, shape (N, C, 1, 1).
    pub context_gate: V,
    pub focal: Focal<V>,
    pub output: V,
}

/// Focal modulation of `l4`: a per-channel gate from the gap between the
/// global max and mean, a focal power, and re-weighting of `l4`.
pub fn focal_modulation<E: Exec>(
    ex: &mut E,
    l4: E::Var,
    mod_pw: &ConvLayer,
    alpha: f32,
    gamma: f32,
) -> Result<Focal<E::Var>> {
    let peak = ex.global_pool(l4, PoolMode::Max)?;
    let mean = ex.global_pool(l4, PoolMode::Avg)?;
    let m = ex.elementwise(Elementwise::Sub, peak, mean)?;
    let m = ex.scale(m, alpha)?;
    let gate = ex.conv(m, mod_pw)?;
    let gate = ex.activation(gate, Activation::Sigmoid)?;
    let weighted = ex.elementwise(Elementwise::Mul, l4, gate)?;
    let modulated = ex.activation(weighted, Activation::Power(gamma))?;
    let output = ex.elementwise(Elementwise::Mul, modulated, l4)?;
    Ok(Focal {
        gate,
        modulated,
        output,
    })
}

impl LiteFusionBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        settings: LiteFusionSettings,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        settings.validate()?;
        let c = channels;
        let hidden = c * settings.hidden_ratio;
        let pw = |store: &mut ParamStore, n: &str, rng: &mut _| store.conv(&format!("{name}.{n}"), ConvGeom::new(c, c, 1), rng);
        let c3 = |store: &mut ParamStore, n: &str, rng: &mut _| store.conv(&format!("{name}.{n}"), ConvGeom::new(c, c, 3), rng);

        let entry_pw = pw(store, "entry_pw", rng)?;
        let entry_ln = store.layer_norm(&format!("{name}.entry_ln"), c);
        let entry_conv3 = c3(store, "entry_conv3", rng)?;
        let ctx_conv3 = c3(store, "ctx_conv3", rng)?;
        let ctx_pw = pw(store, "ctx_pw", rng)?;
        let att_pw = pw(store, "att_pw", rng)?;
        let spatial_conv3 = c3(store, "spatial_conv3", rng)?;
        let mod_pw = pw(store, "mod_pw", rng)?;
        let proj_a = pw(store, "proj_a", rng)?;
        let proj_b = pw(store, "proj_b", rng)?;
        let tok_ln = store.layer_norm(&format!("{name}.tok_ln"), c);
        let tok_dwc = store.conv(&format!("{name}.tok_dwc"), ConvGeom::new(c, c, 1).with_groups(c), rng)?;
        let chan_ln = store.layer_norm(&format!("{name}.chan_ln"), c);
        let chan_dense1 = store.dense(&format!("{name}.chan_dense1"), c, hidden, rng);
        let chan_dense2 = store.dense(&format!("{name}.chan_dense2"), hidden, c, rng);
        Ok(LiteFusionBlock {
            name: name.to_string(),
            channels,
            settings,
            entry_pw,
            entry_ln,
            entry_conv3,
            ctx_conv3,
            ctx_pw,
            att_pw,
            spatial_conv3,
            mod_pw,
            proj_a,
            proj_b,
            tok_ln,
            tok_dwc,
            chan_ln,
            chan_dense1,
            chan_dense2,
        })
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, input: E::Var) -> Result<E::Var> {
        Ok(self.forward_traced(ex, input)?.output)
    }

    pub fn forward_traced<E: Exec>(&self, ex: &mut E, input: E::Var) -> Result<LiteFusionTrace<E::Var>> {
        let s = ex.shape(input);
        if s.c != self.channels {
            return Err(LfaError::shape(format!(
                "{}: expected {} channels, got {s:?}",
                self.name, self.channels
            )));
        }
        let st = self.settings;

        // entry refinement
        let l1 = ex.conv(input, &self.entry_pw)?;
        let l1 = ex.layer_norm(l1, &self.entry_ln)?;
        let l1 = ex.conv(l1, &self.entry_conv3)?;

        // context attention weights
        let ctx = ex.conv(l1, &self.ctx_conv3)?;
        let ctx = ex.activation(ctx, Activation::Relu)?;
        let ctx = ex.conv(ctx, &self.ctx_pw)?;
        let ctx = ex.activation(ctx, Activation::Relu)?;
        let ctx = ex.global_pool(ctx, PoolMode::Avg)?;
        let ctx = ex.conv(ctx, &self.att_pw)?;
        let l2 = ex.activation(ctx, Activation::Sigmoid)?;

        let l3 = ex.conv(l1, &self.spatial_conv3)?;
        let l4 = ex.elementwise(Elementwise::Mul, l3, l2)?;

        let focal = focal_modulation(ex, l4, &self.mod_pw, st.alpha, st.gamma)?;

        // residual projection of both modulated maps
        let pa = ex.conv(focal.output, &self.proj_a)?;
        let pb = ex.conv(focal.modulated, &self.proj_b)?;
        let l6 = ex.elementwise(Elementwise::Add, pa, pb)?;

        // token mixer
        let tok = ex.layer_norm(l6, &self.tok_ln)?;
        let tok = ex.conv(tok, &self.tok_dwc)?;
        let tok = ex.activation(tok, Activation::Gelu)?;
        let tok = ex.dropout(tok, st.drop_rate)?;
        let tok = ex.elementwise(Elementwise::Add, tok, l6)?;

        // channel mixer
        let ch = ex.layer_norm(tok, &self.chan_ln)?;
        let ch = ex.dense(ch, &self.chan_dense1)?;
        let ch = ex.activation(ch, Activation::Relu)?;
        let ch = ex.dropout(ch, st.drop_rate)?;
        let ch = ex.dense(ch, &self.chan_dense2)?;
        let ch = ex.dropout(ch, st.drop_rate)?;
        let output = ex.elementwise(Elementwise::Add, ch, tok)?;

        Ok(LiteFusionTrace {
            context_gate: l2,
            focal,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::{Shape, Tensor};
    use crate::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(c: usize) -> (ParamStore, LiteFusionBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = LiteFusionBlock::new(&mut store, "lf", c, LiteFusionSettings::default(), &mut rng).unwrap();
        (store, b)
    }

    #[test]
    fn preserves_shape_in_both_modes() {
        let (store, b) = block(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::randn([2, 6, 32, 32], 1.0, &mut rng);
        for mode in [Mode::Train, Mode::Infer] {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(1);
            let mut tape = Tape::new(&store, mode).with_rng(&mut drop_rng);
            let v = tape.constant(x.clone());
            let y = b.forward(&mut tape, v).unwrap();
            assert_eq!(tape.value(y).shape(), Shape::new(2, 6, 32, 32));
            assert!(tape.value(y).is_finite());
        }
    }

    #[test]
    fn parameter_count() {
        let (store, _) = block(8);
        let c = 8;
        // eight c×c 1×1 convs with bias, three 3×3 convs, depthwise, three norms, mixer
        let expect = 6 * (c * c + c) + 3 * (9 * c * c + c) + 2 * c + 3 * 2 * c + (2 * c * c + 2 * c) + (2 * c * c + c);
        assert_eq!(store.element_count(), expect);
    }

    #[test]
    fn infer_is_deterministic() {
        let (store, b) = block(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn([1, 4, 8, 8], 1.0, &mut rng);
        let run = || {
            let mut tape = Tape::new(&store, Mode::Infer);
            let v = tape.constant(x.clone());
            let y = b.forward(&mut tape, v).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gates_lie_in_open_unit_interval() {
        let (store, b) = block(4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new(&store, Mode::Infer);
        let v = tape.constant(Tensor::randn([2, 4, 8, 8], 2.0, &mut rng));
        let t = b.forward_traced(&mut tape, v).unwrap();
        for g in [t.context_gate, t.focal.gate] {
            assert_eq!(tape.value(g).shape(), Shape::new(2, 4, 1, 1));
            assert!(tape.value(g).data().iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn constant_map_gives_half_gate() {
        let (store, b) = block(3);
        let mut tape = Tape::new(&store, Mode::Infer);
        let c = 1.5f32;
        let v = tape.constant(Tensor::full([1, 3, 5, 5], c));
        let f = focal_modulation(&mut tape, v, &b.mod_pw, 0.25, 2.0).unwrap();
        assert!(tape.value(f.gate).data().iter().all(|&g| g == 0.5));
        // (0.5c)² · c
        let expect = 0.25 * c * c * c;
        assert!(tape.value(f.output).data().iter().all(|&x| (x - expect).abs() < 1e-6));
    }

    #[test]
    fn zero_map_is_fixed_point() {
        let (store, b) = block(2);
        let mut tape = Tape::new(&store, Mode::Infer);
        let v = tape.constant(Tensor::zeros([1, 2, 4, 4]));
        let f = focal_modulation(&mut tape, v, &b.mod_pw, 0.25, 2.0).unwrap();
        assert!(tape.value(f.modulated).data().iter().all(|&x| x == 0.0));
        assert!(tape.value(f.output).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn settings_validation() {
        let bad = [
            LiteFusionSettings { alpha: 0.0, ..Default::default() },
            LiteFusionSettings { gamma: 0.5, ..Default::default() },
            LiteFusionSettings { drop_rate: 1.0, ..Default::default() },
        ];
        for s in bad {
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn channel_mismatch() {
        let (store, b) = block(4);
        let mut tape = Tape::new(&store, Mode::Infer);
        let v = tape.constant(Tensor::zeros([1, 3, 4, 4]));
        assert!(b.forward(&mut tape, v).is_err());
    }
}
