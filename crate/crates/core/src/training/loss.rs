use serde::{Deserialize, Serialize};

use crate::error::{LfaError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiceLossConfig {
    /// (vessel, background); must sum to one.
    pub class_weights: [f64; 2],
    pub smoothing: f64,
}

impl Default for DiceLossConfig {
    fn default() -> Self {
        DiceLossConfig {
            class_weights: [0.7, 0.3],
            smoothing: 1e-6,
        }
    }
}

impl DiceLossConfig {
    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.class_weights;
        if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-9 {
            return Err(LfaError::config(format!(
                "class weights {:?} must be non-negative and sum to 1",
                self.class_weights
            )));
        }
        if !(self.smoothing > 0.0) {
            return Err(LfaError::config(format!("smoothing {} must be positive", self.smoothing)));
        }
        Ok(())
    }
}

/// Two-class weighted dice loss over the whole batch: the vessel class uses
/// `(S, G)` and the background class `(1 − S, 1 − G)`, with
/// `loss = 1 − Σ_k w_k · 2ΣS_kG_k / (ΣS_k² + ΣG_k² + ξ)`.
///
/// Sums run in double precision. Returns the loss and its gradient with
/// respect to `S`.
pub fn weighted_dice_loss(s: &Tensor, g: &Tensor, cfg: &DiceLossConfig) -> Result<(f64, Tensor)> {
    cfg.validate()?;
    if s.shape() != g.shape() {
        return Err(LfaError::shape(format!(
            "prediction {:?} and target {:?} differ",
            s.shape(),
            g.shape()
        )));
    }
    if let Some(bad) = s.data().iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(LfaError::Domain(format!("probability {bad} outside (0, 1)")));
    }
    if let Some(bad) = g.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(LfaError::Domain(format!("target value {bad} is not 0 or 1")));
    }

    let (mut i1, mut d1, mut i2, mut d2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&p, &t) in s.data().iter().zip(g.data()) {
        let (p, t) = (p as f64, t as f64);
        let (q, u) = (1.0 - p, 1.0 - t);
        i1 += p * t;
        d1 += p * p + t * t;
        i2 += q * u;
        d2 += q * q + u * u;
    }
    let xi = cfg.smoothing;
    let [w1, w2] = cfg.class_weights;
    d1 += xi;
    d2 += xi;
    let loss = 1.0 - w1 * 2.0 * i1 / d1 - w2 * 2.0 * i2 / d2;

    // d(2I/D)/dp = 2(t·D − 2p·I)/D²; the background term enters through q = 1 − p
    let grad = s
        .data()
        .iter()
        .zip(g.data())
        .map(|(&p, &t)| {
            let (p, t) = (p as f64, t as f64);
            let (q, u) = (1.0 - p, 1.0 - t);
            let r1 = 2.0 * (t * d1 - 2.0 * p * i1) / (d1 * d1);
            let r2 = 2.0 * (u * d2 - 2.0 * q * i2) / (d2 * d2);
            (-w1 * r1 + w2 * r2) as f32
        })
        .collect();
    Ok((loss, Tensor::from_vec(s.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_probability_example() {
        let s = Tensor::full([1, 1, 2, 2], 0.5);
        let g = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let cfg = DiceLossConfig {
            class_weights: [0.5, 0.5],
            smoothing: 1e-6,
        };
        let (loss, _) = weighted_dice_loss(&s, &g, &cfg).unwrap();
        assert!((loss - 0.333_333_555_555_481_5).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn perfect_overlap_is_near_zero() {
        let t = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let g = Tensor::from_vec([1, 1, 2, 3], t.to_vec()).unwrap();
        let s = g.map(|v| if v > 0.5 { 1.0 - 1e-6 } else { 1e-6 });
        let (loss, _) = weighted_dice_loss(&s, &g, &DiceLossConfig::default()).unwrap();
        assert!(loss < 1e-3, "{loss}");
    }

    #[test]
    fn empty_foreground_costs_vessel_weight() {
        let g = Tensor::zeros([1, 1, 4, 4]);
        let s = Tensor::full([1, 1, 4, 4], 1e-6);
        let (loss, _) = weighted_dice_loss(&s, &g, &DiceLossConfig::default()).unwrap();
        assert!((loss - 0.7).abs() < 1e-4, "{loss}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = DiceLossConfig::default();
        let g = Tensor::zeros([1, 1, 2, 2]);
        assert!(matches!(
            weighted_dice_loss(&Tensor::full([1, 1, 2, 2], 1.0), &g, &cfg),
            Err(LfaError::Domain(_))
        ));
        assert!(weighted_dice_loss(&Tensor::full([1, 1, 2, 3], 0.5), &g, &cfg).is_err());
        let bad = DiceLossConfig {
            class_weights: [0.5, 0.6],
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gradient_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Tensor::uniform([1, 1, 3, 3], 0.05, 0.95, &mut rng);
        let g = Tensor::uniform([1, 1, 3, 3], 0.0, 1.0, &mut rng).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let cfg = DiceLossConfig::default();
        let (_, grad) = weighted_dice_loss(&s, &g, &cfg).unwrap();
        for i in 0..s.len() {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp.data_mut()[i] += 1e-3;
            sm.data_mut()[i] -= 1e-3;
            let h = sp.data()[i] as f64 - sm.data()[i] as f64;
            let num = (weighted_dice_loss(&sp, &g, &cfg).unwrap().0 - weighted_dice_loss(&sm, &g, &cfg).unwrap().0) / h;
            assert!((num - grad.data()[i] as f64).abs() < 1e-5, "{num} vs {}", grad.data()[i]);
        }
    }

    proptest! {
        #[test]
        fn bounded_and_swap_symmetric(seed in 0u64..500, w in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Tensor::uniform([1, 1, 4, 4], 0.01, 0.99, &mut rng);
            let g = Tensor::uniform([1, 1, 4, 4], 0.0, 1.0, &mut rng).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
            let cfg = DiceLossConfig { class_weights: [w, 1.0 - w], smoothing: 1e-6 };
            let (loss, _) = weighted_dice_loss(&s, &g, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&loss));
            let swapped = DiceLossConfig { class_weights: [1.0 - w, w], smoothing: 1e-6 };
            let (other, _) = weighted_dice_loss(&s.map(|p| 1.0 - p), &g.map(|t| 1.0 - t), &swapped).unwrap();
            prop_assert!((loss - other).abs() < 1e-6);
        }
    }
}
