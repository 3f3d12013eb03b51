use serde::{Deserialize, Serialize};

use crate::error::{LfaError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescales the gradient when its global L2 norm exceeds this value.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0) || !unit(self.beta1) || !unit(self.beta2) || !(self.epsilon > 0.0) {
            return Err(LfaError::config(format!("invalid optimizer settings {self:?}")));
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return Err(LfaError::config("max_grad_norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    /// First moments, one per parameter tensor in store order.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Tensor> = store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Ok(AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }
}

/// Bias-corrected Adam update. Gradients must be finite; otherwise the
/// step is rejected and neither the parameters nor the state change.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(LfaError::shape(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    let mut sq = 0.0f64;
    for (id, g) in store.ids().zip(grads) {
        if g.shape() != store.get(id).shape() {
            return Err(LfaError::shape(format!(
                "gradient {:?} for parameter `{}` {:?}",
                g.shape(),
                store.name(id),
                store.get(id).shape()
            )));
        }
        if !g.is_finite() {
            return Err(LfaError::NonFiniteGradient(store.name(id).to_string()));
        }
        sq += g.data().iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>();
    }
    let cfg = state.config;
    let clip = match cfg.max_grad_norm {
        Some(max) if sq.sqrt() > max => max / sq.sqrt(),
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((id, g), (m, v)) in store.ids().collect::<Vec<_>>().into_iter().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let p = store.get_mut(id).data_mut();
        for (((x, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let gi = gi as f64 * clip;
            let mn = cfg.beta1 * *mi as f64 + (1.0 - cfg.beta1) * gi;
            let vn = cfg.beta2 * *vi as f64 + (1.0 - cfg.beta2) * gi * gi;
            *mi = mn as f32;
            *vi = vn as f32;
            let update = cfg.learning_rate * (mn / c1) / ((vn / c2).sqrt() + cfg.epsilon);
            *x = (*x as f64 - update) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::full([1, 1, 1, 1], x));
        s
    }

    #[test]
    fn quadratic_two_step_trace() {
        let mut store = scalar_store(1.0);
        let mut st = AdamState::new(&store, AdamConfig::default()).unwrap();
        let expect = [0.998_000_000_02, 0.996_000_105_409_045_6];
        for e in expect {
            let x = store.params()[0].value.data()[0];
            adam_step(&mut store, &[Tensor::full([1, 1, 1, 1], x)], &mut st).unwrap();
            let got = store.params()[0].value.data()[0] as f64;
            assert!((got - e).abs() < 1e-7, "{got} vs {e}");
        }
        assert_eq!(st.step, 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros([1, 3, 1, 1]));
        let mut st = AdamState::new(&store, AdamConfig::default()).unwrap();
        let g = Tensor::from_vec([1, 3, 1, 1], vec![3.0, -0.5, 40.0]).unwrap();
        adam_step(&mut store, &[g], &mut st).unwrap();
        for (&x, s) in store.params()[0].value.data().iter().zip([-1.0f32, 1.0, -1.0]) {
            assert!((x - 0.002 * s).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = scalar_store(0.3);
        let before = store.clone();
        let mut st = AdamState::new(&store, AdamConfig::default()).unwrap();
        for _ in 0..5 {
            adam_step(&mut store, &[Tensor::zeros([1, 1, 1, 1])], &mut st).unwrap();
        }
        assert_eq!(store, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn non_finite_gradient_rejected_without_change() {
        let mut store = scalar_store(2.0);
        let mut st = AdamState::new(&store, AdamConfig::default()).unwrap();
        let err = adam_step(&mut store, &[Tensor::full([1, 1, 1, 1], f32::NAN)], &mut st).unwrap_err();
        assert!(matches!(err, LfaError::NonFiniteGradient(ref n) if n == "x"));
        assert_eq!(st.step, 0);
        assert_eq!(store.params()[0].value.data()[0], 2.0);
    }

    #[test]
    fn clipping_bounds_the_moment() {
        let mut store = scalar_store(0.0);
        let cfg = AdamConfig {
            max_grad_norm: Some(1.0),
            ..Default::default()
        };
        let mut st = AdamState::new(&store, cfg).unwrap();
        adam_step(&mut store, &[Tensor::full([1, 1, 1, 1], 100.0)], &mut st).unwrap();
        assert!((st.m[0].data()[0] - 0.1).abs() < 1e-7);
    }
}
