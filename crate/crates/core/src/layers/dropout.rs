use rand::Rng;

use crate::error::{LfaError, Result};
use crate::tensor::Tensor;
use crate::Mode;

#[derive(Clone, Debug)]
pub struct Dropped {
    pub output: Tensor,
    /// Per-element multiplier (0 or 1/(1−rate)); absent when dropout was a
    /// no-op.
    pub mask: Option<Vec<f32>>,
}

/// Inverted dropout: survivors are rescaled during training so inference is
/// the identity.
pub fn dropout(input: &Tensor, rate: f32, rng: &mut impl Rng, mode: Mode) -> Result<Dropped> {
    if !(0.0..1.0).contains(&rate) {
        return Err(LfaError::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(Dropped {
            output: input.clone(),
            mask: None,
        });
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..input.len())
        .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok(Dropped {
        output: Tensor::from_vec(input.shape(), data)?,
        mask: Some(mask),
    })
}

pub fn dropout_backward(mask: Option<&[f32]>, grad_out: &Tensor) -> Tensor {
    match mask {
        None => grad_out.clone(),
        Some(m) => Tensor::from_vec(
            grad_out.shape(),
            grad_out.data().iter().zip(m).map(|(g, m)| g * m).collect(),
        )
        .expect("dropout grad shape"),
    }
}
