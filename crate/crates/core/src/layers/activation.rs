use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    /// Exact Gaussian-CDF GELU, `x · Φ(x)`.
    Gelu,
    Sigmoid,
    /// `max(x, 0)^γ`; negative inputs are clamped and counted.
    Power(f32),
}

#[derive(Clone, Debug)]
pub struct Activated {
    pub output: Tensor,
    /// Inputs clamped to zero by [`Activation::Power`].
    pub clamped: usize,
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Logistic function kept strictly inside (0, 1) in single precision.
fn sigmoid(x: f32) -> f32 {
    const LO: f32 = f32::MIN_POSITIVE;
    const HI: f32 = 1.0 - f32::EPSILON / 2.0;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(LO, HI)
}

pub fn activation(kind: Activation, input: &Tensor) -> Activated {
    let mut clamped = 0;
    let output = match kind {
        Activation::Relu => input.map(|x| x.max(0.0)),
        Activation::LeakyRelu(a) => input.map(|x| if x > 0.0 { x } else { a * x }),
        Activation::Gelu => input.map(|x| {
            let xd = x as f64;
            (xd * std_normal_cdf(xd)) as f32
        }),
        Activation::Sigmoid => input.map(sigmoid),
        Activation::Power(g) => {
            clamped = input.data().iter().filter(|&&x| x < 0.0).count();
            input.map(|x| x.max(0.0).powf(g))
        }
    };
    Activated { output, clamped }
}

/// Gradient with respect to the input given forward input and output.
pub fn activation_backward(kind: Activation, input: &Tensor, output: &Tensor, grad_out: &Tensor) -> Tensor {
    let x = input.data();
    let y = output.data();
    let g = grad_out.data();
    let data: Vec<f32> = match kind {
        Activation::Relu => x.iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect(),
        Activation::LeakyRelu(a) => x
            .iter()
            .zip(g)
            .map(|(&x, &g)| if x > 0.0 { g } else { a * g })
            .collect(),
        Activation::Gelu => x
            .iter()
            .zip(g)
            .map(|(&x, &g)| {
                let xd = x as f64;
                let pdf = FRAC_1_SQRT_2PI * (-0.5 * xd * xd).exp();
                ((std_normal_cdf(xd) + xd * pdf) * g as f64) as f32
            })
            .collect(),
        Activation::Sigmoid => y.iter().zip(g).map(|(&s, &g)| g * s * (1.0 - s)).collect(),
        Activation::Power(p) => x
            .iter()
            .zip(g)
            .map(|(&x, &g)| {
                if x > 0.0 {
                    g * p * x.powf(p - 1.0)
                } else {
                    0.0
                }
            })
            .collect(),
    };
    Tensor::from_vec(input.shape(), data).expect("activation grad shape")
}
