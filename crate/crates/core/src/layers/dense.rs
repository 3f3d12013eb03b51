use crate::error::{LfaError, Result};
use crate::tensor::{Shape, Tensor};

/// Pointwise linear map across the channel axis. The weight is stored as
/// `(features_out, features_in, 1, 1)`, the same layout as a 1×1 kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn zeros(features_in: usize, features_out: usize) -> Self {
        DenseParams {
            weight: Tensor::zeros([features_out, features_in, 1, 1]),
            bias: Tensor::zeros([1, features_out, 1, 1]),
        }
    }

    pub fn features_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn features_out(&self) -> usize {
        self.weight.shape().n
    }
}

fn check(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let ws = weight.shape();
    if ws.h != 1 || ws.w != 1 || ws.n == 0 || ws.c == 0 {
        return Err(LfaError::shape(format!("dense weight must be (out, in, 1, 1), got {ws:?}")));
    }
    if input.shape().c != ws.c {
        return Err(LfaError::shape(format!(
            "dense expects {} features, input has {:?}",
            ws.c,
            input.shape()
        )));
    }
    if bias.len() != ws.n {
        return Err(LfaError::shape(format!("dense bias length {} for {} outputs", bias.len(), ws.n)));
    }
    Ok((ws.c, ws.n))
}

pub fn dense(input: &Tensor, p: &DenseParams) -> Result<Tensor> {
    dense_forward(input, &p.weight, &p.bias)
}

pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (fin, fout) = check(input, weight, bias)?;
    let s = input.shape();
    let os = Shape::new(s.n, fout, s.h, s.w);
    let p = s.plane();
    let mut out = Vec::with_capacity(os.numel());
    let mut plane = vec![0.0f32; p];
    for n in 0..s.n {
        for o in 0..fout {
            plane.fill(bias.data()[o]);
            for i in 0..fin {
                let w = weight.data()[o * fin + i];
                for (d, &x) in plane.iter_mut().zip(input.plane(n, i)) {
                    *d += w * x;
                }
            }
            out.extend_from_slice(&plane);
        }
    }
    Tensor::from_vec(os, out)
}

/// Returns `(d input, d weight, d bias)`; the input gradient is skipped when
/// not requested.
pub fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let s = input.shape();
    let fin = weight.shape().c;
    let fout = weight.shape().n;
    let p = s.plane();
    let gx = need_input.then(|| {
        let mut gx = Tensor::zeros(s);
        for n in 0..s.n {
            for i in 0..fin {
                let off = (n * s.c + i) * p;
                let dst = &mut gx.data_mut()[off..off + p];
                for o in 0..fout {
                    let w = weight.data()[o * fin + i];
                    for (d, &g) in dst.iter_mut().zip(grad_out.plane(n, o)) {
                        *d += w * g;
                    }
                }
            }
        }
        gx
    });
    let mut gw = vec![0.0f32; fout * fin];
    let mut gb = vec![0.0f32; fout];
    for o in 0..fout {
        let mut bsum = 0.0f64;
        for n in 0..s.n {
            let g = grad_out.plane(n, o);
            bsum += g.iter().map(|&v| v as f64).sum::<f64>();
            for i in 0..fin {
                let dot: f64 = g
                    .iter()
                    .zip(input.plane(n, i))
                    .map(|(&a, &b)| (a * b) as f64)
                    .sum();
                gw[o * fin + i] += dot as f32;
            }
        }
        gb[o] = bsum as f32;
    }
    (
        gx,
        Tensor::from_vec(weight.shape(), gw).expect("dense weight grad"),
        Tensor::from_vec([1, fout, 1, 1], gb).expect("dense bias grad"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::conv::{conv2d_forward, ConvGeom};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight() {
        let mut p = DenseParams::zeros(3, 3);
        for i in 0..3 {
            p.weight.data_mut()[i * 3 + i] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::randn([2, 3, 4, 4], 1.0, &mut rng);
        assert_eq!(dense(&x, &p).unwrap(), x);
    }

    #[test]
    fn zero_weight_gives_bias() {
        let mut p = DenseParams::zeros(2, 3);
        p.bias = Tensor::from_vec([1, 3, 1, 1], vec![0.5, -1.0, 2.0]).unwrap();
        let y = dense(&Tensor::full([1, 2, 3, 3], 7.0), &p).unwrap();
        for c in 0..3 {
            assert!(y.plane(0, c).iter().all(|&v| v == p.bias.data()[c]));
        }
    }

    #[test]
    fn equals_pointwise_conv_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let x = Tensor::randn([2, 4, 8, 8], 1.0, &mut rng);
            let w = Tensor::randn([6, 4, 1, 1], 1.0, &mut rng);
            let b = Tensor::randn([1, 6, 1, 1], 1.0, &mut rng);
            let d = dense_forward(&x, &w, &b).unwrap();
            let c = conv2d_forward(&x, &w, &b, &ConvGeom::new(4, 6, 1)).unwrap();
            assert_eq!(d, c);
        }
    }

    #[test]
    fn feature_mismatch() {
        let p = DenseParams::zeros(3, 2);
        assert!(dense(&Tensor::zeros([1, 4, 2, 2]), &p).is_err());
    }
}
