use rand::Rng;

use super::manifest::Sample;
use crate::tensor::Tensor;

pub const MAX_ROTATION_DEGREES: f64 = 20.0;
pub const CONTRAST_RANGE: (f64, f64) = (0.8, 1.25);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub angle_degrees: f64,
    pub contrast: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        angle_degrees: 0.0,
        contrast: 1.0,
    };

    pub fn sample(rng: &mut impl Rng) -> Self {
        AugmentParams {
            angle_degrees: rng.gen_range(-MAX_ROTATION_DEGREES..=MAX_ROTATION_DEGREES),
            contrast: rng.gen_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1),
        }
    }

    /// Rotates image and mask about the centre (bilinear and nearest
    /// sampling, zero outside the source), then applies
    /// `clamp(0.5 + s·(x − 0.5), 0, 1)` to the image only.
    pub fn apply(&self, sample: &Sample) -> Sample {
        let image = rotate(&sample.image, self.angle_degrees, false);
        let c = self.contrast;
        let image = image.map(|x| (0.5 + c * (x as f64 - 0.5)).clamp(0.0, 1.0) as f32);
        Sample {
            name: sample.name.clone(),
            image,
            mask: rotate(&sample.mask, self.angle_degrees, true),
        }
    }
}

/// Random rotation within ±20° and contrast scale within [0.8, 1.25].
pub fn augment(sample: &Sample, rng: &mut impl Rng) -> Sample {
    AugmentParams::sample(rng).apply(sample)
}

fn rotate(t: &Tensor, degrees: f64, nearest: bool) -> Tensor {
    if degrees == 0.0 {
        return t.clone();
    }
    let s = t.shape();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (s.h as f64 - 1.0) / 2.0;
    let cx = (s.w as f64 - 1.0) / 2.0;
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    let src = t.data();
    for (p, dst) in out.data_mut().chunks_mut(plane).enumerate() {
        let sp = &src[p * plane..(p + 1) * plane];
        let at = |y: i64, x: i64| -> f64 {
            if y < 0 || x < 0 || y >= s.h as i64 || x >= s.w as i64 {
                0.0
            } else {
                sp[y as usize * s.w + x as usize] as f64
            }
        };
        for y in 0..s.h {
            for x in 0..s.w {
                // inverse map: rotate the output coordinate back by −θ
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let fx = cos * dx + sin * dy + cx;
                let fy = -sin * dx + cos * dy + cy;
                dst[y * s.w + x] = if nearest {
                    at(fy.round() as i64, fx.round() as i64) as f32
                } else {
                    let (y0, x0) = (fy.floor(), fx.floor());
                    let (wy, wx) = (fy - y0, fx - x0);
                    let (y0, x0) = (y0 as i64, x0 as i64);
                    let top = at(y0, x0) * (1.0 - wx) + at(y0, x0 + 1) * wx;
                    let bottom = at(y0 + 1, x0) * (1.0 - wx) + at(y0 + 1, x0 + 1) * wx;
                    (top * (1.0 - wy) + bottom * wy) as f32
                };
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64, h: usize, w: usize) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sample {
            name: "s".into(),
            image: Tensor::uniform([1, 3, h, w], 0.0, 1.0, &mut rng),
            mask: Tensor::uniform([1, 1, h, w], 0.0, 1.0, &mut rng).map(|v| if v > 0.7 { 1.0 } else { 0.0 }),
        }
    }

    #[test]
    fn identity_parameters() {
        let s = sample(1, 8, 8);
        let out = AugmentParams::IDENTITY.apply(&s);
        assert_eq!(out.image, s.image);
        assert_eq!(out.mask, s.mask);
    }

    #[test]
    fn mid_gray_is_contrast_fixed_point() {
        let s = Sample {
            name: "g".into(),
            image: Tensor::full([1, 3, 4, 4], 0.5),
            mask: Tensor::zeros([1, 1, 4, 4]),
        };
        let out = AugmentParams {
            angle_degrees: 0.0,
            contrast: 1.25,
        }
        .apply(&s);
        assert!(out.image.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn quarter_turn_of_centre_pixel_stays() {
        let mut m = Tensor::zeros([1, 1, 5, 5]);
        m.set(0, 0, 2, 2, 1.0);
        let r = rotate(&m, 17.0, true);
        assert_eq!(r.at(0, 0, 2, 2), 1.0);
    }

    proptest! {
        #[test]
        fn shapes_kept_and_masks_binary(seed in 0u64..1000) {
            let s = sample(seed, 12, 16);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = AugmentParams::sample(&mut rng);
            prop_assert!(p.angle_degrees.abs() <= 20.0);
            prop_assert!((0.8..=1.25).contains(&p.contrast));
            let out = p.apply(&s);
            prop_assert_eq!(out.image.shape(), s.image.shape());
            prop_assert_eq!(out.mask.shape(), s.mask.shape());
            prop_assert!(out.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert!(out.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
