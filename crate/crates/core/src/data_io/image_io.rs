use std::io::BufWriter;
use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage, ImageFormat, Luma, Rgb, RgbImage};

use super::write_atomically;
use crate::error::{LfaError, Result};
use crate::tensor::Tensor;

/// Mask pixels with luminance above this are foreground.
pub const MASK_LUMA_THRESHOLD: u8 = 127;

fn open_8bit(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| LfaError::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| LfaError::io(path, e))?;
    let img = reader.decode().map_err(|e| LfaError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => Ok(img),
        other => Err(LfaError::Image {
            path: path.to_path_buf(),
            message: format!("unsupported pixel format {other:?}; expected 8-bit"),
        }),
    }
}

/// Loads an 8-bit image as (1, 3, H, W) RGB in [0, 1].
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let rgb = open_8bit(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor::zeros([1, 3, h, w]);
    let plane = h * w;
    let data = t.data_mut();
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(t)
}

/// Loads a mask as (1, 1, H, W) with values in {0, 1}.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let luma = open_8bit(path)?.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let data = luma
        .pixels()
        .map(|p| if p[0] > MASK_LUMA_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec([1, 1, h, w], data)
}

/// Writes an 8-bit grayscale PNG: 255 where `p >= threshold`, else 0.
pub fn write_mask_png(probabilities: &Tensor, threshold: f32, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = probabilities.shape();
    if s.n != 1 || s.c != 1 {
        return Err(LfaError::shape(format!("mask output expects (1, 1, H, W), got {s:?}")));
    }
    let mut img = GrayImage::new(s.w as u32, s.h as u32);
    for (i, &p) in probabilities.data().iter().enumerate() {
        let v = if p >= threshold { 255 } else { 0 };
        img.put_pixel((i % s.w) as u32, (i / s.w) as u32, Luma([v]));
    }
    write_atomically(path, |file| {
        img.write_to(&mut BufWriter::new(file), ImageFormat::Png)
            .map_err(|e| LfaError::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    })
}

/// Writes a (1, 3, H, W) tensor in [0, 1] as an 8-bit RGB PNG, rounding to
/// the nearest level.
pub fn write_image_png(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(LfaError::shape(format!("image output expects (1, 3, H, W), got {s:?}")));
    }
    let plane = s.plane();
    let level = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let d = image.data();
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let i = y as usize * s.w + x as usize;
        Rgb([level(d[i]), level(d[plane + i]), level(d[2 * plane + i])])
    });
    write_atomically(path, |file| {
        img.write_to(&mut BufWriter::new(file), ImageFormat::Png)
            .map_err(|e| LfaError::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    /// For images.
    Bilinear,
    /// For masks; keeps values binary.
    Nearest,
}

/// Square resize to `target`×`target`; `target` must be a positive
/// multiple of 8.
pub fn resize(t: &Tensor, target: usize, mode: Interpolation) -> Result<Tensor> {
    if target < 8 || !target.is_multiple_of(8) {
        return Err(LfaError::config(format!(
            "resize target {target} must be a positive multiple of 8"
        )));
    }
    resize_to(t, target, target, mode)
}

/// Resamples every plane with half-pixel-centred coordinates, so a resize
/// to the source extent is the identity.
pub fn resize_to(t: &Tensor, out_h: usize, out_w: usize, mode: Interpolation) -> Result<Tensor> {
    let s = t.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(LfaError::shape(format!("cannot resize {s:?} to {out_h}x{out_w}")));
    }
    let sy = s.h as f64 / out_h as f64;
    let sx = s.w as f64 / out_w as f64;
    let mut out = Tensor::zeros([s.n, s.c, out_h, out_w]);
    let plane_out = out_h * out_w;
    let src = t.data();
    for (p, dst) in out.data_mut().chunks_mut(plane_out).enumerate() {
        let plane = &src[p * s.h * s.w..(p + 1) * s.h * s.w];
        for y in 0..out_h {
            for x in 0..out_w {
                let fy = (y as f64 + 0.5) * sy - 0.5;
                let fx = (x as f64 + 0.5) * sx - 0.5;
                dst[y * out_w + x] = match mode {
                    Interpolation::Nearest => {
                        let iy = (((y as f64 + 0.5) * sy) as usize).min(s.h - 1);
                        let ix = (((x as f64 + 0.5) * sx) as usize).min(s.w - 1);
                        plane[iy * s.w + ix]
                    }
                    Interpolation::Bilinear => {
                        let fy = fy.clamp(0.0, (s.h - 1) as f64);
                        let fx = fx.clamp(0.0, (s.w - 1) as f64);
                        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                        let (y1, x1) = ((y0 + 1).min(s.h - 1), (x0 + 1).min(s.w - 1));
                        let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
                        let at = |yy: usize, xx: usize| plane[yy * s.w + xx] as f64;
                        let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                        let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                        (top * (1.0 - wy) + bottom * wy) as f32
                    }
                };
            }
        }
    }
    Ok(out)
}
