//! Label-preserving training augmentation on `[C, H, W]` images in `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::bilinear;
use crate::tensor::NdArray;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Rotation drawn from `±rotation_degrees`.
    pub rotation_degrees: f64,
    /// Translation drawn from `±translate` of the image side, per axis.
    pub translate: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Additive brightness drawn from `±brightness`.
    pub brightness: f64,
    pub contrast_min: f64,
    pub contrast_max: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_degrees: 15.0,
            translate: 0.1,
            scale_min: 0.9,
            scale_max: 1.1,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            brightness: 0.2,
            contrast_min: 0.8,
            contrast_max: 1.25,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A configuration under which `augment` returns its input unchanged.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_degrees: 0.0,
            translate: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            brightness: 0.0,
            contrast_min: 1.0,
            contrast_max: 1.0,
            seed: 0,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Adds `delta` to every value and clamps to `[0, 1]`.
pub fn adjust_brightness(image: &NdArray, delta: f64) -> NdArray {
    let data = image.data().iter().map(|v| (v + delta).clamp(0.0, 1.0)).collect();
    NdArray::from_parts(image.shape().to_vec(), data)
}

/// Scales deviations from the image mean by `factor` and clamps to `[0, 1]`.
pub fn adjust_contrast(image: &NdArray, factor: f64) -> NdArray {
    let mean = image.data().iter().sum::<f64>() / image.len() as f64;
    let data = image
        .data()
        .iter()
        .map(|v| (mean + factor * (v - mean)).clamp(0.0, 1.0))
        .collect();
    NdArray::from_parts(image.shape().to_vec(), data)
}

/// One random draw of every transform, applied in the order affine, flips,
/// brightness, contrast, clamp. The same number of random values is consumed
/// whatever the configuration.
pub fn augment<R: Rng + ?Sized>(image: &NdArray, config: &AugmentConfig, rng: &mut R) -> NdArray {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        _ => panic!("augment expects a [C, H, W] image, got {:?}", image.shape()),
    };
    let angle = uniform(rng, -config.rotation_degrees, config.rotation_degrees).to_radians();
    let tx = uniform(rng, -config.translate, config.translate) * w as f64;
    let ty = uniform(rng, -config.translate, config.translate) * h as f64;
    let scale = uniform(rng, config.scale_min, config.scale_max);
    let hflip = rng.gen::<f64>() < config.hflip_prob;
    let vflip = rng.gen::<f64>() < config.vflip_prob;
    let brightness = uniform(rng, -config.brightness, config.brightness);
    let contrast = uniform(rng, config.contrast_min, config.contrast_max);

    let plane = h * w;
    let mut data = image.data().to_vec();

    if angle != 0.0 || tx != 0.0 || ty != 0.0 || scale != 1.0 {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = angle.sin_cos();
        let src = data.clone();
        for ch in 0..c {
            let p = &src[ch * plane..(ch + 1) * plane];
            for y in 0..h {
                for x in 0..w {
                    // inverse map: rotate back and unscale the offset from the center
                    let dx = x as f64 - cx - tx;
                    let dy = y as f64 - cy - ty;
                    let sx = (cos * dx + sin * dy) / scale + cx;
                    let sy = (-sin * dx + cos * dy) / scale + cy;
                    data[ch * plane + y * w + x] = bilinear(p, w, h, sx, sy);
                }
            }
        }
    }
    if hflip {
        for row in data.chunks_exact_mut(w) {
            row.reverse();
        }
    }
    if vflip {
        for ch in 0..c {
            let p = &mut data[ch * plane..(ch + 1) * plane];
            for y in 0..h / 2 {
                let (top, bottom) = p.split_at_mut((h - 1 - y) * w);
                top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
            }
        }
    }
    if brightness != 0.0 {
        data.iter_mut().for_each(|v| *v += brightness);
    }
    if contrast != 1.0 {
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        data.iter_mut().for_each(|v| *v = mean + contrast * (*v - mean));
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    NdArray::from_parts(vec![c, h, w], data)
}
