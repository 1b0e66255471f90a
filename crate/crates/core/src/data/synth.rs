//! Procedural wound images with known labels.
//!
//! Every image is a lit, noisy skin-toned background with an elliptical
//! wound bed. Each positive label paints one signature:
//!
//! | task     | signature                                   |
//! |----------|---------------------------------------------|
//! | deep     | near-black core in the wound center         |
//! | infected | yellow-green speckles over the wound        |
//! | arterial | pale ring just outside the wound edge       |
//! | venous   | blue-purple tint on the surrounding skin    |
//! | pressure | concentric pink bands across the wound bed  |
//!
//! `strength` in `(0, 1]` blends each signature into the base colors.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use super::loader::derive_seed;
use super::manifest::{DatasetManifest, WoundSample, NUM_TASKS};
use super::DataError;
use crate::model::TASK_NAMES;

pub const GENERATOR_VERSION: &str = "woundnet-synth/1";

/// Positive rates per task, from the clinical dataset's label distribution.
pub const DEFAULT_PREVALENCE: [f64; NUM_TASKS] = [0.647, 0.599, 0.211, 0.024, 0.124];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Ppm,
    Png,
}

impl ImageFormat {
    fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub patients: usize,
    /// Relative weights for 1, 2, 3, ... images per patient.
    pub images_per_patient: Vec<f64>,
    /// Forces the total image count by adding or removing images from
    /// randomly chosen patients.
    pub total_images: Option<usize>,
    pub prevalence: [f64; NUM_TASKS],
    pub width: usize,
    pub height: usize,
    pub strength: f64,
    pub format: ImageFormat,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patients: 200,
            images_per_patient: vec![0.65, 0.24, 0.08, 0.03],
            total_images: None,
            prevalence: DEFAULT_PREVALENCE,
            width: 80,
            height: 72,
            strength: 1.0,
            format: ImageFormat::Ppm,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Synth(m));
        if self.patients == 0 {
            return bad("need at least one patient".into());
        }
        if let Some(p) = self.prevalence.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return bad(format!("prevalence {p} is outside (0, 1)"));
        }
        if self.images_per_patient.is_empty()
            || self.images_per_patient.iter().any(|&w| !(w >= 0.0) || !w.is_finite())
            || self.images_per_patient.iter().sum::<f64>() <= 0.0
        {
            return bad("images_per_patient weights must be non-negative with a positive sum".into());
        }
        if !(self.strength > 0.0 && self.strength <= 1.0) {
            return bad(format!("strength {} is outside (0, 1]", self.strength));
        }
        if self.width < 16 || self.height < 16 {
            return bad("images must be at least 16x16".into());
        }
        if let Some(t) = self.total_images {
            if t < self.patients {
                return bad(format!("{t} images cannot cover {} patients", self.patients));
            }
        }
        Ok(())
    }
}

/// Bookkeeping written next to the generated images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator_version: String,
    pub seed: u64,
    pub patients: usize,
    pub images: usize,
    pub task_names: Vec<String>,
    pub prevalence: [f64; NUM_TASKS],
    pub positive_counts: Vec<usize>,
    pub config: SynthConfig,
}

fn images_per_patient(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dist = WeightedIndex::new(&config.images_per_patient).expect("weights validated");
    let mut counts: Vec<usize> = (0..config.patients).map(|_| dist.sample(rng) + 1).collect();
    if let Some(total) = config.total_images {
        let mut sum: usize = counts.iter().sum();
        while sum < total {
            counts[rng.gen_range(0..config.patients)] += 1;
            sum += 1;
        }
        while sum > total {
            let p = rng.gen_range(0..config.patients);
            if counts[p] > 1 {
                counts[p] -= 1;
                sum -= 1;
            }
        }
    }
    counts
}

/// Samples the manifest (ids and labels) without rendering anything.
pub fn synthetic_manifest(config: &SynthConfig) -> Result<DatasetManifest, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "synth", 0));
    let counts = images_per_patient(config, &mut rng);
    let ext = config.format.extension();
    let mut samples = Vec::with_capacity(counts.iter().sum());
    for (p, &n) in counts.iter().enumerate() {
        let patient_id = format!("P{:05}", p + 1);
        for k in 0..n {
            let mut labels = [0u8; NUM_TASKS];
            for (l, &prev) in labels.iter_mut().zip(&config.prevalence) {
                *l = u8::from(rng.gen::<f64>() < prev);
            }
            let image_id = format!("{patient_id}-{}", k + 1);
            samples.push(WoundSample {
                image_path: format!("images/{image_id}.{ext}"),
                image_id,
                patient_id: patient_id.clone(),
                labels,
            });
        }
    }
    DatasetManifest::new(samples, "")
}

type Rgb = [f64; 3];

fn blend(base: Rgb, target: Rgb, t: f64) -> Rgb {
    [0, 1, 2].map(|c| base[c] + t.clamp(0.0, 1.0) * (target[c] - base[c]))
}

/// Renders one image whose visual signatures encode `labels`.
pub fn render_wound(labels: &[u8; NUM_TASKS], width: usize, height: usize, strength: f64, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let side = w.min(h);

    let tone = rng.gen_range(0.55..0.88);
    let skin: Rgb = [tone, tone * rng.gen_range(0.68..0.80), tone * rng.gen_range(0.52..0.66)];
    let light_dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let (lx, ly) = (light_dir.cos(), light_dir.sin());
    let bed: Rgb = [
        rng.gen_range(0.55..0.72),
        rng.gen_range(0.12..0.24),
        rng.gen_range(0.10..0.20),
    ];
    let cx = w / 2.0 + rng.gen_range(-0.06..0.06) * side;
    let cy = h / 2.0 + rng.gen_range(-0.06..0.06) * side;
    let a = rng.gen_range(0.20..0.28) * side;
    let b = a * rng.gen_range(0.7..1.0);
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let (st, ct) = theta.sin_cos();
    let exposure = rng.gen_range(0.9..1.08);

    let speckles: Vec<(f64, f64)> = if labels[1] == 1 {
        (0..rng.gen_range(18..28))
            .map(|_| {
                let r = rng.gen::<f64>().sqrt() * 1.05;
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let (u, v) = (r * a * phi.cos(), r * b * phi.sin());
                (cx + u * ct - v * st, cy + u * st + v * ct)
            })
            .collect()
    } else {
        Vec::new()
    };
    let speckle_radius = (side * 0.025).max(1.0);

    let s = strength;
    let mut img = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (dx, dy) = (px - cx, py - cy);
            let u = dx * ct + dy * st;
            let v = -dx * st + dy * ct;
            let r = ((u / a).powi(2) + (v / b).powi(2)).sqrt();

            let shade = 1.0 + 0.12 * (lx * (px / w - 0.5) + ly * (py / h - 0.5)) * 2.0;
            let mut c = skin.map(|v| v * shade);
            if labels[3] == 1 && r < 2.4 {
                let fall = if r < 1.6 { 1.0 } else { (2.4 - r) / 0.8 };
                c = blend(c, [0.40, 0.30, 0.64], 0.75 * s * fall);
            }
            if labels[2] == 1 && (1.0..1.32).contains(&r) {
                c = blend(c, [0.97, 0.94, 0.88], 0.9 * s);
            }
            if r < 1.0 {
                c = bed;
                if labels[4] == 1 && (r * 6.0).floor() as usize % 2 == 1 {
                    c = blend(c, [0.93, 0.66, 0.66], 0.85 * s);
                }
                if labels[0] == 1 && r < 0.45 {
                    c = blend(c, [0.07, 0.03, 0.03], 0.95 * s);
                }
            }
            if speckles
                .iter()
                .any(|&(sx, sy)| (px - sx).powi(2) + (py - sy).powi(2) <= speckle_radius * speckle_radius)
            {
                c = blend(c, [0.78, 0.86, 0.18], 0.95 * s);
            }
            let noise: f64 = rng.gen_range(-0.03..0.03);
            let rgb = c.map(|v| ((v * exposure + noise).clamp(0.0, 1.0) * 255.0).round() as u8);
            img.put(x, y, rgb);
        }
    }
    img
}

/// Writes `images/`, `manifest.csv` and `provenance.json` under `out_dir`.
/// The same config always produces byte-identical files.
pub fn generate_synthetic_dataset(
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<(DatasetManifest, Provenance), DataError> {
    let mut manifest = synthetic_manifest(config)?;
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| DataError::io(&images, e))?;
    for sample in &manifest.samples {
        let seed = derive_seed(config.seed, &sample.image_id, 1);
        let img = render_wound(&sample.labels, config.width, config.height, config.strength, seed);
        img.save(out_dir.join(&sample.image_path))?;
    }
    manifest.root = out_dir.to_path_buf();
    manifest.save(out_dir.join("manifest.csv"), false)?;
    let provenance = Provenance {
        generator_version: GENERATOR_VERSION.to_string(),
        seed: config.seed,
        patients: config.patients,
        images: manifest.len(),
        task_names: TASK_NAMES.iter().map(|s| s.to_string()).collect(),
        prevalence: config.prevalence,
        positive_counts: manifest.positive_counts(),
        config: config.clone(),
    };
    let path = out_dir.join("provenance.json");
    let json = serde_json::to_string_pretty(&provenance).expect("provenance serializes");
    std::fs::write(&path, json).map_err(|e| DataError::io(&path, e))?;
    Ok((manifest, provenance))
}
