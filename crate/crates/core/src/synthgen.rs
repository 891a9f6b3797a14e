//! Synthetic images of laterally lit water samples.
//!
//! A dark background receives one Gaussian light blob per suspended particle.
//! The particle count is Poisson with mean `particle_coefficient ×
//! concentration`, so brighter, denser texture means more solids. Sensor
//! noise is i.i.d. Gaussian and the result is clipped to 8 bits. The scene is
//! rendered in gray and replicated across three channels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{label_from_concentration, ClassLabel, DatasetManifest, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::{fsutil, seed};

/// A single image with its provenance.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub id: String,
    pub sample_id: Option<String>,
    pub frame_index: Option<usize>,
    pub pixels: RgbImage,
    pub concentration_mg_per_l: Option<f64>,
    pub label: Option<ClassLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub concentration_mg_per_l: f64,
    pub image_size: u32,
    /// Expected particle blobs per mg/L.
    pub particle_coefficient: f64,
    pub base_luminance: f64,
    pub scatter_gain: f64,
    pub blob_sigma_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            concentration_mg_per_l: 0.0,
            image_size: 450,
            particle_coefficient: 0.5,
            base_luminance: 0.08,
            scatter_gain: 0.25,
            blob_sigma_range: (2.0, 5.0),
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

fn unit_interval(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(field, format!("{v} is outside [0, 1]")))
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.concentration_mg_per_l;
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::param("concentration_mg_per_l", format!("{c} must be finite and >= 0")));
        }
        if self.image_size < 16 {
            return Err(Error::param("image_size", format!("{} is below the minimum of 16", self.image_size)));
        }
        if !(self.particle_coefficient > 0.0 && self.particle_coefficient.is_finite()) {
            return Err(Error::param("particle_coefficient", "must be finite and > 0"));
        }
        unit_interval("base_luminance", self.base_luminance)?;
        unit_interval("scatter_gain", self.scatter_gain)?;
        unit_interval("noise_sigma", self.noise_sigma)?;
        let (lo, hi) = self.blob_sigma_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::param("blob_sigma_range", format!("({lo}, {hi}) needs 0 < min <= max")));
        }
        Ok(())
    }
}

/// Per-render diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderStats {
    pub blobs: u64,
    pub clipped_fraction: f64,
}

fn add_blob(field: &mut [f32], size: usize, cx: f64, cy: f64, sigma: f64, gain: f64) {
    let radius = (3.0 * sigma).ceil();
    let x0 = (cx - radius).floor().max(0.0) as usize;
    let x1 = ((cx + radius).ceil() as usize).min(size - 1);
    let y0 = (cy - radius).floor().max(0.0) as usize;
    let y1 = ((cy + radius).ceil() as usize).min(size - 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in y0..=y1 {
        let dy = y as f64 + 0.5 - cy;
        let row = &mut field[y * size..(y + 1) * size];
        for (x, px) in row.iter_mut().enumerate().take(x1 + 1).skip(x0) {
            let dx = x as f64 + 0.5 - cx;
            *px += (gain * (-(dx * dx + dy * dy) * inv).exp()) as f32;
        }
    }
}

pub fn render_with_stats(spec: &SceneSpec) -> Result<(RgbImage, RenderStats)> {
    spec.validate()?;
    let size = spec.image_size as usize;
    let mut rng = seed::rng(spec.seed, "render", &[]);
    let mut field = vec![spec.base_luminance as f32; size * size];

    let mean = spec.particle_coefficient * spec.concentration_mg_per_l;
    let blobs = if mean > 0.0 {
        let d = Poisson::new(mean).map_err(|e| Error::param("concentration_mg_per_l", e.to_string()))?;
        d.sample(&mut rng) as u64
    } else {
        0
    };
    let (smin, smax) = spec.blob_sigma_range;
    for _ in 0..blobs {
        let cx = rng.gen::<f64>() * size as f64;
        let cy = rng.gen::<f64>() * size as f64;
        let sigma = if smax > smin { rng.gen_range(smin..=smax) } else { smin };
        add_blob(&mut field, size, cx, cy, sigma, spec.scatter_gain);
    }

    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    let mut clipped = 0usize;
    let mut img = RgbImage::new(spec.image_size, spec.image_size);
    for (px, &v) in img.pixels_mut().zip(&field) {
        let mut v = f64::from(v);
        if let Some(n) = &noise {
            v += n.sample(&mut rng);
        }
        if !(0.0..=1.0).contains(&v) {
            clipped += 1;
        }
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        *px = Rgb([g, g, g]);
    }
    Ok((
        img,
        RenderStats {
            blobs,
            clipped_fraction: clipped as f64 / (size * size) as f64,
        },
    ))
}

/// Renders one image; the record carries the true concentration.
pub fn render_sample_image(spec: &SceneSpec) -> Result<ImageRecord> {
    let (pixels, _) = render_with_stats(spec)?;
    let c = spec.concentration_mg_per_l;
    Ok(ImageRecord {
        id: format!("scene_{}", spec.seed),
        sample_id: None,
        frame_index: None,
        pixels,
        concentration_mg_per_l: Some(c),
        label: label_from_concentration(c).ok(),
    })
}

/// How many images of each class to render, and the scene template they share.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatchPlan {
    pub per_class_counts: BTreeMap<ClassLabel, usize>,
    /// Concentration and seed are overwritten per image.
    pub scene: SceneSpec,
    pub seed: u64,
}

impl SyntheticBatchPlan {
    pub fn uniform(per_class: usize, seed: u64) -> Self {
        Self {
            per_class_counts: ClassLabel::ALL.iter().map(|&c| (c, per_class)).collect(),
            scene: SceneSpec::default(),
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.per_class_counts.values().sum()
    }

    /// Concentration for the `index`-th image of `class`, uniform over the class's sample range.
    pub fn sample_concentration(&self, class: ClassLabel, index: usize) -> f64 {
        let (lo, hi) = class.sample_range();
        let mut rng = seed::rng(self.seed, "concentration", &[class.index() as u64, index as u64]);
        rng.gen_range(lo..=hi)
    }

    pub fn scene_for(&self, class: ClassLabel, index: usize) -> SceneSpec {
        SceneSpec {
            concentration_mg_per_l: self.sample_concentration(class, index),
            seed: seed::derive(self.seed, "scene", &[class.index() as u64, index as u64]),
            ..self.scene.clone()
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Renders the plan into `out_dir/images/` and writes `out_dir/manifest.csv`.
pub fn generate_dataset(plan: &SyntheticBatchPlan, out_dir: &Path) -> Result<DatasetManifest> {
    plan.scene.validate()?;
    let jobs: Vec<(ClassLabel, usize)> = ClassLabel::ALL
        .iter()
        .flat_map(|&c| (0..plan.per_class_counts.get(&c).copied().unwrap_or(0)).map(move |i| (c, i)))
        .collect();
    if jobs.is_empty() {
        log::warn!("synthetic plan has zero images; writing an empty manifest");
    }
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;

    let rows: Vec<ManifestRow> = jobs
        .par_iter()
        .map(|&(class, i)| {
            let scene = plan.scene_for(class, i);
            let (img, _) = render_with_stats(&scene)?;
            let id = format!("{}_{:05}", class.name(), i);
            let rel = PathBuf::from("images").join(format!("{id}.png"));
            fsutil::write_png(&out_dir.join(&rel), &img)?;
            Ok(ManifestRow {
                id,
                path: rel,
                concentration_mg_per_l: scene.concentration_mg_per_l,
                label: class,
                split: Split::Unassigned,
                sample_id: None,
            })
        })
        .collect::<Result<_>>()?;

    let manifest = DatasetManifest::new(rows, out_dir)?;
    manifest.write_csv(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
