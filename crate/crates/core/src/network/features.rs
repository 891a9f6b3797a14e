//! Renders captured activation maps as grayscale montages.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma};

use super::model::{FeatureMaps, FeatureStage};
use crate::error::Result;
use crate::fsutil;
use crate::scalar::Real;

/// Smallest rendered tile side; small maps are enlarged by an integer factor.
const MIN_TILE: usize = 32;
const GAP: usize = 1;

/// Lays out every channel of `stage` on a near-square grid, each channel
/// min-max scaled to 0..=255 on its own. Constant channels render black.
pub fn montage<S: Real>(stage: &FeatureStage<S>) -> GrayImage {
    let (c, h, w) = (stage.shape.c, stage.shape.h, stage.shape.w);
    let cols = (c as f64).sqrt().ceil().max(1.0) as usize;
    let rows = c.div_ceil(cols);
    let scale = MIN_TILE.div_ceil(h.max(w).max(1)).max(1);
    let (th, tw) = (h * scale, w * scale);
    let width = cols * tw + (cols - 1) * GAP;
    let height = rows * th + (rows.saturating_sub(1)) * GAP;
    let mut img = GrayImage::new(width as u32, height as u32);
    for ch in 0..c {
        let plane = &stage.data[ch * h * w..(ch + 1) * h * w];
        let (lo, hi) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.as_f64()), hi.max(v.as_f64()))
        });
        let span = hi - lo;
        let (ox, oy) = ((ch % cols) * (tw + GAP), (ch / cols) * (th + GAP));
        for y in 0..th {
            for x in 0..tw {
                let v = plane[(y / scale) * w + x / scale].as_f64();
                let g = if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 };
                img.put_pixel((ox + x) as u32, (oy + y) as u32, Luma([g]));
            }
        }
    }
    img
}

pub fn stage_file_name<S>(index: usize, stage: &FeatureStage<S>) -> String {
    format!("{:02}_{}_{}.png", index + 1, stage.name, stage.shape)
}

/// Writes one montage per stage into `out_dir`, returning the paths in order.
pub fn write_feature_maps<S: Real>(maps: &FeatureMaps<S>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(maps.stages.len());
    for (i, stage) in maps.stages.iter().enumerate() {
        let path = out_dir.join(stage_file_name(i, stage));
        fsutil::write_dynamic_png(&path, &DynamicImage::ImageLuma8(montage(stage)))?;
        paths.push(path);
    }
    Ok(paths)
}
