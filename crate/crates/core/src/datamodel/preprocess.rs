use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// How an 8-bit image becomes a channels-first network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSpec {
    pub resize_side: usize,
    pub channel_means: [f64; 3],
    pub channel_stds: [f64; 3],
    /// Divide 8-bit values by 255 before standardization.
    pub scale_to_unit: bool,
}

impl Default for PreprocessSpec {
    /// ImageNet statistics shipped with the pretrained backbone weights.
    fn default() -> Self {
        Self {
            resize_side: 224,
            channel_means: [0.485, 0.456, 0.406],
            channel_stds: [0.229, 0.224, 0.225],
            scale_to_unit: true,
        }
    }
}

impl PreprocessSpec {
    pub fn with_side(side: usize) -> Self {
        Self {
            resize_side: side,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resize_side == 0 {
            return Err(Error::param("resize_side", "must be positive"));
        }
        if self.channel_stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::param("channel_stds", "must be finite and strictly positive"));
        }
        if self.channel_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::param("channel_means", "must be finite"));
        }
        Ok(())
    }

    pub fn output_len(&self) -> usize {
        3 * self.resize_side * self.resize_side
    }
}

/// Resampling weights for one output coordinate.
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

/// Triangle-filter weights with the filter support widened by the
/// downscale factor, so downsampling averages instead of aliasing.
/// Upscaling and identity reduce to plain bilinear interpolation.
fn taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(in_len);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|i| (1.0 - ((i as f64 + 0.5 - center) / support).abs()).max(0.0))
                .collect();
            let sum: f64 = weights.iter().sum();
            if sum > 0.0 {
                weights.iter_mut().for_each(|w| *w /= sum);
            } else {
                // degenerate: fall back to nearest
                let nearest = (center.floor() as usize).min(in_len - 1);
                weights = (lo..hi).map(|i| if i == nearest { 1.0 } else { 0.0 }).collect();
            }
            Taps { start: lo, weights }
        })
        .collect()
}

/// Bilinear resize of a planar `channels×h×w` buffer to `channels×side×side`.
pub fn resize_bilinear(src: &[f64], channels: usize, h: usize, w: usize, side: usize) -> Vec<f64> {
    assert_eq!(src.len(), channels * h * w);
    let xt = taps(w, side);
    let yt = taps(h, side);
    let mut tmp = vec![0.0; channels * h * side];
    for c in 0..channels {
        for y in 0..h {
            let row = &src[(c * h + y) * w..(c * h + y + 1) * w];
            let out = &mut tmp[(c * h + y) * side..(c * h + y + 1) * side];
            for (o, t) in out.iter_mut().zip(&xt) {
                *o = t.weights.iter().enumerate().map(|(k, wt)| wt * row[t.start + k]).sum();
            }
        }
    }
    let mut dst = vec![0.0; channels * side * side];
    for c in 0..channels {
        for (oy, t) in yt.iter().enumerate() {
            let out = &mut dst[(c * side + oy) * side..(c * side + oy + 1) * side];
            for (k, wt) in t.weights.iter().enumerate() {
                let row = &tmp[(c * h + t.start + k) * side..(c * h + t.start + k + 1) * side];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += wt * v;
                }
            }
        }
    }
    dst
}

/// Planar `3×side×side` values after scaling and resizing, before standardization.
fn resized_planar(img: &RgbImage, side: usize, scale_to_unit: bool) -> Result<Vec<f64>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::param("image", "empty image"));
    }
    let scale = if scale_to_unit { 1.0 / 255.0 } else { 1.0 };
    let mut planar = vec![0.0; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            planar[c * h * w + i] = f64::from(px[c]) * scale;
        }
    }
    Ok(if w == side && h == side {
        planar
    } else {
        resize_bilinear(&planar, 3, h, w, side)
    })
}

/// Resize, optional scaling to [0,1], then per-channel standardization.
/// Writes `3×side×side` values, channels first, into `out`.
pub fn preprocess_rgb<S: Real>(img: &RgbImage, spec: &PreprocessSpec, out: &mut [S]) -> Result<()> {
    spec.validate()?;
    if out.len() != spec.output_len() {
        return Err(Error::param(
            "out",
            format!("expected buffer of {} values, got {}", spec.output_len(), out.len()),
        ));
    }
    let side = spec.resize_side;
    let resized = resized_planar(img, side, spec.scale_to_unit)?;
    let plane = side * side;
    for c in 0..3 {
        let (m, s) = (spec.channel_means[c], spec.channel_stds[c]);
        for (o, v) in out[c * plane..(c + 1) * plane].iter_mut().zip(&resized[c * plane..(c + 1) * plane]) {
            *o = S::of((v - m) / s);
        }
    }
    Ok(())
}

/// Running per-channel sums over resized pixels, for fitting
/// standardization constants to a training set.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChannelMoments {
    pub count: u64,
    pub sum: [f64; 3],
    pub sum_sq: [f64; 3],
}

impl ChannelMoments {
    pub fn of_image(img: &RgbImage, side: usize, scale_to_unit: bool) -> Result<Self> {
        if side == 0 {
            return Err(Error::param("resize_side", "must be positive"));
        }
        let resized = resized_planar(img, side, scale_to_unit)?;
        let plane = side * side;
        let mut m = Self { count: plane as u64, ..Self::default() };
        for c in 0..3 {
            for v in &resized[c * plane..(c + 1) * plane] {
                m.sum[c] += v;
                m.sum_sq[c] += v * v;
            }
        }
        Ok(m)
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for c in 0..3 {
            self.sum[c] += other.sum[c];
            self.sum_sq[c] += other.sum_sq[c];
        }
    }

    /// Means and population stds; a constant channel keeps std 1.
    pub fn to_spec(&self, side: usize, scale_to_unit: bool) -> Result<PreprocessSpec> {
        if self.count == 0 {
            return Err(Error::param("images", "no pixels to fit"));
        }
        let n = self.count as f64;
        let mut spec = PreprocessSpec { resize_side: side, scale_to_unit, ..PreprocessSpec::default() };
        for c in 0..3 {
            let mean = self.sum[c] / n;
            let var = (self.sum_sq[c] / n - mean * mean).max(0.0);
            spec.channel_means[c] = mean;
            spec.channel_stds[c] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Converts an 8-bit RGB image into a standardized `3×S×S` array.
pub fn preprocess_for_network<S: Real>(img: &DynamicImage, spec: &PreprocessSpec) -> Result<Vec<S>> {
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(Error::param(
                "image",
                format!("expected 8-bit RGB input, got {:?}", other.color()),
            ))
        }
    };
    let mut out = vec![S::zero(); spec.output_len()];
    preprocess_rgb(rgb, spec, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_image_at_means_is_zero() {
        let spec = PreprocessSpec {
            resize_side: 7,
            channel_means: [10.0 / 255.0, 128.0 / 255.0, 250.0 / 255.0],
            ..Default::default()
        };
        for (w, h) in [(7, 7), (31, 20), (3, 5)] {
            let img = RgbImage::from_pixel(w, h, image::Rgb([10, 128, 250]));
            let out: Vec<f64> = preprocess_for_network(&DynamicImage::ImageRgb8(img), &spec).unwrap();
            assert!(out.iter().all(|v| v.abs() < 1e-12), "{w}x{h}");
        }
    }

    #[test]
    fn output_shape() {
        let img = DynamicImage::ImageRgb8(RgbImage::new(450, 450));
        let out: Vec<f32> = preprocess_for_network(&img, &PreprocessSpec::default()).unwrap();
        assert_eq!(out.len(), 3 * 224 * 224);
    }

    #[test]
    fn unit_scaling() {
        let spec = PreprocessSpec {
            resize_side: 2,
            channel_means: [0.0; 3],
            channel_stds: [1.0; 3],
            scale_to_unit: true,
        };
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(2, 2, image::Rgb([255, 255, 255])));
        let out: Vec<f64> = preprocess_for_network(&img, &spec).unwrap();
        assert!(out.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_rgb_rejected() {
        let img = DynamicImage::ImageLuma8(image::GrayImage::new(4, 4));
        let r: Result<Vec<f32>> = preprocess_for_network(&img, &PreprocessSpec::default());
        assert!(matches!(r, Err(Error::Parameter { .. })));
    }

    #[test]
    fn invalid_spec() {
        let mut s = PreprocessSpec::default();
        s.channel_stds[1] = 0.0;
        assert!(s.validate().is_err());
        s = PreprocessSpec::with_side(0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn resize_identity_and_upscale() {
        let src: Vec<f64> = (0..16).map(f64::from).collect();
        assert_eq!(resize_bilinear(&src, 1, 4, 4, 4), src);
        // 2x2 -> 4x4: interior samples interpolate halfway between neighbors
        let up = resize_bilinear(&[0.0, 4.0, 8.0, 12.0], 1, 2, 2, 4);
        assert!((up[5] - 3.0).abs() < 1e-12, "{up:?}");
        assert_eq!(up[0], 0.0);
        assert_eq!(up[15], 12.0);
    }

    #[test]
    fn resize_preserves_mean_of_smooth_field() {
        let (h, w) = (90, 90);
        let src: Vec<f64> = (0..h * w).map(|i| ((i % w) as f64).sin() + 2.0).collect();
        let out = resize_bilinear(&src, 1, h, w, 18);
        let m_in = src.iter().sum::<f64>() / src.len() as f64;
        let m_out = out.iter().sum::<f64>() / out.len() as f64;
        assert!((m_in - m_out).abs() < 0.02);
    }

    #[test]
    fn standardized_moments_on_matching_distribution() {
        let spec = PreprocessSpec::with_side(64);
        let mut rng = crate::seed::rng(5, "test", &[]);
        let mut img = RgbImage::new(64, 64);
        let dists: Vec<Normal<f64>> = (0..3)
            .map(|c| Normal::new(spec.channel_means[c] * 255.0, spec.channel_stds[c] * 255.0).unwrap())
            .collect();
        for px in img.pixels_mut() {
            for c in 0..3 {
                px[c] = dists[c].sample(&mut rng).round().clamp(0.0, 255.0) as u8;
            }
        }
        let out: Vec<f64> = preprocess_for_network(&DynamicImage::ImageRgb8(img), &spec).unwrap();
        let plane = 64 * 64;
        for c in 0..3 {
            let ch = &out[c * plane..(c + 1) * plane];
            let mean = ch.iter().sum::<f64>() / plane as f64;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
            assert!(mean.abs() < 0.05, "channel {c} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 0.05, "channel {c} std {}", var.sqrt());
        }
    }

    #[test]
    fn fitted_constants_standardize_their_own_images() {
        use crate::synthgen::{render_sample_image, SceneSpec};
        let imgs: Vec<RgbImage> = [40.0, 300.0, 2000.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let spec = SceneSpec { concentration_mg_per_l: c, image_size: 120, seed: i as u64, ..Default::default() };
                render_sample_image(&spec).unwrap().pixels
            })
            .collect();
        let mut m = ChannelMoments::default();
        for img in &imgs {
            m.merge(&ChannelMoments::of_image(img, 32, true).unwrap());
        }
        let spec = m.to_spec(32, true).unwrap();
        let plane = 32 * 32;
        let mut all = vec![Vec::new(); 3];
        for img in &imgs {
            let out: Vec<f64> = preprocess_for_network(&DynamicImage::ImageRgb8(img.clone()), &spec).unwrap();
            for (c, ch) in all.iter_mut().enumerate() {
                ch.extend_from_slice(&out[c * plane..(c + 1) * plane]);
            }
        }
        for (c, ch) in all.iter().enumerate() {
            let mean = ch.iter().sum::<f64>() / ch.len() as f64;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "channel {c} std {}", var.sqrt());
        }
        assert!(ChannelMoments::default().to_spec(32, true).is_err());
    }
}
