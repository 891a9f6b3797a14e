//! Video to still-image ingestion: fixed-rate frame sampling, blur
//! rejection and central cropping.

mod blur;
mod y4m;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub use blur::blur_score;
pub use y4m::{Y4mReader, Y4mWriter};

pub const DEFAULT_RATE_FPS: f64 = 4.0;
pub const DEFAULT_CROP_SIDE: u32 = 450;

/// Guards float products such as `60.0 * 4.0` against landing just below an integer.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSource {
    pub path: PathBuf,
    pub duration_s: f64,
    pub native_fps: f64,
    pub frame_size: (u32, u32),
}

impl VideoSource {
    pub fn validate(&self, rate_fps: f64, crop_side: Option<u32>) -> Result<()> {
        if !(self.duration_s > 0.0 && self.native_fps > 0.0) {
            return Err(Error::param(
                "video",
                format!("{}: duration and frame rate must be positive", self.path.display()),
            ));
        }
        if !(rate_fps > 0.0 && rate_fps.is_finite()) {
            return Err(Error::param("rate_fps", format!("{rate_fps} must be positive")));
        }
        if rate_fps > self.native_fps {
            return Err(Error::param(
                "rate_fps",
                format!(
                    "{rate_fps} fps exceeds the native {} fps of {}",
                    self.native_fps,
                    self.path.display()
                ),
            ));
        }
        if let Some(side) = crop_side {
            let (w, h) = self.frame_size;
            if w < side || h < side {
                return Err(Error::param(
                    "crop_side",
                    format!("{side} px crop exceeds {w}x{h} frames of {}", self.path.display()),
                ));
            }
        }
        Ok(())
    }

    pub fn expected_frames(&self, rate_fps: f64) -> usize {
        (self.duration_s * rate_fps + FLOOR_SLACK).floor() as usize
    }
}

/// Random-access decoder for one video.
pub trait FrameSource: Send {
    fn info(&self) -> &VideoSource;
    fn frame_count(&self) -> usize;
    fn frame(&mut self, index: usize) -> Result<RgbImage>;
}

/// A video whose frames are computed on demand; used for fixtures.
pub struct SyntheticVideo<F> {
    info: VideoSource,
    frames: usize,
    render: F,
}

impl<F: FnMut(usize) -> RgbImage + Send> SyntheticVideo<F> {
    pub fn new(duration_s: f64, native_fps: f64, frame_size: (u32, u32), render: F) -> Self {
        Self {
            info: VideoSource {
                path: PathBuf::from("<synthetic>"),
                duration_s,
                native_fps,
                frame_size,
            },
            frames: (duration_s * native_fps).round() as usize,
            render,
        }
    }
}

impl<F: FnMut(usize) -> RgbImage + Send> FrameSource for SyntheticVideo<F> {
    fn info(&self) -> &VideoSource {
        &self.info
    }

    fn frame_count(&self) -> usize {
        self.frames
    }

    fn frame(&mut self, index: usize) -> Result<RgbImage> {
        if index >= self.frames {
            return Err(Error::Ingestion {
                path: self.info.path.clone(),
                diagnostics: format!("frame {index} out of range"),
            });
        }
        Ok((self.render)(index))
    }
}

/// Opens a video file with the built-in decoder.
pub fn open_video(path: &Path) -> Result<Box<dyn FrameSource>> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("y4m") => Ok(Box::new(Y4mReader::open(path)?)),
        _ => Err(Error::Ingestion {
            path: path.to_path_buf(),
            diagnostics: "unsupported container; the built-in decoder reads YUV4MPEG2. \
                          Convert first, e.g. `ffmpeg -i input.mov -pix_fmt yuv420p output.y4m`"
                .into(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub sample_id: String,
    pub frame_index: usize,
    pub timestamp_s: f64,
    /// Index of the decoded frame the pixels came from.
    pub source_frame: usize,
    pub pixels: RgbImage,
    pub blur_score: Option<f64>,
}

/// Lazily samples frames at `k / rate_fps`, taking the nearest decoded frame
/// at or before each timestamp.
pub struct FrameSampler<'a> {
    source: &'a mut dyn FrameSource,
    sample_id: String,
    rate_fps: f64,
    next: usize,
    total: usize,
}

impl<'a> FrameSampler<'a> {
    pub fn new(source: &'a mut dyn FrameSource, sample_id: &str, rate_fps: f64) -> Result<Self> {
        source.info().validate(rate_fps, None)?;
        let total = source.info().expected_frames(rate_fps);
        Ok(Self {
            source,
            sample_id: sample_id.to_string(),
            rate_fps,
            next: 0,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

impl Iterator for FrameSampler<'_> {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total {
            return None;
        }
        let k = self.next;
        self.next += 1;
        let t = k as f64 / self.rate_fps;
        let last = self.source.frame_count().saturating_sub(1);
        let src = ((t * self.source.info().native_fps + FLOOR_SLACK).floor() as usize).min(last);
        Some(self.source.frame(src).map(|pixels| FrameRecord {
            sample_id: self.sample_id.clone(),
            frame_index: k,
            timestamp_s: t,
            source_frame: src,
            pixels,
            blur_score: None,
        }))
    }
}

/// `floor(duration × rate)` frames sampled uniformly in time.
pub fn extract_frames(source: &mut dyn FrameSource, sample_id: &str, rate_fps: f64) -> Result<Vec<FrameRecord>> {
    FrameSampler::new(source, sample_id, rate_fps)?.collect()
}

/// Partitions frames by `blur_score >= threshold`, preserving order.
/// Missing scores are computed.
pub fn filter_blurred(frames: Vec<FrameRecord>, threshold: f64) -> Result<(Vec<FrameRecord>, Vec<FrameRecord>)> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::param("threshold", format!("{threshold} must be >= 0")));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for mut f in frames {
        let score = match f.blur_score {
            Some(s) => s,
            None => blur_score(&f.pixels)?,
        };
        f.blur_score = Some(score);
        if score >= threshold {
            kept.push(f);
        } else {
            dropped.push(f);
        }
    }
    Ok((kept, dropped))
}

/// Copies the centered `side×side` region; the origin is floored.
pub fn center_crop(img: &RgbImage, side: u32) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    if side == 0 || w < side || h < side {
        return Err(Error::param("side", format!("{side} px crop does not fit a {w}x{h} image")));
    }
    let (x, y) = crop_origin(w, h, side);
    Ok(image::imageops::crop_imm(img, x, y, side, side).to_image())
}

pub fn crop_origin(w: u32, h: u32, side: u32) -> (u32, u32) {
    ((w - side) / 2, (h - side) / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestOptions {
    pub rate_fps: f64,
    /// Frames scoring below this are dropped as blurred.
    pub blur_threshold: f64,
    pub crop_side: u32,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            rate_fps: DEFAULT_RATE_FPS,
            blur_threshold: 50.0,
            crop_side: DEFAULT_CROP_SIDE,
        }
    }
}

impl IngestOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_fps > 0.0 && self.rate_fps.is_finite()) {
            return Err(Error::param("rate_fps", "must be positive"));
        }
        if self.blur_threshold.is_nan() || self.blur_threshold < 0.0 {
            return Err(Error::param("blur_threshold", "must be >= 0"));
        }
        if self.crop_side == 0 {
            return Err(Error::param("crop_side", "must be positive"));
        }
        Ok(())
    }
}

/// One row of the frame log: `sample_id,frame_index,timestamp_s,path,blur_score,kept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLogRow {
    pub sample_id: String,
    pub frame_index: usize,
    pub timestamp_s: f64,
    /// Crop written for a kept frame; empty for dropped frames.
    pub path: String,
    pub blur_score: f64,
    pub kept: bool,
}

pub fn write_frame_log(path: &Path, rows: &[FrameLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    if rows.is_empty() {
        w.write_record(["sample_id", "frame_index", "timestamp_s", "path", "blur_score", "kept"])
            .map_err(|e| Error::csv(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::csv(path, e))?;
    fsutil::atomic_write(path, &bytes)
}

pub fn read_frame_log(path: &Path) -> Result<Vec<FrameLogRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| Error::csv(path, e))
}

/// Samples, scores, filters and crops one video, writing kept crops as
/// `out_dir/<rel_dir>/<sample_id>_f<index>.png`. Frames stream through one
/// at a time, so memory stays bounded for long high-resolution videos.
pub fn ingest_video(
    source: &mut dyn FrameSource,
    sample_id: &str,
    opts: &IngestOptions,
    out_dir: &Path,
    rel_dir: &Path,
) -> Result<Vec<FrameLogRow>> {
    opts.validate()?;
    source.info().validate(opts.rate_fps, Some(opts.crop_side))?;
    let mut log = Vec::new();
    for frame in FrameSampler::new(source, sample_id, opts.rate_fps)? {
        let frame = frame?;
        let (mut kept, dropped) = filter_blurred(vec![frame], opts.blur_threshold)?;
        let (frame, is_kept) = match kept.pop() {
            Some(f) => (f, true),
            None => (dropped.into_iter().next().expect("one frame in, one out"), false),
        };
        let mut path = String::new();
        if is_kept {
            let crop = center_crop(&frame.pixels, opts.crop_side)?;
            let rel = rel_dir.join(format!("{sample_id}_f{:04}.png", frame.frame_index));
            fsutil::write_png(&out_dir.join(&rel), &crop)?;
            path = rel.to_string_lossy().replace('\\', "/");
        }
        log.push(FrameLogRow {
            sample_id: sample_id.to_string(),
            frame_index: frame.frame_index,
            timestamp_s: frame.timestamp_s,
            path,
            blur_score: frame.blur_score.expect("scored by filter"),
            kept: is_kept,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn gray_video(duration: f64, fps: f64, size: (u32, u32)) -> SyntheticVideo<impl FnMut(usize) -> RgbImage + Send> {
        SyntheticVideo::new(duration, fps, size, move |i| {
            RgbImage::from_pixel(size.0, size.1, Rgb([(i % 256) as u8; 3]))
        })
    }

    #[test]
    fn frame_count_law() {
        let mut v = gray_video(60.0, 30.0, (8, 8));
        assert_eq!(extract_frames(&mut v, "s", 4.0).unwrap().len(), 240);
        let mut v = gray_video(1.0, 30.0, (8, 8));
        assert_eq!(extract_frames(&mut v, "s", 4.0).unwrap().len(), 4);
        let mut v = gray_video(2.5, 29.97, (8, 8));
        assert_eq!(extract_frames(&mut v, "s", 3.0).unwrap().len(), 7);
    }

    #[test]
    fn timestamps_and_nearest_preceding_frame() {
        let mut v = gray_video(2.0, 30.0, (4, 4));
        let frames = extract_frames(&mut v, "s1", 4.0).unwrap();
        let src: Vec<usize> = frames.iter().map(|f| f.source_frame).collect();
        assert_eq!(src, [0, 7, 15, 22, 30, 37, 45, 52]);
        for (k, f) in frames.iter().enumerate() {
            assert_eq!(f.frame_index, k);
            assert!((f.timestamp_s - k as f64 * 0.25).abs() < 1e-12);
            assert_eq!(f.pixels.get_pixel(0, 0)[0] as usize, f.source_frame);
        }
        assert!(frames.windows(2).all(|w| w[0].timestamp_s < w[1].timestamp_s));
    }

    #[test]
    fn rate_above_native_rejected() {
        let mut v = gray_video(1.0, 3.0, (4, 4));
        assert!(matches!(extract_frames(&mut v, "s", 4.0), Err(Error::Parameter { .. })));
        assert!(matches!(extract_frames(&mut v, "s", 0.0), Err(Error::Parameter { .. })));
    }

    #[test]
    fn crop_origins() {
        assert_eq!(crop_origin(1920, 1080, 450), (735, 315));
        assert_eq!(crop_origin(451, 451, 450), (0, 0));
        let img = RgbImage::from_fn(451, 453, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 0]));
        let c = center_crop(&img, 450).unwrap();
        assert_eq!(c.dimensions(), (450, 450));
        assert_eq!(c.get_pixel(0, 0), &Rgb([0, 1, 0]));
    }

    #[test]
    fn identity_crop_and_idempotence() {
        let img = RgbImage::from_fn(450, 450, |x, y| Rgb([(x * 7 % 256) as u8, (y % 256) as u8, 9]));
        assert_eq!(center_crop(&img, 450).unwrap(), img);
        let big = RgbImage::from_fn(97, 61, |x, y| Rgb([(x * 3 % 256) as u8, (y * 5 % 256) as u8, 1]));
        let once = center_crop(&big, 40).unwrap();
        assert_eq!(center_crop(&once, 40).unwrap(), once);
    }

    #[test]
    fn crop_too_large() {
        let img = RgbImage::new(100, 449);
        assert!(matches!(center_crop(&img, 450), Err(Error::Parameter { .. })));
    }

    fn frame(img: RgbImage, k: usize) -> FrameRecord {
        FrameRecord {
            sample_id: "s".into(),
            frame_index: k,
            timestamp_s: k as f64,
            source_frame: k,
            pixels: img,
            blur_score: None,
        }
    }

    #[test]
    fn threshold_extremes() {
        let frames: Vec<_> = (0..4)
            .map(|k| frame(RgbImage::from_fn(6, 6, |x, y| Rgb([((x + y + k as u32) % 2 * 255) as u8; 3])), k))
            .collect();
        let (kept, dropped) = filter_blurred(frames.clone(), 0.0).unwrap();
        assert_eq!((kept.len(), dropped.len()), (4, 0));
        let (kept, dropped) = filter_blurred(frames, f64::INFINITY).unwrap();
        assert_eq!((kept.len(), dropped.len()), (0, 4));
        assert!(filter_blurred(vec![], -1.0).is_err());
        assert_eq!(filter_blurred(vec![], 1.0).unwrap(), (vec![], vec![]));
    }

    #[test]
    fn ingest_writes_crops_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = SyntheticVideo::new(1.0, 8.0, (20, 12), |i| {
            if i % 2 == 0 {
                RgbImage::from_fn(20, 12, |x, y| Rgb([((x + y) % 2 * 255) as u8; 3]))
            } else {
                RgbImage::from_pixel(20, 12, Rgb([50; 3]))
            }
        });
        let opts = IngestOptions { rate_fps: 4.0, blur_threshold: 1.0, crop_side: 10 };
        let log = ingest_video(&mut v, "sA", &opts, dir.path(), Path::new("frames")).unwrap();
        assert_eq!(log.len(), 4);
        // rate 4 of native 8 hits the even (sharp) frames only
        assert!(log.iter().all(|r| r.kept));
        for r in &log {
            let img = crate::fsutil::read_image(&dir.path().join(&r.path)).unwrap();
            assert_eq!((img.width(), img.height()), (10, 10));
        }
        let p = dir.path().join("frames.csv");
        write_frame_log(&p, &log).unwrap();
        assert_eq!(read_frame_log(&p).unwrap(), log);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("sample_id,frame_index,timestamp_s,path,blur_score,kept\n"));
    }

    #[test]
    fn ingest_rejects_oversized_crop_before_decoding() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = SyntheticVideo::new(1.0, 8.0, (20, 12), |_| panic!("must not decode"));
        let opts = IngestOptions { crop_side: 13, ..Default::default() };
        let err = ingest_video(&mut v, "s", &opts, dir.path(), Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("synthetic"), "{err}");
    }
}
