//! YUV4MPEG2 (`.y4m`) reader and writer, 8-bit only.
//!
//! Supported chroma layouts: 420 (all siting variants), 422, 444 and mono.
//! Samples are BT.601; full range when the header carries
//! `XCOLORRANGE=FULL`, studio range otherwise.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::{FrameSource, VideoSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chroma {
    C420,
    C422,
    C444,
    Mono,
}

impl Chroma {
    fn parse(tag: &str) -> Option<Self> {
        match tag {
            t if t.starts_with("420") => Some(Chroma::C420),
            "422" => Some(Chroma::C422),
            "444" => Some(Chroma::C444),
            "mono" => Some(Chroma::Mono),
            _ => None,
        }
    }

    fn plane_dims(self, w: usize, h: usize) -> (usize, usize) {
        match self {
            Chroma::C420 => (w.div_ceil(2), h.div_ceil(2)),
            Chroma::C422 => (w.div_ceil(2), h),
            Chroma::C444 => (w, h),
            Chroma::Mono => (0, 0),
        }
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn yuv_to_rgb(y: u8, u: u8, v: u8, full_range: bool) -> [u8; 3] {
    let (y, u, v) = (f64::from(y), f64::from(u) - 128.0, f64::from(v) - 128.0);
    if full_range {
        [
            clamp_u8(y + 1.402 * v),
            clamp_u8(y - 0.344_136 * u - 0.714_136 * v),
            clamp_u8(y + 1.772 * u),
        ]
    } else {
        let y = 1.164_383 * (y - 16.0);
        [
            clamp_u8(y + 1.596_027 * v),
            clamp_u8(y - 0.391_762 * u - 0.812_968 * v),
            clamp_u8(y + 2.017_232 * u),
        ]
    }
}

fn rgb_to_yuv_full(p: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    [
        clamp_u8(y),
        clamp_u8(128.0 + (b - y) / 1.772),
        clamp_u8(128.0 + (r - y) / 1.402),
    ]
}

/// Seekable reader over a `.y4m` file.
pub struct Y4mReader<R> {
    inner: R,
    info: VideoSource,
    chroma: Chroma,
    full_range: bool,
    frame_bytes: usize,
    /// Byte offset of each frame's payload.
    offsets: Vec<u64>,
}

fn ingest_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        diagnostics: msg.into(),
    }
}

impl Y4mReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| ingest_err(path, format!("cannot open: {e}")))?;
        Self::new(BufReader::new(f), path)
    }
}

impl<R: Read + Seek + BufRead> Y4mReader<R> {
    pub fn new(mut inner: R, path: &Path) -> Result<Self> {
        let mut header = String::new();
        inner
            .read_line(&mut header)
            .map_err(|e| ingest_err(path, format!("cannot read header: {e}")))?;
        let mut tokens = header.trim_end().split(' ');
        if tokens.next() != Some("YUV4MPEG2") {
            return Err(ingest_err(path, "missing YUV4MPEG2 signature"));
        }
        let (mut w, mut h, mut fps, mut chroma, mut full_range) = (0usize, 0usize, None, Chroma::C420, false);
        for t in tokens {
            let (key, val) = t.split_at(t.len().min(1));
            match key {
                "W" => w = val.parse().map_err(|_| ingest_err(path, format!("bad width `{val}`")))?,
                "H" => h = val.parse().map_err(|_| ingest_err(path, format!("bad height `{val}`")))?,
                "F" => {
                    let (n, d) = val.split_once(':').ok_or_else(|| ingest_err(path, "bad frame rate"))?;
                    let n: f64 = n.parse().map_err(|_| ingest_err(path, "bad frame rate"))?;
                    let d: f64 = d.parse().map_err(|_| ingest_err(path, "bad frame rate"))?;
                    fps = Some(n / d);
                }
                "C" => {
                    chroma = Chroma::parse(val)
                        .ok_or_else(|| ingest_err(path, format!("unsupported colorspace C{val}")))?
                }
                "X" if val == "COLORRANGE=FULL" => full_range = true,
                _ => {}
            }
        }
        let fps = fps.filter(|f| *f > 0.0 && f.is_finite()).ok_or_else(|| ingest_err(path, "missing frame rate"))?;
        if w == 0 || h == 0 {
            return Err(ingest_err(path, "missing frame dimensions"));
        }
        let (cw, ch) = chroma.plane_dims(w, h);
        let frame_bytes = w * h + 2 * cw * ch;

        let mut offsets = Vec::new();
        let mut line = Vec::new();
        loop {
            line.clear();
            let n = inner
                .read_until(b'\n', &mut line)
                .map_err(|e| ingest_err(path, format!("read error: {e}")))?;
            if n == 0 {
                break;
            }
            if !line.starts_with(b"FRAME") {
                return Err(ingest_err(path, format!("frame {} has no FRAME marker", offsets.len())));
            }
            let pos = inner
                .stream_position()
                .map_err(|e| ingest_err(path, format!("seek error: {e}")))?;
            let end = inner
                .seek(SeekFrom::Current(frame_bytes as i64))
                .map_err(|e| ingest_err(path, format!("seek error: {e}")))?;
            offsets.push(pos);
            // a truncated final frame shows up as seeking past EOF
            let len = inner.seek(SeekFrom::End(0)).map_err(|e| ingest_err(path, e.to_string()))?;
            if end > len {
                return Err(ingest_err(path, format!("frame {} truncated", offsets.len() - 1)));
            }
            inner.seek(SeekFrom::Start(end)).map_err(|e| ingest_err(path, e.to_string()))?;
        }
        if offsets.is_empty() {
            return Err(ingest_err(path, "no frames"));
        }
        let info = VideoSource {
            path: path.to_path_buf(),
            duration_s: offsets.len() as f64 / fps,
            native_fps: fps,
            frame_size: (w as u32, h as u32),
        };
        Ok(Self {
            inner,
            info,
            chroma,
            full_range,
            frame_bytes,
            offsets,
        })
    }
}

impl<R: Read + Seek + Send> FrameSource for Y4mReader<R> {
    fn info(&self) -> &VideoSource {
        &self.info
    }

    fn frame_count(&self) -> usize {
        self.offsets.len()
    }

    fn frame(&mut self, index: usize) -> Result<RgbImage> {
        let path = self.info.path.clone();
        let off = *self
            .offsets
            .get(index)
            .ok_or_else(|| ingest_err(&path, format!("frame {index} out of range")))?;
        let mut buf = vec![0u8; self.frame_bytes];
        self.inner
            .seek(SeekFrom::Start(off))
            .and_then(|_| self.inner.read_exact(&mut buf))
            .map_err(|e| ingest_err(&path, format!("frame {index}: {e}")))?;
        let (w, h) = (self.info.frame_size.0 as usize, self.info.frame_size.1 as usize);
        let (cw, ch) = self.chroma.plane_dims(w, h);
        let (yp, rest) = buf.split_at(w * h);
        let (up, vp) = rest.split_at(cw * ch);
        let chroma = self.chroma;
        let full = self.full_range;
        Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let luma = yp[y * w + x];
            let (u, v) = match chroma {
                Chroma::Mono => (128, 128),
                Chroma::C444 => (up[y * w + x], vp[y * w + x]),
                Chroma::C422 => (up[y * cw + x / 2], vp[y * cw + x / 2]),
                Chroma::C420 => (up[(y / 2) * cw + x / 2], vp[(y / 2) * cw + x / 2]),
            };
            Rgb(yuv_to_rgb(luma, u, v, full))
        }))
    }
}

/// Writes full-range 4:4:4 `.y4m` files, used for fixtures and frame dumps.
pub struct Y4mWriter<W: Write> {
    out: W,
    size: (u32, u32),
}

impl Y4mWriter<std::io::BufWriter<File>> {
    pub fn create(path: &Path, width: u32, height: u32, fps: u32) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(PathBuf::from(path), e))?;
        Self::new(std::io::BufWriter::new(f), width, height, fps).map_err(|e| Error::io(path, e))
    }
}

impl<W: Write> Y4mWriter<W> {
    pub fn new(mut out: W, width: u32, height: u32, fps: u32) -> std::io::Result<Self> {
        writeln!(out, "YUV4MPEG2 W{width} H{height} F{fps}:1 Ip A1:1 C444 XCOLORRANGE=FULL")?;
        Ok(Self {
            out,
            size: (width, height),
        })
    }

    pub fn write_frame(&mut self, img: &RgbImage) -> std::io::Result<()> {
        assert_eq!(img.dimensions(), self.size, "frame size changed mid-stream");
        let n = (self.size.0 * self.size.1) as usize;
        let mut planes = vec![0u8; 3 * n];
        for (i, p) in img.pixels().enumerate() {
            let [y, u, v] = rgb_to_yuv_full(p.0);
            planes[i] = y;
            planes[n + i] = u;
            planes[2 * n + i] = v;
        }
        self.out.write_all(b"FRAME\n")?;
        self.out.write_all(&planes)
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
