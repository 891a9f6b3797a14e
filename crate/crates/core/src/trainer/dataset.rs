use std::path::{Path, PathBuf};

use image::DynamicImage;
use rayon::prelude::*;

use crate::datamodel::{preprocess_rgb, ChannelMoments, DatasetManifest, ManifestRow, PreprocessSpec};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::scalar::Real;

/// Labelled network inputs, addressable by index.
pub trait Dataset<S: Real>: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values per preprocessed input.
    fn input_len(&self) -> usize;

    fn label(&self, index: usize) -> usize;

    fn load_into(&self, index: usize, out: &mut [S]) -> Result<()>;

    /// Loads the given items as one contiguous batch buffer.
    fn load_batch(&self, indices: &[usize]) -> Result<Vec<S>> {
        let n = self.input_len();
        let mut buf = vec![S::zero(); indices.len() * n];
        buf.par_chunks_mut(n)
            .zip(indices.par_iter())
            .try_for_each(|(out, &i)| self.load_into(i, out))?;
        Ok(buf)
    }
}

/// Fully materialized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InMemoryDataset<S> {
    inputs: Vec<S>,
    labels: Vec<usize>,
    input_len: usize,
}

impl<S: Real> InMemoryDataset<S> {
    pub fn new(inputs: Vec<S>, labels: Vec<usize>, input_len: usize) -> Result<Self> {
        if input_len == 0 || inputs.len() != labels.len() * input_len {
            return Err(Error::param(
                "inputs",
                format!("{} values do not hold {} inputs of {input_len}", inputs.len(), labels.len()),
            ));
        }
        Ok(Self { inputs, labels, input_len })
    }

    /// Decodes and preprocesses every image once, in parallel.
    pub fn from_rows(manifest: &DatasetManifest, rows: &[&ManifestRow], spec: &PreprocessSpec) -> Result<Self> {
        let lazy = ManifestDataset::new(manifest, rows, spec.clone())?;
        let all: Vec<usize> = (0..rows.len()).collect();
        let inputs = Dataset::<S>::load_batch(&lazy, &all)?;
        Self::new(inputs, lazy.labels, spec.output_len())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

impl<S: Real> Dataset<S> for InMemoryDataset<S> {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn input_len(&self) -> usize {
        self.input_len
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn load_into(&self, index: usize, out: &mut [S]) -> Result<()> {
        out.copy_from_slice(&self.inputs[index * self.input_len..(index + 1) * self.input_len]);
        Ok(())
    }
}

/// Reads and preprocesses images from disk on every access.
#[derive(Debug, Clone)]
pub struct ManifestDataset {
    paths: Vec<PathBuf>,
    labels: Vec<usize>,
    spec: PreprocessSpec,
}

impl ManifestDataset {
    pub fn new(manifest: &DatasetManifest, rows: &[&ManifestRow], spec: PreprocessSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            paths: rows.iter().map(|r| manifest.resolve(r)).collect(),
            labels: rows.iter().map(|r| r.label.index()).collect(),
            spec,
        })
    }
}

fn read_rgb(path: &Path) -> Result<image::RgbImage> {
    match fsutil::read_image(path)? {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        other => Err(Error::Image {
            path: path.to_path_buf(),
            message: format!("expected 8-bit RGB, got {:?}", other.color()),
        }),
    }
}

/// Fits per-channel standardization constants to the given rows, keeping
/// the resize side and unit scaling of `base`. Sums are merged in row
/// order, so the result does not depend on thread count.
pub fn fit_preprocess(manifest: &DatasetManifest, rows: &[&ManifestRow], base: &PreprocessSpec) -> Result<PreprocessSpec> {
    let parts = rows
        .par_iter()
        .map(|r| ChannelMoments::of_image(&read_rgb(&manifest.resolve(r))?, base.resize_side, base.scale_to_unit))
        .collect::<Result<Vec<_>>>()?;
    let mut total = ChannelMoments::default();
    for p in &parts {
        total.merge(p);
    }
    total.to_spec(base.resize_side, base.scale_to_unit)
}

impl<S: Real> Dataset<S> for ManifestDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn input_len(&self) -> usize {
        self.spec.output_len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn load_into(&self, index: usize, out: &mut [S]) -> Result<()> {
        preprocess_rgb(&read_rgb(&self.paths[index])?, &self.spec, out)
    }
}
