use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::label::ClassLabel;
use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Rows shuffled within each class; per-class validation counts follow the fraction.
    #[default]
    StratifiedRandom,
    /// Whole samples are assigned to one split so near-duplicate frames never straddle it.
    GroupedBySample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub val_fraction: f64,
    pub strategy: SplitStrategy,
    pub seed: u64,
    /// Permit classes with no rows at all. Off by default: training on a
    /// manifest missing a class is ill-posed.
    pub allow_missing_classes: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            val_fraction: 0.1,
            strategy: SplitStrategy::StratifiedRandom,
            seed: 0,
            allow_missing_classes: false,
        }
    }
}

/// Splits each class's quota `count * fraction` so the per-class counts sum to
/// `round(total * fraction)` (largest-remainder rounding, ties by class order).
fn apportion(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&c| c as f64 * fraction).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(alloc.iter().sum());
    for &i in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if alloc[i] < counts[i] {
            alloc[i] += 1;
            remaining -= 1;
        }
    }
    alloc
}

/// Assigns every row to train or val.
pub fn split_manifest(manifest: &DatasetManifest, opts: &SplitOptions) -> Result<DatasetManifest> {
    if !(opts.val_fraction > 0.0 && opts.val_fraction < 1.0) {
        return Err(Error::param("val_fraction", "must lie strictly between 0 and 1"));
    }
    if let Some(r) = manifest.rows().iter().find(|r| r.split != Split::Unassigned) {
        return Err(Error::Validation(format!(
            "row `{}` already assigned to {}; clear splits first",
            r.id, r.split
        )));
    }
    let counts = manifest.class_counts();
    if !opts.allow_missing_classes {
        let empty: Vec<_> = counts.iter().filter(|(_, &n)| n == 0).map(|(c, _)| c.name()).collect();
        if !empty.is_empty() {
            return Err(Error::Validation(format!("no rows for class(es): {}", empty.join(", "))));
        }
    }

    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, row) in manifest.rows().iter().enumerate() {
        by_class.entry(row.label).or_default().push(i);
    }

    let mut splits = vec![Split::Train; manifest.len()];
    match opts.strategy {
        SplitStrategy::StratifiedRandom => {
            let classes: Vec<ClassLabel> = by_class.keys().copied().collect();
            let sizes: Vec<usize> = classes.iter().map(|c| by_class[c].len()).collect();
            let quotas = apportion(&sizes, opts.val_fraction);
            for (class, n_val) in classes.iter().zip(quotas) {
                let mut idx = by_class[class].clone();
                idx.shuffle(&mut seed::rng(opts.seed, "split", &[class.index() as u64]));
                for &i in &idx[..n_val] {
                    splits[i] = Split::Val;
                }
            }
        }
        SplitStrategy::GroupedBySample => {
            for (class, rows) in &by_class {
                // groups in first-appearance order, then shuffled
                let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
                for &i in rows {
                    let key = manifest.rows()[i].group_key();
                    match groups.iter_mut().find(|(k, _)| *k == key) {
                        Some((_, members)) => members.push(i),
                        None => groups.push((key, vec![i])),
                    }
                }
                if groups.iter().any(|(k, _)| {
                    manifest
                        .rows()
                        .iter()
                        .any(|r| r.group_key() == *k && r.label != *class)
                }) {
                    return Err(Error::Validation(format!(
                        "a sample in class {class} has rows with other labels"
                    )));
                }
                groups.shuffle(&mut seed::rng(opts.seed, "split-grouped", &[class.index() as u64]));
                let target = (rows.len() as f64 * opts.val_fraction).round() as i64;
                let mut val_rows = 0i64;
                let mut val_groups = 0;
                for (_, members) in &groups {
                    if val_groups + 1 == groups.len() {
                        break; // keep at least one sample for training
                    }
                    let n = members.len() as i64;
                    if (val_rows + n - target).abs() < (val_rows - target).abs() {
                        val_rows += n;
                        val_groups += 1;
                        for &i in members {
                            splits[i] = Split::Val;
                        }
                    }
                }
            }
        }
    }
    manifest.with_splits(&splits)
}
