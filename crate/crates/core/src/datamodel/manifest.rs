use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use super::label::{label_from_concentration, ClassLabel};
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Unassigned => "",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Unassigned => "unassigned",
            s => s.as_str(),
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "" | "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::param("split", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    /// Image path as stored in the manifest, relative to the manifest's base directory.
    pub path: PathBuf,
    pub concentration_mg_per_l: f64,
    pub label: ClassLabel,
    pub split: Split,
    /// Physical sample the image came from; `None` means the image is its own sample.
    pub sample_id: Option<String>,
}

impl ManifestRow {
    pub fn group_key(&self) -> &str {
        self.sample_id.as_deref().unwrap_or(&self.id)
    }
}

/// Ordered image rows with their concentrations, labels and split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    rows: Vec<ManifestRow>,
    base_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    id: String,
    path: String,
    concentration_mg_per_l: f64,
    #[serde(default)]
    class: Option<String>,
    #[serde(default)]
    split: Option<String>,
    #[serde(default)]
    sample_id: Option<String>,
}

impl DatasetManifest {
    /// Builds a manifest, checking unique paths and label consistency.
    pub fn new(rows: Vec<ManifestRow>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert(row.path.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate path {} in manifest",
                    row.path.display()
                )));
            }
            let expected = label_from_concentration(row.concentration_mg_per_l)?;
            if expected != row.label {
                return Err(Error::Validation(format!(
                    "row `{}`: label {} contradicts concentration {} mg/L ({})",
                    row.id, row.label, row.concentration_mg_per_l, expected
                )));
            }
        }
        Ok(Self {
            rows,
            base_dir: base_dir.into(),
        })
    }

    pub fn empty(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            rows: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.base_dir.join(&row.path)
    }

    pub fn class_counts(&self) -> BTreeMap<ClassLabel, usize> {
        let mut counts: BTreeMap<ClassLabel, usize> =
            ClassLabel::ALL.iter().map(|&c| (c, 0)).collect();
        for row in &self.rows {
            *counts.entry(row.label).or_default() += 1;
        }
        counts
    }

    pub fn split_counts(&self, split: Split) -> BTreeMap<ClassLabel, usize> {
        let mut counts: BTreeMap<ClassLabel, usize> =
            ClassLabel::ALL.iter().map(|&c| (c, 0)).collect();
        for row in self.rows.iter().filter(|r| r.split == split) {
            *counts.entry(row.label).or_default() += 1;
        }
        counts
    }

    pub fn subset(&self, split: Split) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    pub fn is_split(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.split != Split::Unassigned)
    }

    /// Returns a copy with split assignments replaced, one per row.
    pub fn with_splits(&self, splits: &[Split]) -> Result<Self> {
        if splits.len() != self.rows.len() {
            return Err(Error::param("splits", "one split per row required"));
        }
        let rows = self
            .rows
            .iter()
            .zip(splits)
            .map(|(r, &s)| ManifestRow { split: s, ..r.clone() })
            .collect();
        Ok(Self {
            rows,
            base_dir: self.base_dir.clone(),
        })
    }

    pub fn cleared_splits(&self) -> Self {
        self.with_splits(&vec![Split::Unassigned; self.rows.len()])
            .expect("lengths match")
    }

    /// Serializes to CSV: `id,path,concentration_mg_per_l,class,split`, plus a
    /// trailing `sample_id` column when any row carries one.
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let with_samples = self.rows.iter().any(|r| r.sample_id.is_some());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id", "path", "concentration_mg_per_l", "class", "split"];
        if with_samples {
            header.push("sample_id");
        }
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let path = r.path.to_string_lossy().replace('\\', "/");
            let conc = r.concentration_mg_per_l.to_string();
            let mut rec = vec![
                r.id.as_str(),
                path.as_str(),
                conc.as_str(),
                r.label.name(),
                r.split.as_str(),
            ];
            if with_samples {
                rec.push(r.sample_id.as_deref().unwrap_or(""));
            }
            w.write_record(&rec).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write(path, &self.to_csv_bytes())
    }

    /// Reads a manifest CSV. Relative image paths resolve against `base_dir`,
    /// or against the CSV's own directory when `base_dir` is `None`.
    pub fn read_csv(path: &Path, base_dir: Option<&Path>) -> Result<Self> {
        let base = base_dir
            .map(Path::to_path_buf)
            .or_else(|| path.parent().map(Path::to_path_buf))
            .unwrap_or_default();
        let rows = read_rows(path)?;
        let mut mismatches = Vec::new();
        let mut out = Vec::with_capacity(rows.len());
        for (line, raw) in rows {
            let label = label_from_concentration(raw.concentration_mg_per_l).map_err(|e| {
                Error::Validation(format!("{}:{} row `{}`: {e}", path.display(), line, raw.id))
            })?;
            if let Some(declared) = raw.class.as_deref().filter(|s| !s.trim().is_empty()) {
                let declared: ClassLabel = declared.parse()?;
                if declared != label {
                    mismatches.push(format!(
                        "line {line} `{}` ({} mg/L is {label}, labeled {declared})",
                        raw.id, raw.concentration_mg_per_l
                    ));
                }
            }
            let split = raw.split.as_deref().unwrap_or("").parse()?;
            out.push(ManifestRow {
                id: raw.id,
                path: PathBuf::from(raw.path),
                concentration_mg_per_l: raw.concentration_mg_per_l,
                label,
                split,
                sample_id: raw.sample_id.filter(|s| !s.is_empty()),
            });
        }
        if !mismatches.is_empty() {
            return Err(Error::Validation(format!(
                "label mismatch in {}: {}",
                path.display(),
                mismatches.join("; ")
            )));
        }
        Self::new(out, base)
    }
}

fn read_rows(path: &Path) -> Result<Vec<(usize, RawRow)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<RawRow>().enumerate() {
        rows.push((i + 2, rec.map_err(|e| Error::csv(path, e))?));
    }
    Ok(rows)
}

/// Reads a labels CSV and checks every referenced image exists under `image_dir`.
pub fn build_manifest(image_dir: &Path, labels_csv: &Path) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::read_csv(labels_csv, Some(image_dir))?;
    let missing: Vec<PathBuf> = manifest
        .rows()
        .iter()
        .map(|r| manifest.resolve(r))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn touch(dir: &Path, names: &[&str]) {
        for n in names {
            std::fs::write(dir.join(n), b"x").unwrap();
        }
    }

    #[test]
    fn builds_rows_in_csv_order() {
        let dir = tempfile::tempdir().unwrap();
        let names = ["a.png", "b.png", "c.png", "d.png", "e.png", "f.png"];
        touch(dir.path(), &names);
        let csv = write(
            dir.path(),
            "labels.csv",
            "id,path,concentration_mg_per_l,class,split\n\
             a,a.png,1000,high,\nb,b.png,5000,high,\nc,c.png,100,medium,\n\
             d,d.png,300,medium,\ne,e.png,50,low,\nf,f.png,60,,\n",
        );
        let m = build_manifest(dir.path(), &csv).unwrap();
        assert_eq!(m.len(), 6);
        let ids: Vec<_> = m.rows().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d", "e", "f"]);
        assert!(m.rows().iter().all(|r| r.split == Split::Unassigned));
        assert_eq!(m.class_counts()[&ClassLabel::Low], 2);
    }

    #[test]
    fn label_contradiction_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a.png"]);
        let csv = write(
            dir.path(),
            "labels.csv",
            "id,path,concentration_mg_per_l,class\nbad,a.png,100,low\n",
        );
        let err = build_manifest(dir.path(), &csv).unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains("bad"), "{msg}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_files_are_all_listed() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a.png"]);
        let csv = write(
            dir.path(),
            "labels.csv",
            "id,path,concentration_mg_per_l\na,a.png,100\nb,gone.png,100\nc,gone2.png,50\n",
        );
        match build_manifest(dir.path(), &csv).unwrap_err() {
            Error::MissingFiles(paths) => {
                assert_eq!(paths.len(), 2);
                assert!(paths[0].ends_with("gone.png"));
                assert!(paths[1].ends_with("gone2.png"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_paths_rejected() {
        let rows = vec![
            ManifestRow {
                id: "a".into(),
                path: "x.png".into(),
                concentration_mg_per_l: 50.0,
                label: ClassLabel::Low,
                split: Split::Unassigned,
                sample_id: None,
            };
            2
        ];
        assert!(matches!(DatasetManifest::new(rows, "."), Err(Error::Validation(_))));
    }

    #[test]
    fn csv_round_trip_preserves_rows() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ManifestRow {
                id: "s1_f0".into(),
                path: "img/s1_f0.png".into(),
                concentration_mg_per_l: 62.5,
                label: ClassLabel::Low,
                split: Split::Val,
                sample_id: Some("s1".into()),
            },
            ManifestRow {
                id: "s2_f0".into(),
                path: "img/s2_f0.png".into(),
                concentration_mg_per_l: 1234.125,
                label: ClassLabel::High,
                split: Split::Train,
                sample_id: Some("s2".into()),
            },
        ];
        let m = DatasetManifest::new(rows, dir.path()).unwrap();
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        let back = DatasetManifest::read_csv(&p, None).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn header_without_samples() {
        let m = DatasetManifest::empty(".");
        let text = String::from_utf8(m.to_csv_bytes()).unwrap();
        assert_eq!(text, "id,path,concentration_mg_per_l,class,split\n");
    }
}
