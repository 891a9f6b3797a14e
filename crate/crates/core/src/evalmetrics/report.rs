use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{
    accuracy, binary_tallies, f_measure_of, normalize_rows, precision, recall, BinaryTally, ConfusionMatrix,
    NormalizedMatrix, Score,
};
use super::roc::{micro_average_roc, roc_curve, RocCurve};
use crate::error::{Error, Result};
use crate::fsutil;

const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub tally: BinaryTally,
    pub accuracy: f64,
    pub precision: Score,
    pub recall: Score,
    pub f_measure: Score,
    /// One-vs-rest AUC; absent when the class has no positives or no negatives.
    pub auc: Option<f64>,
}

/// `undefined` is set when any contributing value fell back to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: Score,
    pub recall: Score,
    pub f_measure: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub n: u64,
    pub beta: f64,
    /// Fraction of instances on the diagonal.
    pub accuracy: f64,
    pub confusion_matrix: Vec<Vec<u64>>,
    pub normalized_confusion: NormalizedMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub micro: Aggregate,
    pub macro_avg: Aggregate,
    pub weighted: Aggregate,
    /// Per-class one-vs-rest curves, in class order.
    pub roc: Vec<Option<RocCurve>>,
    pub micro_roc: Option<RocCurve>,
    pub predictions: Vec<usize>,
    /// Rows whose maximum probability was shared; resolved to the lowest index.
    pub argmax_ties: u64,
}

/// Index of the first maximum and whether another entry equals it.
fn argmax_with_tie(row: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    let tie = row.iter().enumerate().any(|(i, &v)| i != best && v == row[best]);
    (best, tie)
}

fn check_inputs(y_true: &[usize], probs: &[Vec<f64>], k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::param("class_names", "need at least two classes"));
    }
    if y_true.len() != probs.len() {
        return Err(Error::param(
            "probabilities",
            format!("{} rows for {} labels", probs.len(), y_true.len()),
        ));
    }
    if y_true.is_empty() {
        return Err(Error::param("y_true", "no instances"));
    }
    for (i, (row, &t)) in probs.iter().zip(y_true).enumerate() {
        if row.len() != k {
            return Err(Error::param("probabilities", format!("row {i} has {} columns, expected {k}", row.len())));
        }
        if t >= k {
            return Err(Error::param("y_true", format!("row {i} has class {t} outside 0..{k}")));
        }
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::param("probabilities", format!("row {i} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::param("probabilities", format!("row {i} sums to {s}, not 1")));
        }
    }
    Ok(())
}

fn mean_score(values: impl Iterator<Item = (Score, f64)>) -> Score {
    let (mut sum, mut wsum, mut undefined) = (0.0, 0.0, false);
    for (s, w) in values {
        sum += s.value * w;
        wsum += w;
        undefined |= s.undefined;
    }
    Score { value: if wsum > 0.0 { sum / wsum } else { 0.0 }, undefined: undefined || wsum == 0.0 }
}

pub fn build_report(y_true: &[usize], probabilities: &[Vec<f64>], class_names: &[String]) -> Result<EvalReport> {
    build_report_with_beta(y_true, probabilities, class_names, 1.0)
}

pub fn build_report_with_beta(
    y_true: &[usize],
    probabilities: &[Vec<f64>],
    class_names: &[String],
    beta: f64,
) -> Result<EvalReport> {
    let k = class_names.len();
    check_inputs(y_true, probabilities, k)?;

    let mut ties = 0u64;
    let predictions: Vec<usize> = probabilities
        .iter()
        .map(|row| {
            let (p, tie) = argmax_with_tie(row);
            ties += u64::from(tie);
            p
        })
        .collect();
    if ties > 0 {
        log::info!("{ties} argmax ties resolved to the lowest class index");
    }

    let cm = ConfusionMatrix::from_predictions(y_true, &predictions, k)?;
    let tallies = binary_tallies(&cm);
    let n = cm.total();
    let mut per_class = Vec::with_capacity(k);
    let mut roc = Vec::with_capacity(k);
    for (c, t) in tallies.iter().enumerate() {
        let p = precision(t);
        let r = recall(t);
        let scores: Vec<f64> = probabilities.iter().map(|row| row[c]).collect();
        let positive: Vec<bool> = y_true.iter().map(|&y| y == c).collect();
        let curve = match roc_curve(&scores, &positive) {
            Ok(c) => Some(c),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        per_class.push(ClassMetrics {
            name: class_names[c].clone(),
            support: cm.row_sum(c),
            tally: *t,
            accuracy: accuracy(t)?,
            precision: p,
            recall: r,
            f_measure: f_measure_of(p, r, beta)?,
            auc: curve.as_ref().map(|c| c.auc),
        });
        roc.push(curve);
    }

    // Single-label predictions: ΣTP + ΣFP = ΣTP + ΣFN = N exactly.
    let tp: u64 = tallies.iter().map(|t| t.tp).sum();
    let fp: u64 = tallies.iter().map(|t| t.fp).sum();
    let fn_: u64 = tallies.iter().map(|t| t.fn_).sum();
    let micro_p = Score::defined(tp as f64 / (tp + fp) as f64);
    let micro_r = Score::defined(tp as f64 / (tp + fn_) as f64);
    let micro = Aggregate { precision: micro_p, recall: micro_r, f_measure: f_measure_of(micro_p, micro_r, beta)? };

    let aggregate = |weight: &dyn Fn(&ClassMetrics) -> f64| Aggregate {
        precision: mean_score(per_class.iter().map(|m| (m.precision, weight(m)))),
        recall: mean_score(per_class.iter().map(|m| (m.recall, weight(m)))),
        f_measure: mean_score(per_class.iter().map(|m| (m.f_measure, weight(m)))),
    };
    let macro_avg = aggregate(&|_| 1.0);
    let weighted = aggregate(&|m| m.support as f64);

    let micro_roc = match micro_average_roc(probabilities, y_true) {
        Ok(c) => Some(c),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };

    Ok(EvalReport {
        class_names: class_names.to_vec(),
        n,
        beta,
        accuracy: cm.trace() as f64 / n as f64,
        confusion_matrix: cm.counts().to_vec(),
        normalized_confusion: normalize_rows(&cm),
        per_class,
        micro,
        macro_avg,
        weighted,
        roc,
        micro_roc,
        predictions,
        argmax_ties: ties,
    })
}

fn fmt_score(s: Score) -> String {
    if s.undefined {
        format!("{:.4}*", s.value)
    } else {
        format!("{:.4}", s.value)
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write(path, self.to_json().as_bytes())
    }

    /// Headline block followed by per-class and averaged rows. Values marked
    /// `*` involve an undefined metric reported as zero.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Instances  {}", self.n);
        let _ = writeln!(s, "Accuracy   {:.4}", self.accuracy);
        let _ = writeln!(s, "Precision  {}", fmt_score(self.micro.precision));
        let _ = writeln!(s, "Recall     {}", fmt_score(self.micro.recall));
        let _ = writeln!(s, "F-measure  {}", fmt_score(self.micro.f_measure));
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}",
            "class", "accuracy", "precision", "recall", "f_measure", "auc", "support"
        );
        for m in &self.per_class {
            let auc = m.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                s,
                "{:<10} {:>9.4} {:>9} {:>9} {:>9} {:>9} {:>8}",
                m.name,
                m.accuracy,
                fmt_score(m.precision),
                fmt_score(m.recall),
                fmt_score(m.f_measure),
                auc,
                m.support
            );
        }
        for (name, a, auc) in [
            ("micro", &self.micro, self.micro_roc.as_ref().map(|c| c.auc)),
            ("macro", &self.macro_avg, None),
            ("weighted", &self.weighted, None),
        ] {
            let auc = auc.map_or(String::new(), |a| format!("{a:.4}"));
            let _ = writeln!(
                s,
                "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9}",
                name,
                "",
                fmt_score(a.precision),
                fmt_score(a.recall),
                fmt_score(a.f_measure),
                auc
            );
        }
        s
    }

    /// Raw and row-normalized counts, one line per true class.
    pub fn confusion_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true_class".to_string(), "kind".to_string()];
        header.extend(self.class_names.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (i, name) in self.class_names.iter().enumerate() {
            let mut rec = vec![name.clone(), "count".into()];
            rec.extend(self.confusion_matrix[i].iter().map(u64::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        for (i, name) in self.class_names.iter().enumerate() {
            let mut rec = vec![name.clone(), "normalized".into()];
            rec.extend(self.normalized_confusion.rows[i].iter().map(f64::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Every curve point, keyed by class name or `micro`.
    pub fn roc_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["curve", "fpr", "tpr", "threshold"]).expect("in-memory write");
        let named = self
            .class_names
            .iter()
            .map(String::as_str)
            .zip(self.roc.iter().map(Option::as_ref))
            .chain(std::iter::once(("micro", self.micro_roc.as_ref())));
        for (name, curve) in named {
            for p in curve.iter().flat_map(|c| &c.points) {
                let th = p.threshold.map_or("inf".to_string(), |t| t.to_string());
                w.write_record([name.to_string(), p.fpr.to_string(), p.tpr.to_string(), th])
                    .expect("in-memory write");
            }
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Scored predictions, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub class_names: Vec<String>,
    pub ids: Vec<String>,
    pub y_true: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

impl PredictionTable {
    /// Columns: `id,true_class,predicted_class,p_<class>...`.
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "true_class".into(), "predicted_class".into()];
        header.extend(self.class_names.iter().map(|c| format!("p_{c}")));
        w.write_record(&header).expect("in-memory write");
        for ((id, &t), row) in self.ids.iter().zip(&self.y_true).zip(&self.probabilities) {
            let (pred, _) = argmax_with_tie(row);
            let mut rec = vec![id.clone(), self.class_names[t].clone(), self.class_names[pred].clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write(path, &self.to_csv_bytes())
    }

    /// Reads the `true_class` and `p_<class>` columns; others are ignored.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
        let truth_col = header
            .iter()
            .position(|h| h == "true_class")
            .ok_or_else(|| Error::csv(path, "missing `true_class` column"))?;
        let id_col = header.iter().position(|h| h == "id");
        let prob_cols: Vec<(usize, String)> = header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix("p_").map(|c| (i, c.to_string())))
            .collect();
        if prob_cols.len() < 2 {
            return Err(Error::csv(path, "need at least two `p_<class>` columns"));
        }
        let class_names: Vec<String> = prob_cols.iter().map(|(_, c)| c.clone()).collect();
        let mut t = PredictionTable { class_names, ids: vec![], y_true: vec![], probabilities: vec![] };
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let row = line + 2;
            let truth = &rec[truth_col];
            let y = t
                .class_names
                .iter()
                .position(|c| c == truth)
                .ok_or_else(|| Error::csv(path, format!("row {row}: unknown class `{truth}`")))?;
            let probs = prob_cols
                .iter()
                .map(|(i, _)| {
                    rec[*i].parse::<f64>().map_err(|_| Error::csv(path, format!("row {row}: bad probability `{}`", &rec[*i])))
                })
                .collect::<Result<Vec<_>>>()?;
            t.ids.push(id_col.map_or_else(|| line.to_string(), |c| rec[c].to_string()));
            t.y_true.push(y);
            t.probabilities.push(probs);
        }
        Ok(t)
    }

    pub fn report(&self) -> Result<EvalReport> {
        build_report(&self.y_true, &self.probabilities, &self.class_names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn names() -> Vec<String> {
        ["high", "medium", "low"].map(String::from).to_vec()
    }

    fn one_hot(c: usize) -> Vec<f64> {
        let mut v = vec![0.0; 3];
        v[c] = 1.0;
        v
    }

    /// 360 high, 206 medium (one predicted low), 87 low.
    fn golden() -> (Vec<usize>, Vec<Vec<f64>>) {
        let mut y = vec![0; 360];
        y.extend(vec![1; 206]);
        y.extend(vec![2; 87]);
        let mut probs: Vec<Vec<f64>> = y.iter().map(|&c| one_hot(c)).collect();
        probs[360] = vec![0.0, 0.4, 0.6];
        (y, probs)
    }

    #[test]
    fn golden_report() {
        let (y, p) = golden();
        let r = build_report(&y, &p, &names()).unwrap();
        assert_eq!(r.confusion_matrix, vec![vec![360, 0, 0], vec![0, 205, 1], vec![0, 0, 87]]);
        assert_eq!(r.micro.precision.value, 652.0 / 653.0);
        assert_eq!(r.micro.recall.value, 652.0 / 653.0);
        assert_eq!(r.accuracy, r.micro.precision.value);
        assert_eq!(format!("{:.4}", r.micro.precision.value), "0.9985");
        // Weighted F from per-class F values 1, 410/411, 174/175.
        let expected = (360.0 + 206.0 * (410.0 / 411.0) + 87.0 * (174.0 / 175.0)) / 653.0;
        assert!((r.weighted.f_measure.value - expected).abs() < 1e-12);
        assert!((r.weighted.f_measure.value - 0.99847).abs() < 1e-5);
        // Macro precision differs from the micro value.
        assert!((r.macro_avg.precision.value - (2.0 + 87.0 / 88.0) / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class[2].precision.value, 87.0 / 88.0);
        assert_eq!(r.per_class[1].recall.value, 205.0 / 206.0);
        assert_eq!(r.argmax_ties, 0);
        assert!(r.summary().contains("Precision  0.9985"));
    }

    #[test]
    fn perfect_classifier_and_ties() {
        let y = vec![0, 1, 2, 0];
        let p: Vec<Vec<f64>> = y.iter().map(|&c| one_hot(c)).collect();
        let r = build_report(&y, &p, &names()).unwrap();
        assert_eq!(r.micro.f_measure.value, 1.0);
        assert!(r.per_class.iter().all(|m| m.auc == Some(1.0)));
        assert_eq!(r.micro_roc.as_ref().unwrap().auc, 1.0);

        let tied = vec![vec![0.5, 0.5, 0.0], vec![0.2, 0.4, 0.4]];
        let r = build_report(&[1, 2], &tied, &names()).unwrap();
        assert_eq!(r.predictions, vec![0, 1]);
        assert_eq!(r.argmax_ties, 2);
        assert!(r.per_class[0].precision.value == 0.0);
        assert!(r.per_class[2].precision.undefined);
        assert!(r.macro_avg.precision.undefined);
        assert!(r.roc[0].is_none());
    }

    #[test]
    fn near_perfect_scorer_aucs() {
        let (y, _) = golden();
        let mut rng = seed::rng(7, "scorer", &[]);
        let mut p: Vec<Vec<f64>> = y
            .iter()
            .map(|&c| {
                let mut v: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.1)).collect();
                v[c] += 0.8;
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        // One inversion: a medium instance scored as low.
        p[400] = vec![0.05, 0.15, 0.8];
        let r = build_report(&y, &p, &names()).unwrap();
        for m in &r.per_class {
            assert!(m.auc.unwrap() >= 0.999, "{}: {:?}", m.name, m.auc);
        }
    }

    #[test]
    fn input_validation() {
        let n = names();
        assert!(build_report(&[0], &[vec![0.5, 0.6, 0.0]], &n).is_err());
        assert!(build_report(&[0], &[vec![0.5, 0.5]], &n).is_err());
        assert!(build_report(&[0, 1], &[vec![1.0, 0.0, 0.0]], &n).is_err());
        assert!(build_report(&[3], &[vec![1.0, 0.0, 0.0]], &n).is_err());
        assert!(build_report(&[], &[], &n).is_err());
        assert!(build_report(&[0], &[vec![1.0 + 5e-7, 0.0, 0.0]], &n).is_ok());
    }

    #[test]
    fn outputs_round_trip() {
        let (y, p) = golden();
        let table = PredictionTable {
            class_names: names(),
            ids: (0..y.len()).map(|i| format!("img{i}")).collect(),
            y_true: y,
            probabilities: p,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.csv");
        table.write_csv(&path).unwrap();
        let back = PredictionTable::read_csv(&path).unwrap();
        assert_eq!(back, table);
        let r = back.report().unwrap();

        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["confusion_matrix"][1][2], 1);
        assert_eq!(json["per_class"][0]["tally"]["tn"], 293);
        assert!(json["roc"][0]["points"].is_array());
        let again: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(again.confusion_matrix, r.confusion_matrix);

        let cm = String::from_utf8(r.confusion_csv()).unwrap();
        assert!(cm.starts_with("true_class,kind,high,medium,low\nhigh,count,360,0,0\n"));
        let roc = String::from_utf8(r.roc_csv()).unwrap();
        assert!(roc.starts_with("curve,fpr,tpr,threshold\nhigh,0,0,inf\n"));
        assert!(roc.contains("\nmicro,"));
    }
}
