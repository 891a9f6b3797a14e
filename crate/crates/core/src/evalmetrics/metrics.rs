use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::param("counts", "confusion matrix must be square and non-empty"));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::param(
                "y_pred",
                format!("{} predictions for {} labels", y_pred.len(), y_true.len()),
            ));
        }
        if k == 0 {
            return Err(Error::param("k", "must be > 0"));
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
            if t >= k || p >= k {
                return Err(Error::param("labels", format!("item {i} has class outside 0..{k}")));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMatrix {
    pub rows: Vec<Vec<f64>>,
    /// Rows with no instances, left as zeros.
    pub empty_rows: Vec<bool>,
}

pub fn normalize_rows(cm: &ConfusionMatrix) -> NormalizedMatrix {
    let mut rows = Vec::with_capacity(cm.k());
    let mut empty_rows = Vec::with_capacity(cm.k());
    for (i, r) in cm.counts().iter().enumerate() {
        let s = cm.row_sum(i);
        empty_rows.push(s == 0);
        rows.push(r.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect());
    }
    NormalizedMatrix { rows, empty_rows }
}

/// One-vs-rest outcome counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryTally {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryTally {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn binary_tallies(cm: &ConfusionMatrix) -> Vec<BinaryTally> {
    let n = cm.total();
    (0..cm.k())
        .map(|i| {
            let tp = cm.get(i, i);
            let fn_ = cm.row_sum(i) - tp;
            let fp = cm.col_sum(i) - tp;
            BinaryTally { tp, fp, fn_, tn: n - tp - fn_ - fp }
        })
        .collect()
}

/// A metric value; `undefined` marks a zero denominator, in which case
/// `value` is the conventional fallback of 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub undefined: bool,
}

impl Score {
    pub fn defined(value: f64) -> Self {
        Self { value, undefined: false }
    }

    pub fn undefined() -> Self {
        Self { value: 0.0, undefined: true }
    }

    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self::undefined()
        } else {
            Self::defined(num as f64 / den as f64)
        }
    }
}

/// `(TP + TN) / N`.
pub fn accuracy(t: &BinaryTally) -> Result<f64> {
    match t.total() {
        0 => Err(Error::UndefinedMetric("accuracy of an empty tally".into())),
        n => Ok((t.tp + t.tn) as f64 / n as f64),
    }
}

pub fn precision(t: &BinaryTally) -> Score {
    Score::ratio(t.tp, t.tp + t.fp)
}

pub fn recall(t: &BinaryTally) -> Score {
    Score::ratio(t.tp, t.tp + t.fn_)
}

/// `(1 + β²)·P·R / (β²·P + R)`.
pub fn f_measure(precision: f64, recall: f64, beta: f64) -> Result<Score> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param("beta", format!("{beta} is not > 0")));
    }
    for (field, v) in [("precision", precision), ("recall", recall)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::param(field, format!("{v} not in [0, 1]")));
        }
    }
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        return Ok(Score::undefined());
    }
    Ok(Score::defined((1.0 + b2) * precision * recall / den))
}

/// F-measure of two scores, undefined if either input is.
pub fn f_measure_of(p: Score, r: Score, beta: f64) -> Result<Score> {
    if p.undefined || r.undefined {
        return Ok(Score::undefined());
    }
    f_measure(p.value, r.value, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn golden() -> ConfusionMatrix {
        ConfusionMatrix::from_counts(vec![vec![360, 0, 0], vec![0, 205, 1], vec![0, 0, 87]]).unwrap()
    }

    #[test]
    fn counting() {
        let cm = ConfusionMatrix::from_predictions(&[0, 0, 1], &[0, 0, 2], 3).unwrap();
        assert_eq!(cm.counts(), [vec![2, 0, 0], vec![0, 0, 1], vec![0, 0, 0]]);
        let diag = ConfusionMatrix::from_predictions(&[0, 1, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(diag.counts(), [vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert!(ConfusionMatrix::from_predictions(&[0, 3], &[0, 0], 3).is_err());
        assert!(ConfusionMatrix::from_predictions(&[0], &[0, 0], 3).is_err());
    }

    #[test]
    fn normalization() {
        let cm = ConfusionMatrix::from_counts(vec![vec![2, 0], vec![1, 1]]).unwrap();
        assert_eq!(normalize_rows(&cm).rows, [vec![1.0, 0.0], vec![0.5, 0.5]]);
        let n = normalize_rows(&golden());
        assert_eq!(n.rows[1], vec![0.0, 205.0 / 206.0, 1.0 / 206.0]);
        assert_eq!(format!("{:.2} {:.2}", n.rows[1][1], n.rows[1][2]), "1.00 0.00");
        let z = ConfusionMatrix::from_counts(vec![vec![0, 0], vec![0, 3]]).unwrap();
        let n = normalize_rows(&z);
        assert_eq!(n.rows[0], vec![0.0, 0.0]);
        assert_eq!(n.empty_rows, vec![true, false]);
    }

    #[test]
    fn golden_tallies_and_metrics() {
        let t = binary_tallies(&golden());
        assert_eq!(t[0], BinaryTally { tp: 360, fp: 0, fn_: 0, tn: 293 });
        assert_eq!(t[2], BinaryTally { tp: 87, fp: 1, fn_: 0, tn: 565 });
        assert_eq!(accuracy(&t[1]).unwrap(), 652.0 / 653.0);
        assert_eq!(precision(&t[2]).value, 87.0 / 88.0);
        assert_eq!(recall(&t[2]).value, 1.0);
        assert_eq!(precision(&t[1]).value, 1.0);
        assert_eq!(recall(&t[1]).value, 205.0 / 206.0);

        let id = binary_tallies(&ConfusionMatrix::from_counts(vec![vec![1, 0], vec![0, 1]]).unwrap());
        assert_eq!(id[0], BinaryTally { tp: 1, fp: 0, fn_: 0, tn: 1 });
    }

    #[test]
    fn scalar_metric_examples() {
        assert_eq!(accuracy(&BinaryTally { tp: 5, tn: 3, fp: 1, fn_: 1 }).unwrap(), 0.8);
        assert_eq!(accuracy(&BinaryTally { tp: 4, tn: 6, fp: 0, fn_: 0 }).unwrap(), 1.0);
        assert!(matches!(
            accuracy(&BinaryTally { tp: 0, tn: 0, fp: 0, fn_: 0 }),
            Err(Error::UndefinedMetric(_))
        ));
        let p = precision(&BinaryTally { tp: 0, fp: 0, fn_: 2, tn: 5 });
        assert!(p.undefined && p.value == 0.0);

        assert_eq!(f_measure(1.0, 1.0, 1.0).unwrap().value, 1.0);
        assert_eq!(f_measure(0.5, 0.5, 1.0).unwrap().value, 0.5);
        assert!((f_measure(0.75, 0.6, 1.0).unwrap().value - 2.0 * 0.45 / 1.35).abs() < 1e-15);
        assert!(f_measure(0.0, 0.0, 1.0).unwrap().undefined);
        assert!(f_measure(0.5, 0.5, 0.0).is_err());
        assert!(f_measure(1.5, 0.5, 1.0).is_err());
        // β weights recall: with β=2 and P=1, R=0.5 → 5·0.5/(4+0.5)
        assert!((f_measure(1.0, 0.5, 2.0).unwrap().value - 2.5 / 4.5).abs() < 1e-15);
    }

    fn square(k: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
        proptest::collection::vec(proptest::collection::vec(0u64..50, k), k)
    }

    proptest! {
        #[test]
        fn tally_sums(counts in (1usize..6).prop_flat_map(square)) {
            let cm = ConfusionMatrix::from_counts(counts).unwrap();
            let t = binary_tallies(&cm);
            let n = cm.total();
            prop_assert_eq!(t.iter().map(|x| x.tp).sum::<u64>(), cm.trace());
            prop_assert_eq!(t.iter().map(|x| x.fp).sum::<u64>(), n - cm.trace());
            prop_assert_eq!(t.iter().map(|x| x.fn_).sum::<u64>(), n - cm.trace());
            let norm = normalize_rows(&cm);
            for (row, empty) in norm.rows.iter().zip(&norm.empty_rows) {
                if !empty {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn f_symmetric_at_beta_one(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let a = f_measure(p, r, 1.0).unwrap();
            let b = f_measure(r, p, 1.0).unwrap();
            prop_assert_eq!(a.undefined, b.undefined);
            prop_assert!((a.value - b.value).abs() <= 1e-15);
        }
    }
}
