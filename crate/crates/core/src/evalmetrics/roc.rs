use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score at or above which instances are called positive; `None` for the
    /// initial point (threshold +∞).
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: u64,
    pub negatives: u64,
}

/// Threshold sweep over the distinct scores, highest first. Instances with
/// equal scores move together, so ties produce diagonal segments.
pub fn roc_curve(scores: &[f64], is_positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != is_positive.len() {
        return Err(Error::param("is_positive", "length must match scores"));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::param("scores", format!("NaN score at {i}")));
    }
    let positives = is_positive.iter().filter(|&&p| p).count() as u64;
    let negatives = is_positive.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC needs both classes ({positives} positive, {negatives} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: None }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if is_positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("starts with origin");
        let p = RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold: Some(s),
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc, positives, negatives })
}

/// Pools every (instance, class) pair into one binary problem.
pub fn micro_average_roc(probabilities: &[Vec<f64>], y_true: &[usize]) -> Result<RocCurve> {
    let mut scores = Vec::new();
    let mut positive = Vec::new();
    for (row, &t) in probabilities.iter().zip(y_true) {
        for (c, &p) in row.iter().enumerate() {
            scores.push(p);
            positive.push(c == t);
        }
    }
    roc_curve(&scores, &positive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    /// Probability a random positive outranks a random negative, ties half.
    fn pairwise_auc(scores: &[f64], pos: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn examples() {
        let c = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(c.auc, 1.0);
        let c = roc_curve(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!((c.points[1].fpr, c.points[1].tpr), (1.0, 1.0));
        assert_eq!(c.auc, 0.5);
        assert!(matches!(roc_curve(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn matches_pairwise_oracle() {
        for s in 0..20 {
            let mut rng = seed::rng(s, "roc", &[]);
            let n = 200;
            // Coarse scores force plenty of ties.
            let pos: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let scores: Vec<f64> = pos
                .iter()
                .map(|&p| ((rng.gen::<f64>() + if p { 0.3 } else { 0.0 }) * 20.0).round() / 20.0)
                .collect();
            let c = roc_curve(&scores, &pos).unwrap();
            assert!((c.auc - pairwise_auc(&scores, &pos)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn monotone_and_oracle(
            data in proptest::collection::vec((0u8..30, any::<bool>()), 2..500)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| f64::from(d.0) / 7.0).collect();
            let pos: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
            let c = roc_curve(&scores, &pos).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            let last = c.points.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            prop_assert!((0.0..=1.0).contains(&c.auc));
            prop_assert!((c.auc - pairwise_auc(&scores, &pos)).abs() < 1e-9);
        }

        #[test]
        fn negated_scores_flip_auc(
            data in proptest::collection::vec((any::<u32>(), any::<bool>()), 2..300)
        ) {
            let mut seen = std::collections::HashSet::new();
            let data: Vec<_> = data.into_iter().filter(|d| seen.insert(d.0)).collect();
            let pos: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
            let s: Vec<f64> = data.iter().map(|d| f64::from(d.0)).collect();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let a = roc_curve(&s, &pos).unwrap().auc;
            let b = roc_curve(&neg, &pos).unwrap().auc;
            prop_assert!((a + b - 1.0).abs() < 1e-9);
        }
    }
}
