//! ROC curves, AUC and thresholded confusion metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub id: String,
    pub score: f64,
    pub positive: bool,
}

impl ScoredSample {
    pub fn new(id: impl Into<String>, score: f64, positive: bool) -> Self {
        ScoredSample {
            id: id.into(),
            score,
            positive,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocResult {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn class_counts(samples: &[ScoredSample]) -> Result<(u64, u64)> {
    for s in samples {
        if !s.score.is_finite() {
            return Err(Error::Evaluation(format!("non-finite score for {:?}", s.id)));
        }
    }
    let pos = samples.iter().filter(|s| s.positive).count() as u64;
    let neg = samples.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Sweeps thresholds over the distinct scores in descending order, one ROC
/// point per tie group, and integrates with the trapezoid rule. The area is
/// accumulated in integer counts, so it is exact up to the final division.
pub fn roc_curve(samples: &[ScoredSample]) -> Result<RocResult> {
    let (pos, neg) = class_counts(samples)?;
    let mut order: Vec<&ScoredSample> = samples.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let (prev_tp, prev_fp) = (tp, fp);
        let score = order[i].score;
        while i < order.len() && order[i].score == score {
            if order[i].positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = twice_area as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocResult { points, auc })
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half.
pub fn auc_pairwise(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_counts(samples)?;
    let mut twice_wins: u128 = 0;
    for p in samples.iter().filter(|s| s.positive) {
        for n in samples.iter().filter(|s| !s.positive) {
            if p.score > n.score {
                twice_wins += 2;
            } else if p.score == n.score {
                twice_wins += 1;
            }
        }
    }
    Ok(twice_wins as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Counts and rates at one threshold; a rate with a zero denominator is
/// `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMetrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        ConfusionMetrics {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            recall: ratio(tp, tp + fn_),
            precision: ratio(tp, tp + fp),
            specificity: ratio(tn, tn + fp),
        }
    }

    /// The four rates at three decimals, `undefined` where absent.
    pub fn rounded(&self) -> [String; 4] {
        [self.accuracy, self.recall, self.precision, self.specificity].map(fmt3)
    }

    /// Flat `key=value` block.
    pub fn to_text(&self) -> String {
        let r = self.rounded();
        let mut s = String::new();
        for (k, v) in ["accuracy", "recall", "precision", "specificity"].iter().zip(&r) {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "tp={}\nfp={}\ntn={}\nfn={}", self.tp, self.fp, self.tn, self.fn_);
        s
    }
}

pub fn fmt3(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.3}"),
        None => "undefined".to_string(),
    }
}

/// A score at or above `threshold` predicts positive.
pub fn confusion_metrics(samples: &[ScoredSample], threshold: f64) -> ConfusionMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for s in samples {
        match (s.score >= threshold, s.positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    ConfusionMetrics::from_counts(tp, fp, tn, fn_)
}

/// Every `(tp, fp)` with `positives`/`negatives` fixed whose rounded rates
/// equal `target` (accuracy, recall, precision, specificity).
pub fn counts_matching(positives: usize, negatives: usize, target: [&str; 4]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for tp in 0..=positives {
        for fp in 0..=negatives {
            let m = ConfusionMetrics::from_counts(tp, fp, negatives - fp, positives - tp);
            if m.rounded().iter().zip(target).all(|(a, b)| a == b) {
                out.push((tp, fp));
            }
        }
    }
    out
}

/// `id,score,label` with label `pos` or `neg`.
pub fn scores_to_csv(samples: &[ScoredSample]) -> String {
    let mut s = String::from("id,score,label\n");
    for x in samples {
        let label = if x.positive { "pos" } else { "neg" };
        let _ = writeln!(s, "{},{:.9},{label}", x.id, x.score);
    }
    s
}

pub fn scores_from_csv(text: &str) -> Result<Vec<ScoredSample>> {
    let mut lines = text.lines();
    if lines.next() != Some("id,score,label") {
        return Err(Error::Format("scores CSV must start with id,score,label".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = || Error::Format(format!("scores CSV line {}: {line:?}", n + 2));
        let mut parts = line.rsplitn(3, ',');
        let label = parts.next().ok_or_else(bad)?;
        let score: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let id = parts.next().ok_or_else(bad)?;
        let positive = match label {
            "pos" => true,
            "neg" => false,
            _ => return Err(bad()),
        };
        out.push(ScoredSample::new(id, score, positive));
    }
    Ok(out)
}

/// `fpr,tpr` rows.
pub fn roc_to_csv(roc: &RocResult) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (f, t) in &roc.points {
        let _ = writeln!(s, "{f:.9},{t:.9}");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples(scores: &[(f64, bool)]) -> Vec<ScoredSample> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &(s, p))| ScoredSample::new(format!("s{i}"), s, p))
            .collect()
    }

    #[test]
    fn separated_scores_give_unit_auc() {
        let s = samples(&[(0.9, true), (0.8, true), (0.2, false), (0.1, false)]);
        let roc = roc_curve(&s).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));
        assert_eq!(auc_pairwise(&samples(&[(0.9, true), (0.1, false)])).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_half() {
        let s = samples(&[(0.5, true), (0.5, false), (0.5, true), (0.5, false)]);
        assert_eq!(roc_curve(&s).unwrap().auc, 0.5);
        assert_eq!(auc_pairwise(&s).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_evaluation_error() {
        let s = samples(&[(0.5, true), (0.4, true)]);
        assert!(matches!(roc_curve(&s), Err(Error::Evaluation(_))));
        assert!(matches!(auc_pairwise(&s), Err(Error::Evaluation(_))));
    }

    #[test]
    fn reconstructed_counts_are_unique_and_match() {
        let target = ["0.980", "0.980", "0.942", "0.980"];
        assert_eq!(counts_matching(50, 150, target), vec![(49, 3)]);
        let m = ConfusionMetrics::from_counts(49, 3, 147, 1);
        assert_eq!(m.rounded(), target.map(String::from));
        assert!((m.precision.unwrap() - 49.0 / 52.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_edge_cases() {
        let s = samples(&[(0.3, true), (0.2, false), (0.6, true)]);
        let m = confusion_metrics(&s, 0.9);
        assert_eq!(m.precision, None);
        assert_eq!(m.specificity, Some(1.0));
        assert!(m.to_text().contains("precision=undefined"));
        assert_eq!(confusion_metrics(&s, 0.0).recall, Some(1.0));
        // boundary counts as positive
        assert_eq!(confusion_metrics(&s, 0.6).tp, 1);
    }

    #[test]
    fn csv_round_trip() {
        let s = samples(&[(0.25, true), (0.75, false)]);
        assert_eq!(scores_from_csv(&scores_to_csv(&s)).unwrap(), s);
        assert!(scores_from_csv("id,score\n").is_err());
        let roc = roc_curve(&s).unwrap();
        assert!(roc_to_csv(&roc).starts_with("fpr,tpr\n0.000000000,0.000000000\n"));
    }

    fn instance() -> impl Strategy<Value = Vec<(f64, bool)>> {
        prop::collection::vec(((0u8..20).prop_map(|v| v as f64 / 19.0), any::<bool>()), 2..200)
            .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
    }

    proptest! {
        #[test]
        fn trapezoid_equals_pairwise(v in instance()) {
            let s = samples(&v);
            let a = roc_curve(&s).unwrap().auc;
            let b = auc_pairwise(&s).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn inverted_labels_mirror_auc(v in instance()) {
            let s = samples(&v);
            let flipped: Vec<_> = s.iter().map(|x| ScoredSample { positive: !x.positive, ..x.clone() }).collect();
            let a = roc_curve(&s).unwrap().auc;
            let b = roc_curve(&flipped).unwrap().auc;
            prop_assert!((a + b - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn monotone_transform_and_permutation_invariance(v in instance(), rot in 0usize..50) {
            let s = samples(&v);
            let squashed: Vec<_> = s.iter().map(|x| ScoredSample { score: x.score.powi(3) * 0.5 + 0.1, ..x.clone() }).collect();
            let mut perm = s.clone();
            let k = rot % perm.len();
            perm.rotate_left(k);
            let base = roc_curve(&s).unwrap();
            prop_assert_eq!(base.auc, roc_curve(&squashed).unwrap().auc);
            prop_assert_eq!(&base.points, &roc_curve(&perm).unwrap().points);
            for w in base.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }
    }
}
