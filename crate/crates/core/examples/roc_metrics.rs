//! ROC curve, AUC and thresholded metrics from a set of scores.

use keratoscan::eval::{auc_pairwise, confusion_metrics, counts_matching, roc_curve, roc_to_csv, ScoredSample};

fn main() -> keratoscan::Result<()> {
    // 50 positives and 150 negatives with one missed positive and three
    // false alarms
    let mut scores = Vec::new();
    for i in 0..50 {
        scores.push(ScoredSample::new(format!("pos{i}"), if i == 0 { 0.3 } else { 0.6 + 0.008 * i as f64 }, true));
    }
    for i in 0..150 {
        scores.push(ScoredSample::new(format!("neg{i}"), if i < 3 { 0.7 } else { 0.002 * i as f64 }, false));
    }
    let roc = roc_curve(&scores)?;
    println!("AUC {:.6} (pairwise {:.6})", roc.auc, auc_pairwise(&scores)?);
    print!("{}", confusion_metrics(&scores, 0.5).to_text());
    println!("ROC has {} points; first rows:", roc.points.len());
    for line in roc_to_csv(&roc).lines().take(4) {
        println!("  {line}");
    }
    let target = ["0.980", "0.980", "0.942", "0.980"];
    println!("(TP, FP) counts giving {target:?}: {:?}", counts_matching(50, 150, target));
    Ok(())
}
