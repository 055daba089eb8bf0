use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::data::ImageProvider;
use super::features::{scan_set, FeatureSet};
use crate::error::{Error, Result};
use crate::eval::{roc_curve, roc_to_csv, confusion_metrics, scores_to_csv, write_text, ConfusionMetrics, RocResult, ScoredSample};
use crate::nn::{Model, Tensor};
use crate::patch::{to_network_input, PatchSample, PatchSpec};
use crate::scan::{classify_feature_map, max_heatmap, sweep_window, ScanGeometry};
use crate::synth::Category;

/// Per-image scores with the ROC and thresholded metrics derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scores: Vec<ScoredSample>,
    pub roc: RocResult,
    pub metrics: ConfusionMetrics,
    pub threshold: f64,
}

impl Evaluation {
    pub fn from_scores(scores: Vec<ScoredSample>, threshold: f64) -> Result<Self> {
        let roc = roc_curve(&scores)?;
        let metrics = confusion_metrics(&scores, threshold);
        Ok(Evaluation {
            scores,
            roc,
            metrics,
            threshold,
        })
    }

    /// `key=value` summary: AUC, threshold, the four rates and the counts.
    pub fn metrics_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "auc={:.6}", self.roc.auc);
        let _ = writeln!(s, "threshold={}", self.threshold);
        s.push_str(&self.metrics.to_text());
        s
    }

    /// Writes `<prefix>scores.csv`, `<prefix>roc.csv` and
    /// `<prefix>metrics.txt` into `dir`.
    pub fn write_reports(&self, dir: &Path, prefix: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join(format!("{prefix}scores.csv")), &scores_to_csv(&self.scores))?;
        write_text(&dir.join(format!("{prefix}roc.csv")), &roc_to_csv(&self.roc))?;
        write_text(&dir.join(format!("{prefix}metrics.txt")), &self.metrics_text())
    }
}

/// Scores every feature map with the second CNN; `K` is the positive class.
pub fn score_features(features: &FeatureSet, second: &Model<f32>) -> Result<Vec<ScoredSample>> {
    features
        .maps
        .par_iter()
        .zip(features.ids.par_iter().zip(&features.categories))
        .map(|(fm, (id, &cat))| Ok(ScoredSample::new(id.clone(), classify_feature_map(fm, second)?, cat == Category::K)))
        .collect()
}

pub fn evaluate_end_to_end(features: &FeatureSet, second: &Model<f32>, threshold: f64) -> Result<Evaluation> {
    Evaluation::from_scores(score_features(features, second)?, threshold)
}

/// Scans every provider image with the first CNN and scores the maps with
/// the second.
pub fn evaluate_images(
    provider: &dyn ImageProvider,
    first: &Model<f32>,
    second: &Model<f32>,
    geom: &ScanGeometry,
    threshold: f64,
) -> Result<Evaluation> {
    let features = scan_set(provider, first, geom, |_, _| {})?;
    evaluate_end_to_end(&features, second, threshold)
}

fn k_index(model: &Model<f32>) -> Result<usize> {
    model
        .category_index("K")
        .ok_or_else(|| Error::Param(format!("model has no K category: {:?}", model.categories())))
}

/// First-CNN `P(K)` for small images; patches labeled `K` are positive.
pub fn small_image_scores(model: &Model<f32>, samples: &[PatchSample], spec: &PatchSpec) -> Result<Vec<ScoredSample>> {
    let k = k_index(model)?;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let x = Tensor::from_image(&to_network_input(p, spec)?);
            let score = model.forward(&x)?[k] as f64;
            Ok(ScoredSample::new(format!("{i:05}-{}", p.case_id), score, p.label == "K"))
        })
        .collect()
}

/// Orientation response of upright patches: `P(K)` at 0°, 90°, 180° and
/// 270°.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationCheck {
    pub responses: Vec<[f32; 4]>,
}

impl OrientationCheck {
    /// Both upright angles score above both sideways angles.
    pub fn passes(r: &[f32; 4]) -> bool {
        let side = r[1].max(r[3]);
        r[0] > side && r[2] > side
    }

    pub fn passed(&self) -> usize {
        self.responses.iter().filter(|r| Self::passes(r)).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.responses.is_empty() {
            return 0.0;
        }
        self.passed() as f64 / self.responses.len() as f64
    }
}

/// Rotation sweep of every `K` patch in `samples`.
pub fn orientation_check(model: &Model<f32>, samples: &[PatchSample], spec: &PatchSpec) -> Result<OrientationCheck> {
    let k = k_index(model)?;
    let responses = samples
        .par_iter()
        .filter(|p| p.label == "K")
        .map(|p| {
            let x = to_network_input(p, spec)?;
            let probs = sweep_window(&x, model, &[0.0, 90.0, 180.0, 270.0])?;
            Ok([probs[0][k], probs[1][k], probs[2][k], probs[3][k]])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OrientationCheck { responses })
}

/// Mean over images of the peak `K` value of each max-over-angle heatmap.
pub fn mean_peak_k(features: &FeatureSet, model: &Model<f32>) -> Result<f64> {
    let k = k_index(model)?;
    if features.is_empty() {
        return Err(Error::Evaluation("no feature maps".into()));
    }
    let mut sum = 0.0;
    for fm in &features.maps {
        sum += max_heatmap(fm, k)?.max() as f64;
    }
    Ok(sum / features.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::scores_from_csv;
    use crate::nn::LayerConfig;
    use crate::scan::FeatureMap4D;

    /// Second model whose K logit is the mean K probability of the map.
    fn mean_k_model(dims: [usize; 4]) -> Model<f32> {
        let [a, r, c, k] = dims;
        let layers = vec![LayerConfig::GlobalAvgPool, LayerConfig::Dense { units: 2 }, LayerConfig::Softmax];
        let mut m = Model::new([r, c, a * k], layers, vec!["K".into(), "N".into()]).unwrap();
        let p = m.params_mut()[1].as_mut().unwrap();
        p.weight.data_mut().fill(0.0);
        for ai in 0..a {
            p.weight.data_mut()[(ai * k) * 2] = 20.0 / a as f32;
        }
        p.bias.data_mut().copy_from_slice(&[0.0, 10.0]);
        m
    }

    fn map(k_prob: f32) -> FeatureMap4D {
        let mut fm = FeatureMap4D::zeros(2, 2, 3, 3);
        for a in 0..2 {
            for r in 0..2 {
                for c in 0..3 {
                    fm.set(a, r, c, 0, k_prob);
                    fm.set(a, r, c, 2, 1.0 - k_prob);
                }
            }
        }
        fm
    }

    fn toy_features() -> FeatureSet {
        let mut fs = FeatureSet::default();
        for i in 0..6 {
            fs.push(format!("k{i}"), Category::K, format!("K-{i}"), map(0.8 + 0.02 * i as f32));
            fs.push(format!("s{i}"), Category::S, format!("S-{i}"), map(0.05 * i as f32));
        }
        fs
    }

    #[test]
    fn perfect_separation_gives_unit_auc() {
        let fs = toy_features();
        let ev = evaluate_end_to_end(&fs, &mean_k_model(fs.dims().unwrap()), 0.5).unwrap();
        assert_eq!(ev.roc.auc, 1.0);
        assert_eq!(ev.metrics.tp, 6);
        assert_eq!(ev.metrics.tn, 6);
        assert!(ev.metrics_text().starts_with("auc=1.000000\nthreshold=0.5\naccuracy=1.000\n"));
    }

    #[test]
    fn reports_recompute_to_the_same_metrics() {
        let mut fs = toy_features();
        fs.maps[0] = map(0.3);
        let ev = evaluate_end_to_end(&fs, &mean_k_model(fs.dims().unwrap()), 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ev.write_reports(dir.path(), "").unwrap();
        let text = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        let back = scores_from_csv(&text).unwrap();
        let again = Evaluation::from_scores(back, 0.5).unwrap();
        assert_eq!(again.metrics_text(), ev.metrics_text());
        assert_eq!(std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap(), ev.metrics_text());
        assert!(dir.path().join("roc.csv").exists());
    }

    #[test]
    fn orientation_pass_rule() {
        assert!(OrientationCheck::passes(&[0.9, 0.1, 0.8, 0.2]));
        assert!(!OrientationCheck::passes(&[0.9, 0.1, 0.15, 0.2]));
        assert!(!OrientationCheck::passes(&[0.5, 0.5, 0.9, 0.1]));
        let c = OrientationCheck {
            responses: vec![[0.9, 0.1, 0.8, 0.2], [0.1, 0.9, 0.1, 0.9]],
        };
        assert_eq!(c.passed(), 1);
        assert_eq!(c.fraction(), 0.5);
    }

    #[test]
    fn peak_k_mean() {
        let mut fs = toy_features();
        fs.maps[1].set(1, 0, 2, 0, 0.9);
        let layers = vec![LayerConfig::GlobalAvgPool, LayerConfig::Dense { units: 3 }, LayerConfig::Softmax];
        let m = Model::new([4, 4, 3], layers, vec!["K".into(), "N".into(), "S".into()]).unwrap();
        let peaks = (0..6).flat_map(|i| {
            let s = if i == 0 { 0.9 } else { 0.05 * i as f32 };
            [0.8 + 0.02 * i as f32, s]
        });
        let want = peaks.map(|v| v as f64).sum::<f64>() / 12.0;
        assert!((mean_peak_k(&fs, &m).unwrap() - want).abs() < 1e-9);
    }
}
