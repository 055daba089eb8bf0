use std::fmt::Write as _;

use super::config::Variant;
use super::features::FeatureSet;
use super::split::{split_by_case, SplitPlan};
use crate::error::{Error, Result};
use crate::nn::{fit, Evaluation, LabeledSet, LayerConfig, Model, RunRecord, Tensor, TrainConfig};
use crate::patch::{PatchSample, PatchSpec};
use crate::scan::fold_for_second_cnn;
use crate::synth::{Category, DatasetManifest, ManifestRow};

/// Models and records of a multi-run training recipe.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model of the run with the highest best validation accuracy.
    pub model: Model<f32>,
    pub best_run: usize,
    pub models: Vec<Model<f32>>,
    pub records: Vec<RunRecord>,
    pub split: SplitPlan,
}

impl TrainOutcome {
    pub fn mean_best_accuracy(&self) -> f64 {
        self.records.iter().map(|r| r.best_val_accuracy).sum::<f64>() / self.records.len() as f64
    }

    pub fn mean_lowest_loss(&self) -> f64 {
        self.records.iter().map(|r| r.lowest_val_loss).sum::<f64>() / self.records.len() as f64
    }

    /// Per-run table with a trailing mean row. Wall-clock time is left out
    /// so the file is reproducible.
    pub fn records_csv(&self) -> String {
        let mut s = String::from("run,seed,epochs_run,best_val_accuracy,lowest_val_loss\n");
        for (i, r) in self.records.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{:.6},{:.6}", r.seed, r.epochs_run, r.best_val_accuracy, r.lowest_val_loss);
        }
        let _ = writeln!(s, "mean,,,{:.6},{:.6}", self.mean_best_accuracy(), self.mean_lowest_loss());
        s
    }
}

/// Shared protocol: `runs` seeded runs from fresh weights on one split,
/// keeping the run with the best validation accuracy (earliest on ties).
#[allow(clippy::too_many_arguments)]
pub fn train_runs(
    input_shape: [usize; 3],
    layers: &[LayerConfig],
    classes: &[String],
    train: &LabeledSet,
    val: &LabeledSet,
    split: SplitPlan,
    cfg: &TrainConfig,
    runs: usize,
    base_seed: u64,
    mut progress: impl FnMut(usize, usize, f64, &Evaluation),
) -> Result<TrainOutcome> {
    if runs == 0 {
        return Err(Error::Param("runs must be at least 1".into()));
    }
    let mut models = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for run in 0..runs {
        let seed = base_seed.wrapping_add(run as u64);
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let mut model = Model::<f32>::new(input_shape, layers.to_vec(), classes.to_vec())?;
        model.init_params(cfg.init, seed);
        match fit(&mut model, train, val, &cfg, |e, l, ev| progress(run, e, l, ev)) {
            Ok(rec) => {
                models.push(model);
                records.push(rec);
            }
            Err(e @ Error::Divergence { .. }) => failures.push(format!("run {run} (seed {seed}): {e}")),
            Err(e) => return Err(e),
        }
    }
    if records.is_empty() {
        return Err(Error::Training(format!("every run diverged: {}", failures.join("; "))));
    }
    let best_run = (0..records.len()).fold(0, |b, i| {
        if records[i].best_val_accuracy > records[b].best_val_accuracy {
            i
        } else {
            b
        }
    });
    Ok(TrainOutcome {
        model: models[best_run].clone(),
        best_run,
        models,
        records,
        split,
    })
}

/// Relabels patches for a variant, dropping classes it does not use.
pub fn apply_variant(samples: &[PatchSample], variant: Variant) -> Vec<PatchSample> {
    samples
        .iter()
        .filter_map(|p| {
            variant.map_label(&p.label).map(|l| PatchSample {
                label: l.to_string(),
                ..p.clone()
            })
        })
        .collect()
}

fn split_rows<'a>(rows: impl Iterator<Item = (&'a str, &'a str)>, ratio: usize, seed: u64) -> Result<SplitPlan> {
    let manifest = DatasetManifest {
        rows: rows
            .map(|(label, case)| ManifestRow {
                path: String::new(),
                label: label.to_string(),
                case_id: case.to_string(),
                mask_path: None,
                method: None,
            })
            .collect(),
    };
    split_by_case(&manifest, ratio, seed)
}

/// Split group of a case: its label plus the case id without a trailing
/// `-<digits>` index, so `cnn1-N-thick-003` and `cnn1-N-004` are split
/// separately although both are labeled `N`.
fn stratum(label: &str, case_id: &str) -> String {
    let stem = match case_id.rsplit_once('-') {
        Some((stem, idx)) if !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit()) => stem,
        _ => "",
    };
    format!("{label}/{stem}")
}

fn partition(set: &LabeledSet, cases: &[String], split: &SplitPlan) -> (LabeledSet, LabeledSet) {
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (i, c) in cases.iter().enumerate() {
        if split.is_validation(c) {
            va.push(i)
        } else {
            tr.push(i)
        }
    }
    (set.subset(&tr), set.subset(&va))
}

/// First-CNN recipe: relabel for `variant`, split by case at
/// `val_ratio : 1` within each source category, then train `runs` seeded
/// models.
#[allow(clippy::too_many_arguments)]
pub fn train_first_cnn(
    samples: &[PatchSample],
    variant: Variant,
    layers: &[LayerConfig],
    spec: &PatchSpec,
    cfg: &TrainConfig,
    runs: usize,
    val_ratio: usize,
    base_seed: u64,
    progress: impl FnMut(usize, usize, f64, &Evaluation),
) -> Result<TrainOutcome> {
    let relabeled = apply_variant(samples, variant);
    let classes = variant.classes();
    let strata: Vec<String> = relabeled.iter().map(|p| stratum(&p.label, &p.case_id)).collect();
    let split = split_rows(strata.iter().zip(&relabeled).map(|(s, p)| (s.as_str(), p.case_id.as_str())), val_ratio, base_seed)?;
    let (set, cases) = super::data::to_labeled(&relabeled, &classes, spec)?;
    let (train, val) = partition(&set, &cases, &split);
    train_runs(
        [spec.input, spec.input, 3],
        layers,
        &classes,
        &train,
        &val,
        split,
        cfg,
        runs,
        base_seed,
        progress,
    )
}

/// Second-stage class of a large image: `K` or `N` for everything else.
pub fn second_label(category: Category) -> &'static str {
    if category == Category::K {
        "K"
    } else {
        "N"
    }
}

/// Feature maps folded into second-CNN inputs, labeled `K` (0) or `N` (1).
pub fn feature_inputs(features: &FeatureSet) -> Result<LabeledSet> {
    let first = features
        .maps
        .first()
        .ok_or_else(|| Error::Training("empty feature set".into()))?;
    let t: Tensor<f32> = fold_for_second_cnn(first);
    let s = t.shape();
    let mut set = LabeledSet::floats([s[0], s[1], s[2]]);
    for (fm, &cat) in features.maps.iter().zip(&features.categories) {
        let label = usize::from(cat != Category::K);
        set.push(&fold_for_second_cnn(fm), label)?;
    }
    Ok(set)
}

/// Second-CNN recipe: binary `K`/`N` over folded feature maps, same
/// split and multi-run protocol as the first stage.
#[allow(clippy::too_many_arguments)]
pub fn train_second_cnn(
    features: &FeatureSet,
    layers: &[LayerConfig],
    cfg: &TrainConfig,
    runs: usize,
    val_ratio: usize,
    base_seed: u64,
    progress: impl FnMut(usize, usize, f64, &Evaluation),
) -> Result<TrainOutcome> {
    let dims = features.dims()?;
    let set = feature_inputs(features)?;
    let split = split_rows(
        features
            .categories
            .iter()
            .zip(&features.cases)
            .map(|(&c, case)| (c.as_str(), case.as_str())),
        val_ratio,
        base_seed,
    )?;
    let (train, val) = partition(&set, &features.cases, &split);
    let classes = vec!["K".to_string(), "N".to_string()];
    train_runs(
        [dims[1], dims[2], dims[0] * dims[3]],
        layers,
        &classes,
        &train,
        &val,
        split,
        cfg,
        runs,
        base_seed,
        progress,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::nn::arch;
    use crate::scan::FeatureMap4D;

    fn patch(label: &str, case: &str, shade: f32) -> PatchSample {
        PatchSample {
            image: Image::filled(16, 16, [shade, 0.5, 1.0 - shade]),
            label: label.into(),
            case_id: case.into(),
            source: String::new(),
            method: 1,
            orientation: 0.0,
        }
    }

    fn toy_patches() -> Vec<PatchSample> {
        let mut out = Vec::new();
        for c in 0..4 {
            for i in 0..6 {
                let j = (i as f32) * 0.02;
                out.push(patch("K", &format!("K-{c}"), 0.9 - j));
                out.push(patch("N", &format!("N-{c}"), 0.1 + j));
                out.push(patch("S", &format!("S-{c}"), 0.5 + j));
            }
        }
        out
    }

    fn toy_spec() -> PatchSpec {
        PatchSpec { side: 16, rescue: 20, input: 16, ..PatchSpec::desk() }
    }

    #[test]
    fn variant_relabeling() {
        let p = toy_patches();
        let kvs = apply_variant(&p, Variant::KvsNS);
        assert_eq!(kvs.len(), p.len());
        assert!(kvs.iter().all(|q| q.label == "K" || q.label == "N"));
        assert_eq!(apply_variant(&p, Variant::KN).len(), p.len() * 2 / 3);
    }

    #[test]
    fn three_runs_distinct_records_and_deterministic() {
        let layers = vec![
            LayerConfig::conv(3, 4),
            LayerConfig::Relu,
            LayerConfig::GlobalAvgPool,
            LayerConfig::Dense { units: 3 },
            LayerConfig::Softmax,
        ];
        let cfg = TrainConfig { max_epochs: 3, batch_size: 8, ..TrainConfig::default() };
        let run = || train_first_cnn(&toy_patches(), Variant::KNS, &layers, &toy_spec(), &cfg, 3, 3, 10, |_, _, _, _| {}).unwrap();
        let a = run();
        assert_eq!(a.records.len(), 3);
        let seeds: Vec<u64> = a.records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![10, 11, 12]);
        assert!(a.split.train.is_disjoint(&a.split.validation));
        let b = run();
        assert_eq!(a.model, b.model);
        assert!(a.records_csv().starts_with("run,seed,epochs_run,best_val_accuracy,lowest_val_loss\n0,10,"));
        assert!(a.records_csv().contains("\nmean,,,"));
    }

    #[test]
    fn second_cnn_zero_lr_gives_first_class_rate() {
        let mut fs = FeatureSet::default();
        for i in 0..12 {
            let cat = if i % 3 == 0 { Category::N } else { Category::K };
            fs.push(format!("m{i}"), cat, format!("{}-{}", cat.as_str(), i % 4), FeatureMap4D::zeros(2, 3, 4, 3));
        }
        let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 1, ..TrainConfig::default() };
        let out = train_second_cnn(&fs, &arch::second_cnn(2), &cfg, 1, 2, 1, |_, _, _, _| {}).unwrap();
        // constant inputs give equal scores; argmax falls to K, the majority
        let val: Vec<usize> = (0..12).filter(|&i| out.split.is_validation(&fs.cases[i])).collect();
        let k = val.iter().filter(|&&i| fs.categories[i] == Category::K).count();
        assert!((out.records[0].best_val_accuracy - k as f64 / val.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn validation_covers_every_source_category() {
        let mut p = toy_patches();
        for c in 0..4 {
            for i in 0..6 {
                p.push(patch("N", &format!("set-N-thick-{c:03}"), 0.3 + 0.01 * i as f32));
            }
        }
        let layers = vec![LayerConfig::GlobalAvgPool, LayerConfig::Dense { units: 3 }, LayerConfig::Softmax];
        let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default() };
        let out = train_first_cnn(&p, Variant::KNS, &layers, &toy_spec(), &cfg, 1, 20, 3, |_, _, _, _| {}).unwrap();
        let val = &out.split.validation;
        assert!(val.iter().any(|c| c.starts_with("set-N-thick-")), "{val:?}");
        assert!(val.iter().any(|c| c.starts_with("N-")), "{val:?}");
        assert_eq!(stratum("N", "cnn1-N-thick-003"), "N/cnn1-N-thick");
        assert_eq!(stratum("N", "case7"), "N/");
    }
}
