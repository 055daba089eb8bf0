use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, Variant};
use super::data::{harvest_patches, load_patch_set, DiskSet, PatchMethod, SynthSet};
use super::evaluate::{evaluate_end_to_end, orientation_check, small_image_scores, Evaluation};
use super::features::{build_feature_dataset, load_feature_set};
use super::recipes::{train_first_cnn, train_second_cnn, TrainOutcome};
use crate::error::{Error, Result};
use crate::eval::{scores_from_csv, write_text};
use crate::image::{resize_bilinear, Image};
use crate::introspect::{
    activation_overlay, dead_filters, filter_landscape, filter_statistics, filter_statistics_csv,
    gradient_ascent_preimage, last_conv_layer, Overlay, Preimage, ZERO_TOLERANCE,
};
use crate::nn::{load_weights, save_weights, Model};
use crate::patch::{save_patch_set, to_network_input};
use crate::scan::{prepare_scan_image, scan_image, FeatureMap4D, ScanGeometry};
use crate::synth::build_synth_dataset;

/// Progress sink; the command-line front end prints to stderr.
pub type Log<'a> = &'a dyn Fn(&str);

/// Fixed layout of one experiment's outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data(&self, set: &str) -> PathBuf {
        self.root.join("data").join(set)
    }

    pub fn train_patches(&self, method: PatchMethod) -> PathBuf {
        self.root.join("patches").join(format!("method{}", method.number())).join("train")
    }

    pub fn test_patches(&self) -> PathBuf {
        self.root.join("patches").join("test")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    /// `cnn1-<variant tag>-m<method>`.
    pub fn first_stem(variant: Variant, method: PatchMethod) -> String {
        format!("cnn1-{}-m{}", variant.tag(), method.number())
    }

    pub fn first_model(&self, variant: Variant, method: PatchMethod) -> PathBuf {
        self.models().join(format!("{}.kcnn", Self::first_stem(variant, method)))
    }

    pub fn second_model(&self) -> PathBuf {
        self.models().join("cnn2.kcnn")
    }

    pub fn fmaps(&self, set: &str) -> PathBuf {
        self.root.join("fmaps").join(set)
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Renders the three case-disjoint image sets (`cnn1`, `cnn2`, `test`) and
/// writes the canonical config, pointing at its own directory, into the
/// run root.
pub fn gen_data(cfg: &ExperimentConfig, run: &RunDir, log: Log) -> Result<()> {
    mkdir(run.root())?;
    let mut saved = cfg.clone();
    saved.data.run_dir = PathBuf::from(".");
    write_text(&run.root().join("config.cfg"), &saved.to_text())?;
    let spec = cfg.patch_spec();
    let d = &cfg.data;
    for (set, plan) in [("cnn1", &d.cnn1), ("cnn2", &d.cnn2), ("test", &d.test)] {
        let counts = SynthSet::counts(&plan.images, plan.cases);
        let m = build_synth_dataset(&counts, d.seed, set, d.profile.scale(), spec.side, spec.rescue, &run.data(set))?;
        log(&format!("gen-data: {set}: {} images", m.rows.len()));
    }
    Ok(())
}

/// Training patches from `data/cnn1` with the configured method, and
/// method-1 test patches from `data/test`.
pub fn make_patches(cfg: &ExperimentConfig, run: &RunDir, log: Log) -> Result<()> {
    let spec = cfg.patch_spec();
    let method = cfg.patches.method;
    let train = DiskSet::open(&run.data("cnn1"))?;
    let samples = harvest_patches(&train, &cfg.patches.quota, method, &spec, cfg.data.seed)?;
    save_patch_set(&samples, &run.train_patches(method))?;
    log(&format!("make-patches: method {}: {} training patches", method.number(), samples.len()));
    let test = DiskSet::open(&run.data("test"))?;
    let samples = harvest_patches(&test, &cfg.patches.test_quota, PatchMethod::Oriented, &spec, cfg.data.seed)?;
    save_patch_set(&samples, &run.test_patches())?;
    log(&format!("make-patches: {} test patches", samples.len()));
    Ok(())
}

fn split_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from("case_id,role\n");
    for c in &outcome.split.train {
        let _ = writeln!(s, "{c},train");
    }
    for c in &outcome.split.validation {
        let _ = writeln!(s, "{c},validation");
    }
    s
}

/// Saves the best model, every run's model, the run table and the
/// case split under `<stem>`.
fn save_outcome(outcome: &TrainOutcome, run: &RunDir, stem: &str) -> Result<()> {
    mkdir(&run.models())?;
    mkdir(&run.reports())?;
    save_weights(&outcome.model, &run.models().join(format!("{stem}.kcnn")))?;
    for (i, m) in outcome.models.iter().enumerate() {
        save_weights(m, &run.models().join(format!("{stem}-run{i}.kcnn")))?;
    }
    write_text(&run.reports().join(format!("{stem}-runs.csv")), &outcome.records_csv())?;
    write_text(&run.reports().join(format!("{stem}-split.csv")), &split_csv(outcome))
}

fn epoch_logger<'a>(log: Log<'a>, stage: &'a str) -> impl FnMut(usize, usize, f64, &crate::nn::Evaluation) + 'a {
    move |run, epoch, loss, ev| {
        log(&format!(
            "{stage}: run {run} epoch {epoch} loss {loss:.4} val acc {:.4} val loss {:.4}",
            ev.accuracy, ev.mean_loss
        ))
    }
}

pub fn train_cnn1(cfg: &ExperimentConfig, run: &RunDir, log: Log) -> Result<TrainOutcome> {
    let method = cfg.patches.method;
    let samples = load_patch_set(&run.train_patches(method))?;
    let outcome = train_first_cnn(
        &samples,
        cfg.variant,
        &cfg.first_layers(),
        &cfg.patch_spec(),
        &cfg.train.first,
        cfg.model1.runs,
        cfg.train.val_ratio,
        cfg.run_seed(1, 0),
        epoch_logger(log, "train-cnn1"),
    )?;
    save_outcome(&outcome, run, &RunDir::first_stem(cfg.variant, method))?;
    log(&format!("train-cnn1: mean best val acc {:.4}", outcome.mean_best_accuracy()));
    Ok(outcome)
}

/// Feature maps of `data/cnn2` and `data/test` under the configured first
/// model.
pub fn build_fmaps(cfg: &ExperimentConfig, run: &RunDir, log: Log) -> Result<()> {
    let first = load_weights(&run.first_model(cfg.variant, cfg.patches.method))?;
    let geom = cfg.scan_geometry()?;
    for set in ["cnn2", "test"] {
        let provider = DiskSet::open(&run.data(set))?;
        let fs = build_feature_dataset(&provider, &first, &geom, &run.fmaps(set), |i, n| {
            if i % 10 == 0 || i == n {
                log(&format!("build-fmaps: {set}: {i}/{n}"))
            }
        })?;
        log(&format!("build-fmaps: {set}: {} maps of {:?}", fs.len(), fs.dims()?));
    }
    Ok(())
}

pub fn train_cnn2(cfg: &ExperimentConfig, run: &RunDir, log: Log) -> Result<TrainOutcome> {
    let features = load_feature_set(&run.fmaps("cnn2"))?;
    let outcome = train_second_cnn(
        &features,
        &cfg.second_layers(),
        &cfg.train.second,
        cfg.model2.runs,
        cfg.train.val_ratio,
        cfg.run_seed(2, 0),
        epoch_logger(log, "train-cnn2"),
    )?;
    save_outcome(&outcome, run, "cnn2")?;
    log(&format!("train-cnn2: mean best val acc {:.4}", outcome.mean_best_accuracy()));
    Ok(outcome)
}

/// End-to-end and small-image reports.
#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub large: Evaluation,
    pub small: Option<Evaluation>,
}

/// Scores `fmaps/test` with the second model into `reports/scores.csv`,
/// `roc.csv` and `metrics.txt`. When test patches and the first model are
/// present, also writes `small-*` reports and `orientation.txt`.
pub fn evaluate(cfg: &ExperimentConfig, run: &RunDir, log: Log) -> Result<EvaluationReport> {
    let features = load_feature_set(&run.fmaps("test"))?;
    let second = load_weights(&run.second_model())?;
    let large = evaluate_end_to_end(&features, &second, cfg.eval.threshold)?;
    large.write_reports(&run.reports(), "")?;
    log(&format!("evaluate: large-image AUC {:.4}", large.roc.auc));
    let first_path = run.first_model(cfg.variant, cfg.patches.method);
    let small = if run.test_patches().join("manifest.csv").exists() && first_path.exists() {
        let first = load_weights(&first_path)?;
        let spec = cfg.patch_spec();
        let patches = load_patch_set(&run.test_patches())?;
        let small = Evaluation::from_scores(small_image_scores(&first, &patches, &spec)?, cfg.eval.threshold)?;
        small.write_reports(&run.reports(), "small-")?;
        let orient = orientation_check(&first, &patches, &spec)?;
        write_text(
            &run.reports().join("orientation.txt"),
            &format!("checked={}\npassed={}\nfraction={:.4}\n", orient.responses.len(), orient.passed(), orient.fraction()),
        )?;
        log(&format!("evaluate: small-image AUC {:.4}, orientation {:.3}", small.roc.auc, orient.fraction()));
        Some(small)
    } else {
        None
    };
    Ok(EvaluationReport { large, small })
}

/// Scans one image into a feature map.
pub fn scan_file(image: &Path, model: &Path, geom: &ScanGeometry, out: &Path) -> Result<FeatureMap4D> {
    let model = load_weights(model)?;
    let img = prepare_scan_image(&Image::load_ppm(image)?, geom)?;
    let fm = scan_image(&img, &model, geom)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    fm.save(out)?;
    Ok(fm)
}

/// Filter landscapes of `K` and non-`K` test patches at `layer` (default:
/// the last convolution): per-filter statistics, the landscape of each
/// group, and the dead-filter list.
pub fn inspect_filters(cfg: &ExperimentConfig, run: &RunDir, model: &Model<f32>, layer: Option<usize>, log: Log) -> Result<usize> {
    let layer = match layer {
        Some(l) => l,
        None => last_conv_layer(model).ok_or_else(|| Error::Param("model has no convolution".into()))?,
    };
    let spec = cfg.patch_spec();
    let patches = load_patch_set(&run.test_patches())?;
    let (mut k, mut n) = (Vec::new(), Vec::new());
    for p in &patches {
        let x = to_network_input(p, &spec)?;
        if p.label == "K" {
            k.push(x)
        } else {
            n.push(x)
        }
    }
    let lk = filter_landscape(model, &k, layer)?;
    let ln = filter_landscape(model, &n, layer)?;
    let stats = filter_statistics(&lk, &ln)?;
    let dir = run.reports();
    mkdir(&dir)?;
    write_text(&dir.join(format!("filters-l{layer}.csv")), &filter_statistics_csv(&stats))?;
    lk.save_csv(&dir.join(format!("landscape-l{layer}-K.csv")))?;
    ln.save_csv(&dir.join(format!("landscape-l{layer}-N.csv")))?;
    let mut all = lk.clone();
    all.values.extend(ln.values.iter().cloned());
    let dead = dead_filters(&all, ZERO_TOLERANCE);
    let list: Vec<String> = dead.iter().map(|d| d.to_string()).collect();
    write_text(
        &dir.join(format!("dead-l{layer}.txt")),
        &format!("filters={}\ndead={}\nfraction={:.6}\nlist={}\n", all.filters(), dead.len(), dead.len() as f64 / all.filters() as f64, list.join(",")),
    )?;
    log(&format!("inspect-filters: layer {layer}: {} filters, {} dead", all.filters(), dead.len()));
    Ok(layer)
}

pub fn grad_ascent(model: &Model<f32>, layer: usize, filter: usize, steps: usize, step_size: f64, seed: u64, out: &Path) -> Result<Preimage> {
    let p = gradient_ascent_preimage(model, layer, filter, steps, step_size, seed)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    p.image.save_ppm(out)?;
    Ok(p)
}

/// Overlay of one filter's response on an image resized to the model input.
pub fn overlay_file(model: &Model<f32>, image: &Path, layer: usize, filter: usize, alpha: f64, out: &Path) -> Result<Overlay> {
    let [h, w, _] = model.input_shape();
    let mut img = Image::load_ppm(image)?;
    if (img.width(), img.height()) != (w, h) {
        img = resize_bilinear(&img, w, h)?;
    }
    let o = activation_overlay(model, &img, layer, filter, alpha)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    o.image.save_ppm(out)?;
    Ok(o)
}

/// Recomputes the summary of a scores CSV.
pub fn metrics_from_scores(scores: &Path, threshold: f64) -> Result<Evaluation> {
    let text = fs::read_to_string(scores).map_err(|e| Error::io(scores, e))?;
    Evaluation::from_scores(scores_from_csv(&text)?, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerConfig;
    use crate::synth::Category;
    use std::collections::BTreeMap;

    fn tiny_config(root: &Path) -> ExperimentConfig {
        use Category::*;
        let mut cfg = ExperimentConfig::default();
        cfg.data.profile = crate::pipeline::Profile::Desk;
        let plan = |k, other| super::super::config::SetPlan {
            cases: 2,
            images: [(K, k), (N, other), (S, other)].into_iter().collect::<BTreeMap<_, _>>(),
        };
        cfg.data.run_dir = root.to_path_buf();
        cfg.data.cnn1 = plan(4, 4);
        cfg.data.cnn2 = plan(4, 2);
        cfg.data.test = plan(2, 2);
        cfg.patches.quota = [(K, 10), (N, 10), (S, 16)].into_iter().collect();
        cfg.patches.test_quota = [(K, 4), (N, 4)].into_iter().collect();
        cfg.model1.layers = Some(vec![
            LayerConfig::Conv2d { kernel: 3, filters: 4, stride: 4 },
            LayerConfig::Relu,
            LayerConfig::GlobalAvgPool,
            LayerConfig::Dense { units: 3 },
            LayerConfig::Softmax,
        ]);
        cfg.model1.runs = 1;
        cfg.model2.runs = 1;
        cfg.scan.angle_step = 90.0;
        cfg.scan.cols = 2;
        cfg.scan.rows = 2;
        cfg.train.first.max_epochs = 1;
        cfg.train.second.max_epochs = 1;
        cfg.train.val_ratio = 1;
        cfg
    }

    #[test]
    fn stages_produce_the_layout_and_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let quiet = |_: &str| {};
        for root in [a.path(), b.path()] {
            let cfg = tiny_config(root);
            let run = RunDir::new(root);
            gen_data(&cfg, &run, &quiet).unwrap();
            make_patches(&cfg, &run, &quiet).unwrap();
            train_cnn1(&cfg, &run, &quiet).unwrap();
            build_fmaps(&cfg, &run, &quiet).unwrap();
            train_cnn2(&cfg, &run, &quiet).unwrap();
            let rep = evaluate(&cfg, &run, &quiet).unwrap();
            assert!(rep.small.is_some());
        }
        for rel in [
            "config.cfg",
            "data/cnn1/manifest.csv",
            "patches/method1/train/manifest.csv",
            "patches/test/manifest.csv",
            "models/cnn1-kns-m1.kcnn",
            "models/cnn1-kns-m1-run0.kcnn",
            "models/cnn2.kcnn",
            "fmaps/test/manifest.csv",
            "fmaps/cnn2/cnn2-K-000-00.fmap",
            "reports/scores.csv",
            "reports/roc.csv",
            "reports/metrics.txt",
            "reports/small-metrics.txt",
            "reports/orientation.txt",
            "reports/cnn1-kns-m1-runs.csv",
        ] {
            let x = fs::read(a.path().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
            assert_eq!(x, fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
        let saved = ExperimentConfig::load(&a.path().join("config.cfg")).unwrap();
        assert_eq!(saved.data.run_dir, a.path().join("."));
        let fm = FeatureMap4D::load(&a.path().join("fmaps/cnn2/cnn2-K-000-00.fmap")).unwrap();
        assert_eq!(fm.dims(), [4, 2, 2, 3]);
        let again = metrics_from_scores(&a.path().join("reports/scores.csv"), 0.5).unwrap();
        assert_eq!(again.metrics_text(), fs::read_to_string(a.path().join("reports/metrics.txt")).unwrap());
    }
}
