//! Experiment configuration: bracketed sections of `key = value` lines.
//!
//! ```text
//! [data]
//! profile = desk
//! seed = 42
//! [model1]
//! variant = K/N/S
//! ```
//!
//! Every key is optional; unknown sections and keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ini::Ini;

use super::data::PatchMethod;
use crate::error::{Error, Result};
use crate::nn::{arch, InitMode, LayerConfig, TrainConfig};
use crate::patch::PatchSpec;
use crate::scan::{compute_grid, ScanGeometry};
use crate::synth::Category;

/// Full-resolution or half-scale geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Full,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Param(format!("unknown profile {s:?} (full|desk)"))),
        }
    }
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        }
    }

    /// Synthetic canvas scale relative to 1224×960.
    pub fn scale(self) -> f64 {
        match self {
            Profile::Full => 1.0,
            Profile::Desk => 0.5,
        }
    }

    pub fn patch_spec(self) -> PatchSpec {
        match self {
            Profile::Full => PatchSpec::full(),
            Profile::Desk => PatchSpec::desk(),
        }
    }

    pub fn scan_geometry(self) -> ScanGeometry {
        match self {
            Profile::Full => ScanGeometry::full(),
            Profile::Desk => ScanGeometry::desk(),
        }
    }

    /// Default first-stage stack.
    pub fn first_layers(self, categories: usize) -> Vec<LayerConfig> {
        match self {
            Profile::Full => arch::first_cnn_reference(categories),
            Profile::Desk => arch::first_cnn(8, categories),
        }
    }
}

/// Class set of a first-CNN training recipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// `K` vs `N`; stroma patches are left out.
    KN,
    /// `K`, `N` and `S`.
    KNS,
    /// `K` vs everything else, stroma relabeled `N`.
    KvsNS,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K/N" => Ok(Variant::KN),
            "K/N/S" => Ok(Variant::KNS),
            "K/(N+S)" => Ok(Variant::KvsNS),
            _ => Err(Error::Param(format!("unknown variant {s:?} (K/N, K/N/S, K/(N+S))"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::KN => "K/N",
            Variant::KNS => "K/N/S",
            Variant::KvsNS => "K/(N+S)",
        })
    }
}

impl Variant {
    pub fn classes(self) -> Vec<String> {
        let names: &[&str] = match self {
            Variant::KNS => &["K", "N", "S"],
            _ => &["K", "N"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Training label for a patch class, `None` when the recipe drops it.
    pub fn map_label(self, class: &str) -> Option<&'static str> {
        match (self, class) {
            (_, "K") => Some("K"),
            (_, "N") => Some("N"),
            (Variant::KNS, "S") => Some("S"),
            (Variant::KvsNS, "S") => Some("N"),
            _ => None,
        }
    }

    /// File-name friendly tag.
    pub fn tag(self) -> &'static str {
        match self {
            Variant::KN => "kn",
            Variant::KNS => "kns",
            Variant::KvsNS => "k-ns",
        }
    }
}

/// Images and cases per category for one synthetic set.
#[derive(Clone, Debug, PartialEq)]
pub struct SetPlan {
    pub cases: usize,
    pub images: BTreeMap<Category, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub profile: Profile,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub cnn1: SetPlan,
    pub cnn2: SetPlan,
    pub test: SetPlan,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSection {
    pub method: PatchMethod,
    pub quota: BTreeMap<Category, usize>,
    pub test_quota: BTreeMap<Category, usize>,
    pub max_blank: f64,
    pub min_coverage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    /// `None` selects the profile default.
    pub layers: Option<Vec<LayerConfig>>,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSection {
    pub angle_step: f64,
    pub cols: usize,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub first: TrainConfig,
    pub second: TrainConfig,
    pub val_ratio: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub threshold: f64,
}

/// A whole experiment definition.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub patches: PatchSection,
    pub model1: ModelSection,
    pub variant: Variant,
    pub model2: ModelSection,
    pub scan: ScanSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

fn counts(pairs: &[(Category, usize)]) -> BTreeMap<Category, usize> {
    pairs.iter().copied().collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        use Category::*;
        let second = TrainConfig {
            learning_rate: 0.02,
            batch_size: 16,
            max_epochs: 300,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            data: DataSection {
                profile: Profile::Full,
                seed: 42,
                run_dir: PathBuf::from("run"),
                cnn1: SetPlan {
                    cases: 20,
                    images: counts(&[(K, 400), (N, 200), (NThick, 200), (S, 100), (SInflamed, 100)]),
                },
                cnn2: SetPlan {
                    cases: 10,
                    images: counts(&[(K, 150), (N, 38), (NThick, 37), (S, 38), (SInflamed, 37)]),
                },
                test: SetPlan {
                    cases: 10,
                    images: counts(&[(K, 50), (N, 25), (NThick, 25), (S, 50), (SInflamed, 50)]),
                },
            },
            patches: PatchSection {
                method: PatchMethod::Oriented,
                quota: counts(&[(K, 1200), (N, 600), (NThick, 600), (S, 600), (SInflamed, 600)]),
                test_quota: counts(&[(K, 100), (N, 50), (NThick, 50)]),
                max_blank: 0.5,
                min_coverage: 0.7,
            },
            model1: ModelSection { layers: None, runs: 3 },
            variant: Variant::KNS,
            model2: ModelSection { layers: None, runs: 3 },
            scan: ScanSection {
                angle_step: 30.0,
                cols: 20,
                rows: 16,
            },
            train: TrainSection {
                first: TrainConfig::default(),
                second,
                val_ratio: 20,
            },
            eval: EvalSection { threshold: 0.5 },
        }
    }
}

fn parse_counts(text: &str) -> std::result::Result<BTreeMap<Category, usize>, String> {
    let mut out = BTreeMap::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (cat, n) = item
            .rsplit_once(':')
            .ok_or_else(|| format!("expected CATEGORY:COUNT, got {item:?}"))?;
        let cat: Category = cat.trim().parse().map_err(|e: Error| e.to_string())?;
        let n: usize = n.trim().parse().map_err(|_| format!("bad count in {item:?}"))?;
        out.insert(cat, n);
    }
    Ok(out)
}

fn format_counts(m: &BTreeMap<Category, usize>) -> String {
    m.iter().map(|(c, n)| format!("{c}:{n}")).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |message: String| Error::Config {
            path: origin.to_string(),
            message,
        };
        let ini = Ini::load_from_str(text).map_err(|e| err(e.to_string()))?;
        let mut cfg = ExperimentConfig::default();
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let value = value.trim();
                let sec = section.unwrap_or("");
                cfg.set(sec, key.trim(), value)
                    .map_err(|m| err(format!("[{sec}] {key}: {m}")))?;
            }
        }
        cfg.validate().map_err(|e| err(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `run_dir` is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        if cfg.data.run_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            cfg.data.run_dir = base.join(&cfg.data.run_dir);
        }
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        let layers = |v: &str| arch::parse_layers(v).map(Some).map_err(|e| e.to_string());
        let d = &mut self.data;
        let p = &mut self.patches;
        let t = &mut self.train;
        match (section, key) {
            ("data", "profile") => d.profile = v.parse().map_err(|e: Error| e.to_string())?,
            ("data", "seed") => d.seed = num(v)?,
            ("data", "run_dir") => d.run_dir = PathBuf::from(v),
            ("data", "cnn1_cases") => d.cnn1.cases = num(v)?,
            ("data", "cnn1_images") => d.cnn1.images = parse_counts(v)?,
            ("data", "cnn2_cases") => d.cnn2.cases = num(v)?,
            ("data", "cnn2_images") => d.cnn2.images = parse_counts(v)?,
            ("data", "test_cases") => d.test.cases = num(v)?,
            ("data", "test_images") => d.test.images = parse_counts(v)?,
            ("patches", "method") => {
                p.method = match v {
                    "1" => PatchMethod::Oriented,
                    "2" => PatchMethod::Random,
                    _ => return Err(format!("method must be 1 or 2, got {v:?}")),
                }
            }
            ("patches", "quota") => p.quota = parse_counts(v)?,
            ("patches", "test_quota") => p.test_quota = parse_counts(v)?,
            ("patches", "max_blank") => p.max_blank = num(v)?,
            ("patches", "min_coverage") => p.min_coverage = num(v)?,
            ("model1", "layers") => self.model1.layers = layers(v)?,
            ("model1", "runs") => self.model1.runs = num(v)?,
            ("model1", "variant") => self.variant = v.parse().map_err(|e: Error| e.to_string())?,
            ("model2", "layers") => self.model2.layers = layers(v)?,
            ("model2", "runs") => self.model2.runs = num(v)?,
            ("scan", "angle_step") => self.scan.angle_step = num(v)?,
            ("scan", "cols") => self.scan.cols = num(v)?,
            ("scan", "rows") => self.scan.rows = num(v)?,
            ("train", "learning_rate") => t.first.learning_rate = num(v)?,
            ("train", "momentum") => t.first.momentum = num(v)?,
            ("train", "batch_size") => t.first.batch_size = num(v)?,
            ("train", "max_epochs") => t.first.max_epochs = num(v)?,
            ("train", "early_stop_accuracy") => t.first.early_stop_accuracy = num(v)?,
            ("train", "init") => {
                let mode: InitMode = v.parse().map_err(|e: Error| e.to_string())?;
                t.first.init = mode;
                t.second.init = mode;
            }
            ("train", "second_learning_rate") => t.second.learning_rate = num(v)?,
            ("train", "second_batch_size") => t.second.batch_size = num(v)?,
            ("train", "second_max_epochs") => t.second.max_epochs = num(v)?,
            ("train", "val_ratio") => t.val_ratio = num(v)?,
            ("eval", "threshold") => self.eval.threshold = num(v)?,
            ("" | "data" | "patches" | "model1" | "model2" | "scan" | "train" | "eval", _) => {
                return Err("unknown key".into())
            }
            _ => return Err("unknown section".into()),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.first.validate()?;
        self.train.second.validate()?;
        self.patch_spec().validate()?;
        self.scan_geometry()?;
        if self.model1.runs == 0 || self.model2.runs == 0 {
            return Err(Error::Param("runs must be at least 1".into()));
        }
        if self.train.val_ratio == 0 {
            return Err(Error::Param("val_ratio must be at least 1".into()));
        }
        Ok(())
    }

    pub fn patch_spec(&self) -> PatchSpec {
        PatchSpec {
            max_blank: self.patches.max_blank,
            min_coverage: self.patches.min_coverage,
            ..self.data.profile.patch_spec()
        }
    }

    pub fn scan_geometry(&self) -> Result<ScanGeometry> {
        let base = self.data.profile.scan_geometry();
        compute_grid(base.width, base.height, base.window, self.scan.cols, self.scan.rows)?
            .with_angle_step(self.scan.angle_step)
    }

    pub fn first_layers(&self) -> Vec<LayerConfig> {
        self.model1
            .layers
            .clone()
            .unwrap_or_else(|| self.data.profile.first_layers(self.variant.classes().len()))
    }

    pub fn second_layers(&self) -> Vec<LayerConfig> {
        self.model2.layers.clone().unwrap_or_else(|| arch::second_cnn(2))
    }

    /// Seed of training run `i` for the first (`stage` 1) or second CNN.
    pub fn run_seed(&self, stage: u64, i: usize) -> u64 {
        self.data.seed.wrapping_mul(1000).wrapping_add(stage * 100 + i as u64)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let p = &self.patches;
        let t = &self.train;
        let layers = |l: &Option<Vec<LayerConfig>>| l.as_ref().map(|l| arch::format_layers(l));
        let mut s = String::new();
        let _ = writeln!(s, "[data]\nprofile = {}\nseed = {}\nrun_dir = {}", d.profile.as_str(), d.seed, d.run_dir.display());
        for (name, plan) in [("cnn1", &d.cnn1), ("cnn2", &d.cnn2), ("test", &d.test)] {
            let _ = writeln!(s, "{name}_cases = {}\n{name}_images = {}", plan.cases, format_counts(&plan.images));
        }
        let _ = writeln!(
            s,
            "\n[patches]\nmethod = {}\nquota = {}\ntest_quota = {}\nmax_blank = {}\nmin_coverage = {}",
            p.method.number(),
            format_counts(&p.quota),
            format_counts(&p.test_quota),
            p.max_blank,
            p.min_coverage
        );
        let _ = writeln!(s, "\n[model1]\nvariant = {}\nruns = {}", self.variant, self.model1.runs);
        if let Some(l) = layers(&self.model1.layers) {
            let _ = writeln!(s, "layers = {l}");
        }
        let _ = writeln!(s, "\n[model2]\nruns = {}", self.model2.runs);
        if let Some(l) = layers(&self.model2.layers) {
            let _ = writeln!(s, "layers = {l}");
        }
        let _ = writeln!(
            s,
            "\n[scan]\nangle_step = {}\ncols = {}\nrows = {}",
            self.scan.angle_step, self.scan.cols, self.scan.rows
        );
        let _ = writeln!(
            s,
            "\n[train]\nlearning_rate = {}\nmomentum = {}\nbatch_size = {}\nmax_epochs = {}\nearly_stop_accuracy = {}\ninit = {}\nsecond_learning_rate = {}\nsecond_batch_size = {}\nsecond_max_epochs = {}\nval_ratio = {}",
            t.first.learning_rate,
            t.first.momentum,
            t.first.batch_size,
            t.first.max_epochs,
            t.first.early_stop_accuracy,
            t.first.init.as_str(),
            t.second.learning_rate,
            t.second.batch_size,
            t.second.max_epochs,
            t.val_ratio
        );
        let _ = writeln!(s, "\n[eval]\nthreshold = {}", self.eval.threshold);
        s
    }
}
