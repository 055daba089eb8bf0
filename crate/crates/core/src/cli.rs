//! The `keratoscan` command-line front end.
//!
//! Every subcommand reads an optional `--config` file; the shared flags
//! then override the file: `--seed`, `--variant`, `--angle-step`,
//! `--profile`, `--method` and `--out` (the run directory). Progress goes
//! to stderr. Exit codes: 0 success, 1 usage, 2 data or format error,
//! 3 numerical or training error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::introspect::{last_conv_layer, DEFAULT_STEPS, DEFAULT_STEP_SIZE};
use crate::nn::{load_weights, Model};
use crate::pipeline::run::{self, RunDir};
use crate::pipeline::{ExperimentConfig, PatchMethod, Profile, Variant};
use crate::scan::max_heatmap;

#[derive(Debug, Parser)]
#[command(name = "keratoscan", version, about = "Two-stage rotation-sweep patch classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// K/N, K/N/S or K/(N+S).
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Rotation sweep step in degrees; must divide 360.
    #[arg(long)]
    pub angle_step: Option<f64>,
    /// full or desk.
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Patch method, 1 (oriented) or 2 (random).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub method: Option<u8>,
    /// Run directory (for `scan`, the output FMAP file).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the cnn1, cnn2 and test image sets.
    GenData(Common),
    /// Cut training and test patches.
    MakePatches(Common),
    /// Train the first CNN on patches.
    TrainCnn1(Common),
    /// Scan one image into a feature map.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Also write `<out>.heatmap.pgm` and `.csv` (max over angles of P(K)).
        #[arg(long)]
        heatmap: bool,
    },
    /// Scan the cnn2 and test sets with the first CNN.
    BuildFmaps(Common),
    /// Train the second CNN on feature maps.
    TrainCnn2(Common),
    /// Score the test set end to end.
    Evaluate(Common),
    /// Filter landscapes and statistics on test patches.
    InspectFilters {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Gradient-ascent preimage of one filter.
    GradAscent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        filter: usize,
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
        step_size: f64,
    },
    /// Blend one filter's response over an image.
    Overlay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        filter: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Recompute metrics from a scores CSV.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c)
            | Command::MakePatches(c)
            | Command::TrainCnn1(c)
            | Command::BuildFmaps(c)
            | Command::TrainCnn2(c)
            | Command::Evaluate(c) => c,
            Command::Scan { common, .. }
            | Command::InspectFilters { common, .. }
            | Command::GradAscent { common, .. }
            | Command::Overlay { common, .. }
            | Command::Metrics { common, .. } => common,
        }
    }
}

/// Config file (or defaults) with the flag overrides applied.
pub fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.data.seed = s;
    }
    if let Some(v) = c.variant {
        cfg.variant = v;
    }
    if let Some(a) = c.angle_step {
        cfg.scan.angle_step = a;
    }
    if let Some(p) = c.profile {
        cfg.data.profile = p;
    }
    if let Some(m) = c.method {
        cfg.patches.method = if m == 2 { PatchMethod::Random } else { PatchMethod::Oriented };
    }
    if let Some(o) = &c.out {
        cfg.data.run_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn model_or_default(path: &Option<PathBuf>, cfg: &ExperimentConfig, dir: &RunDir) -> Result<Model<f32>> {
    let p = path.clone().unwrap_or_else(|| dir.first_model(cfg.variant, cfg.patches.method));
    load_weights(&p)
}

fn layer_or_last(layer: Option<usize>, model: &Model<f32>) -> Result<usize> {
    match layer {
        Some(l) => Ok(l),
        None => last_conv_layer(model).ok_or_else(|| Error::Param("model has no convolution".into())),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn execute(command: &Command) -> Result<()> {
    let c = command.common();
    let mut cfg = resolve_config(c)?;
    if let Command::Scan { .. } = command {
        cfg.data.run_dir = PathBuf::from(".");
    }
    let dir = RunDir::new(cfg.data.run_dir.clone());
    match command {
        Command::GenData(_) => run::gen_data(&cfg, &dir, &log),
        Command::MakePatches(_) => run::make_patches(&cfg, &dir, &log),
        Command::TrainCnn1(_) => run::train_cnn1(&cfg, &dir, &log).map(|_| ()),
        Command::BuildFmaps(_) => run::build_fmaps(&cfg, &dir, &log),
        Command::TrainCnn2(_) => run::train_cnn2(&cfg, &dir, &log).map(|_| ()),
        Command::Evaluate(_) => {
            let rep = run::evaluate(&cfg, &dir, &log)?;
            print!("{}", rep.large.metrics_text());
            Ok(())
        }
        Command::Scan { common, input, model, heatmap } => {
            let out = common
                .out
                .clone()
                .ok_or_else(|| Error::Param("scan needs --out FILE".into()))?;
            let geom = cfg.scan_geometry()?;
            let fm = run::scan_file(input, model, &geom, &out)?;
            if *heatmap {
                let k = load_weights(model)?
                    .category_index("K")
                    .ok_or_else(|| Error::Param("model has no K category".into()))?;
                let h = max_heatmap(&fm, k)?;
                h.save_pgm(&with_suffix(&out, ".heatmap.pgm"))?;
                h.save_csv(&with_suffix(&out, ".heatmap.csv"))?;
            }
            log(&format!("scan: {:?} -> {}", fm.dims(), out.display()));
            Ok(())
        }
        Command::InspectFilters { model, layer, .. } => {
            let m = model_or_default(model, &cfg, &dir)?;
            run::inspect_filters(&cfg, &dir, &m, *layer, &log).map(|_| ())
        }
        Command::GradAscent {
            model,
            layer,
            filter,
            steps,
            step_size,
            ..
        } => {
            let m = model_or_default(model, &cfg, &dir)?;
            let layer = layer_or_last(*layer, &m)?;
            let out = dir.reports().join(format!("preimage-l{layer}-f{filter}.ppm"));
            let p = run::grad_ascent(&m, layer, *filter, *steps, *step_size, cfg.data.seed, &out)?;
            log(&format!(
                "grad-ascent: mean activation {:.6} -> {:.6}{}",
                p.initial_mean,
                p.final_mean,
                if p.flat_gradient { " (flat gradient)" } else { "" }
            ));
            Ok(())
        }
        Command::Overlay {
            model,
            input,
            layer,
            filter,
            alpha,
            ..
        } => {
            let m = model_or_default(model, &cfg, &dir)?;
            let layer = layer_or_last(*layer, &m)?;
            let out = dir.reports().join(format!("overlay-l{layer}-f{filter}.ppm"));
            let o = run::overlay_file(&m, input, layer, *filter, *alpha, &out)?;
            if o.flat_response {
                log("overlay: constant response, image left unchanged");
            }
            Ok(())
        }
        Command::Metrics { common, scores, threshold } => {
            let ev = run::metrics_from_scores(scores, threshold.unwrap_or(cfg.eval.threshold))?;
            print!("{}", ev.metrics_text());
            if common.out.is_some() {
                std::fs::create_dir_all(dir.reports()).map_err(|e| Error::io(dir.reports(), e))?;
                crate::eval::write_text(&dir.reports().join("metrics.txt"), &ev.metrics_text())?;
            }
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let jobs = cli.command.common().jobs;
    let result = match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| execute(&cli.command)),
            Err(e) => Err(Error::Param(e.to_string())),
        },
        None => execute(&cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("keratoscan: {e}");
            e.exit_code()
        }
    }
}
