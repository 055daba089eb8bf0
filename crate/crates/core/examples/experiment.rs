//! Runs every pipeline stage on a miniature experiment in a run directory:
//! data, patches, first CNN, feature maps, second CNN and evaluation.
//!
//! Usage: cargo run --release --example experiment [RUN_DIR]

use std::path::PathBuf;

use keratoscan::pipeline::run::{build_fmaps, evaluate, gen_data, make_patches, train_cnn1, train_cnn2};
use keratoscan::pipeline::{ExperimentConfig, RunDir};

const CONFIG: &str = "
[data]
profile = desk
seed = 3
cnn1_cases = 4
cnn1_images = K:24,N:12,N-thick:12,S:8,S-inflamed:8
cnn2_cases = 4
cnn2_images = K:8,N:4,S:4
test_cases = 3
test_images = K:6,N:3,S:3

[patches]
quota = K:70,N:40,N-thick:40,S:40,S-inflamed:40
test_quota = K:20,N:10

[model1]
runs = 1

[model2]
runs = 1

[scan]
angle_step = 90

[train]
max_epochs = 8
second_max_epochs = 20
val_ratio = 3
";

fn main() -> keratoscan::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("keratoscan-run"));
    let mut cfg = ExperimentConfig::parse(CONFIG, "experiment.rs")?;
    cfg.data.run_dir = root.clone();
    let run = RunDir::new(root);
    let log = |m: &str| eprintln!("{m}");
    gen_data(&cfg, &run, &log)?;
    make_patches(&cfg, &run, &log)?;
    train_cnn1(&cfg, &run, &log)?;
    build_fmaps(&cfg, &run, &log)?;
    train_cnn2(&cfg, &run, &log)?;
    let report = evaluate(&cfg, &run, &log)?;
    print!("{}", report.large.metrics_text());
    println!("reports in {}", run.reports().display());
    Ok(())
}
