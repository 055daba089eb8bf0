//! Trains the desk first-stage CNN on a small K/N/S patch set and reports
//! held-out small-image AUC.
//!
//! Usage: cargo run --release --example train_patches [PATCHES_PER_CLASS]

use std::collections::BTreeMap;

use keratoscan::eval::roc_curve;
use keratoscan::nn::{save_weights, TrainConfig};
use keratoscan::pipeline::{harvest_patches, small_image_scores, train_first_cnn, PatchMethod, Profile, SynthSet, Variant};
use keratoscan::synth::{Category, DatasetCounts};

fn main() -> keratoscan::Result<()> {
    let per: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let profile = Profile::Desk;
    let spec = profile.patch_spec();
    let counts = DatasetCounts::default()
        .with(Category::K, 60, 6)
        .with(Category::N, 60, 6)
        .with(Category::S, 30, 6);
    let train = SynthSet::new("demo-train", 1, profile.scale(), &counts, &spec)?;
    let quota: BTreeMap<Category, usize> = [(Category::K, per), (Category::N, per), (Category::S, per)].into();
    let samples = harvest_patches(&train, &quota, PatchMethod::Oriented, &spec, 1)?;
    println!("{} training patches", samples.len());

    let cfg = TrainConfig { max_epochs: 15, ..TrainConfig::default() };
    let outcome = train_first_cnn(
        &samples,
        Variant::KNS,
        &profile.first_layers(3),
        &spec,
        &cfg,
        1,
        5,
        7,
        |_, epoch, loss, ev| eprintln!("epoch {epoch}: loss {loss:.4}, val acc {:.3}", ev.accuracy),
    )?;
    print!("{}", outcome.records_csv());

    let test_counts = DatasetCounts::default().with(Category::K, 12, 3).with(Category::N, 12, 3);
    let test = SynthSet::new("demo-test", 1, profile.scale(), &test_counts, &spec)?;
    let held_out = harvest_patches(&test, &[(Category::K, 30), (Category::N, 30)].into(), PatchMethod::Oriented, &spec, 1)?;
    let scores = small_image_scores(&outcome.model, &held_out, &spec)?;
    println!("held-out small-image AUC {:.4}", roc_curve(&scores)?.auc);

    let path = std::env::temp_dir().join("keratoscan-demo-cnn1.kcnn");
    save_weights(&outcome.model, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
