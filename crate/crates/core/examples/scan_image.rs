//! Sweeps a first-stage model over a large image and writes the feature
//! map plus the max-over-angle K heatmap.
//!
//! Usage: cargo run --release --example scan_image [MODEL.kcnn]
//! Without a model a randomly initialised one is used; run the
//! `train_patches` example first for a meaningful heatmap.

use keratoscan::nn::{load_weights, InitMode, Model};
use keratoscan::pipeline::Profile;
use keratoscan::scan::{max_heatmap, prepare_scan_image, scan_image};
use keratoscan::synth::{synth_large_image, Category, SynthSpec};

fn main() -> keratoscan::Result<()> {
    let profile = Profile::Desk;
    let geom = profile.scan_geometry();
    let model = match std::env::args().nth(1) {
        Some(p) => load_weights(p.as_ref())?,
        None => {
            let mut m = Model::new([geom.window, geom.window, 3], profile.first_layers(3), vec!["K".into(), "N".into(), "S".into()])?;
            m.init_params(InitMode::Uniform, 1);
            m
        }
    };
    let s = synth_large_image(&SynthSpec::desk(Category::K, 11))?;
    let img = prepare_scan_image(&s.image, &geom)?;
    let t = std::time::Instant::now();
    let fm = scan_image(&img, &model, &geom)?;
    println!("feature map {:?} in {:.1}s", fm.dims(), t.elapsed().as_secs_f64());

    let k = model.category_index("K").expect("model has a K category");
    let heat = max_heatmap(&fm, k)?;
    println!("K heatmap: max {:.3}, mean {:.3}", heat.max(), heat.mean());
    let dir = std::env::temp_dir();
    fm.save(&dir.join("keratoscan-demo.fmap"))?;
    heat.save_pgm(&dir.join("keratoscan-demo-heatmap.pgm"))?;
    println!("wrote {}", dir.join("keratoscan-demo.fmap").display());
    Ok(())
}
