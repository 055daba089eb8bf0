//! Filter landscape, dead-filter count, gradient-ascent preimage and an
//! activation overlay for a first-stage model.
//!
//! Usage: cargo run --release --example introspection [MODEL.kcnn]

use keratoscan::introspect::{
    activation_overlay, conv_layers, filter_landscape, gradient_ascent_preimage, zero_filter_fraction, DEFAULT_STEPS,
    DEFAULT_STEP_SIZE, ZERO_TOLERANCE,
};
use keratoscan::nn::{load_weights, InitMode, Model};
use keratoscan::patch::{oriented_patches, to_network_input, PatchSpec, Provenance};
use keratoscan::pipeline::Profile;
use keratoscan::synth::{synth_large_image, Category, SynthSpec};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn main() -> keratoscan::Result<()> {
    let spec = PatchSpec::desk();
    let model = match std::env::args().nth(1) {
        Some(p) => load_weights(p.as_ref())?,
        None => {
            let mut m = Model::new([spec.input, spec.input, 3], Profile::Desk.first_layers(3), vec!["K".into(), "N".into(), "S".into()])?;
            m.init_params(InitMode::Uniform, 3);
            m
        }
    };
    let s = synth_large_image(&SynthSpec::desk(Category::K, 5))?;
    let anchors = s.log.anchors(s.image.width(), s.image.height(), spec.side, spec.rescue);
    let (patches, _) = oriented_patches(&s.image, &anchors, &spec, &Provenance::default());
    let images = patches.iter().map(|p| to_network_input(p, &spec)).collect::<keratoscan::Result<Vec<_>>>()?;

    let dir = std::env::temp_dir();
    for layer in conv_layers(&model) {
        let land = filter_landscape(&model, &images, layer)?;
        println!("layer {layer}: {} filters, dead fraction {:.3}", land.filters(), zero_filter_fraction(&land, ZERO_TOLERANCE));
    }
    let last = *conv_layers(&model).last().expect("model has a convolution");
    let land = filter_landscape(&model, &images, last)?;
    let f = (0..land.filters())
        .max_by(|&a, &b| mean(&land.filter_column(a)).total_cmp(&mean(&land.filter_column(b))))
        .expect("layer has filters");
    let pre = gradient_ascent_preimage(&model, last, f, DEFAULT_STEPS, DEFAULT_STEP_SIZE, 1)?;
    println!("filter {f} mean activation {:.4} -> {:.4}", pre.initial_mean, pre.final_mean);
    pre.image.save_ppm(&dir.join("keratoscan-preimage.ppm"))?;
    let overlay = activation_overlay(&model, &images[0], last, f, 0.5)?;
    overlay.image.save_ppm(&dir.join("keratoscan-overlay.ppm"))?;
    println!("wrote preimage and overlay to {}", dir.display());
    Ok(())
}
