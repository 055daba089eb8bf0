//! Renders one desk-scale image per category with its band mask.
//!
//! Usage: cargo run --release --example synth_images [OUT_DIR]

use std::path::PathBuf;

use keratoscan::synth::{synth_large_image, Category, SynthSpec};

fn main() -> keratoscan::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("keratoscan-synth"));
    std::fs::create_dir_all(&out).expect("create output directory");
    for (i, cat) in [Category::K, Category::N, Category::NThick, Category::S, Category::SInflamed].into_iter().enumerate() {
        let spec = SynthSpec::desk(cat, 100 + i as u64);
        let s = synth_large_image(&spec)?;
        s.image.save_ppm(&out.join(format!("{cat}.ppm")))?;
        s.mask.save_pgm(&out.join(format!("{cat}.mask.pgm")))?;
        println!(
            "{cat:>10}: {}x{}, mask coverage {:.3}, {} nuclei logged",
            spec.width,
            spec.height,
            s.mask.coverage(),
            s.log.nuclei.len()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
