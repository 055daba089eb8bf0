//! Patch extraction. Method 1 crops an oriented square around an annotated
//! anchor so the cavity faces up; method 2 draws random crops at random
//! angles and keeps them by blankness and mask coverage.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{
    blank_fraction, crop, crop_mask, resize_bilinear, rotate_white_fill, sample_rotated,
    trig_degrees, GrayMask, Image,
};
use crate::synth::{square_fits, thick_limit, Anchor, DatasetManifest, ManifestRow};

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSpec {
    pub side: usize,
    pub rescue: usize,
    pub input: usize,
    pub random_crop: usize,
    pub max_blank: f64,
    pub min_coverage: f64,
}

impl PatchSpec {
    pub fn full() -> Self {
        PatchSpec {
            side: 256,
            rescue: 320,
            input: 224,
            random_crop: 362,
            max_blank: 0.5,
            min_coverage: 0.7,
        }
    }

    pub fn desk() -> Self {
        PatchSpec {
            side: 128,
            rescue: 160,
            input: 112,
            random_crop: 181,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0 < self.input
            && self.input <= self.side
            && self.side <= self.rescue
            && self.rescue <= self.random_crop;
        let unit = |t: f64| t > 0.0 && t < 1.0;
        if !ordered || !unit(self.max_blank) || !unit(self.min_coverage) {
            return Err(Error::Param(format!("invalid patch spec {self:?}")));
        }
        Ok(())
    }
}

/// Where a patch came from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Provenance {
    pub label: String,
    pub case_id: String,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub image: Image,
    pub label: String,
    pub case_id: String,
    pub source: String,
    pub method: u8,
    /// Rotation applied, in degrees.
    pub orientation: f64,
}

impl PatchSample {
    pub fn new(image: Image, prov: &Provenance, method: u8, orientation: f64) -> Self {
        PatchSample {
            image,
            label: prov.label.clone(),
            case_id: prov.case_id.clone(),
            source: prov.source.clone(),
            method,
            orientation,
        }
    }
}

/// Method-1 patch: rotates `img` by `−up_angle` about `(x, y)` and crops the
/// centered `side`² square, or for `thick` bands the `rescue`² square
/// resized down to `side`².
pub fn crop_oriented_patch(
    img: &Image,
    x: f64,
    y: f64,
    up_angle: f64,
    thick: bool,
    spec: &PatchSpec,
    prov: &Provenance,
) -> Result<PatchSample> {
    let window = if thick { spec.rescue } else { spec.side };
    if !square_fits(img.width(), img.height(), x, y, up_angle, window) {
        return Err(Error::Range(format!(
            "{window}px square at ({x:.1},{y:.1}) rotated {up_angle:.1}° leaves the {}x{} canvas",
            img.width(),
            img.height()
        )));
    }
    let view = sample_rotated(img, x, y, -up_angle, window, window);
    let image = if thick {
        resize_bilinear(&view, spec.side, spec.side)?
    } else {
        view
    };
    Ok(PatchSample::new(image, prov, 1, up_angle))
}

/// Method-1 patches for every usable anchor. Anchors on bands too thick for
/// the rescue window, or whose square leaves the canvas, are skipped; the
/// second value counts them.
pub fn oriented_patches(
    img: &Image,
    anchors: &[Anchor],
    spec: &PatchSpec,
    prov: &Provenance,
) -> (Vec<PatchSample>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for a in anchors {
        if a.thickness > thick_limit(spec.rescue) {
            skipped += 1;
            continue;
        }
        let thick = a.thickness > thick_limit(spec.side);
        match crop_oriented_patch(img, a.x, a.y, a.up_angle, thick, spec, prov) {
            Ok(p) => out.push(p),
            Err(_) => skipped += 1,
        }
    }
    (out, skipped)
}

/// Oriented crops at random in-canvas centers and random angles, kept when
/// at most `max_blank` of the patch is blank. Used for stroma, which has no
/// band to anchor on.
pub fn random_oriented_patches<R: Rng>(
    img: &Image,
    count: usize,
    rng: &mut R,
    spec: &PatchSpec,
    prov: &Provenance,
) -> Vec<PatchSample> {
    let mut out = Vec::new();
    for _ in 0..count * 20 {
        if out.len() == count {
            break;
        }
        let x = rng.gen_range(0.0..img.width() as f64);
        let y = rng.gen_range(0.0..img.height() as f64);
        let up = rng.gen_range(0.0..360.0);
        if let Ok(p) = crop_oriented_patch(img, x, y, up, false, spec, prov) {
            if blank_fraction(&p.image) <= spec.max_blank {
                out.push(p);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rejection {
    Blank(f64),
    LowCoverage(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Draw {
    Accepted {
        sample: PatchSample,
        coverage: Option<f64>,
    },
    Rejected(Rejection),
}

/// Nearest-neighbour mask rotation about the center; outside reads as 0.
pub fn rotate_mask(mask: &GrayMask, angle: f64) -> GrayMask {
    let (cos, sin) = trig_degrees(angle);
    let cx = (mask.width() as f64 - 1.0) / 2.0;
    let cy = (mask.height() as f64 - 1.0) / 2.0;
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    GrayMask::from_fn(mask.width(), mask.height(), |i, j| {
        let ox = i as f64 - cx;
        let oy = j as f64 - cy;
        let sx = (cx + ox * cos - oy * sin).round();
        let sy = (cy + ox * sin + oy * cos).round();
        sx >= 0.0 && sy >= 0.0 && sx < w && sy < h && mask.get(sx as usize, sy as usize)
    })
}

/// Method-2 draw: a `random_crop`² square at a uniform position, rotated
/// by a uniform angle in `[0, 360)`, center-cropped to `side`². Rejected
/// when more than `max_blank` of it is blank, or, when a mask is given,
/// when less than `min_coverage` of the final patch is masked.
pub fn sample_random_patch<R: Rng>(
    img: &Image,
    mask: Option<&GrayMask>,
    rng: &mut R,
    spec: &PatchSpec,
    prov: &Provenance,
) -> Result<Draw> {
    let big = spec.random_crop;
    if img.width() < big || img.height() < big {
        return Err(Error::Param(format!(
            "{}x{} image is smaller than the {big}px random crop",
            img.width(),
            img.height()
        )));
    }
    if let Some(m) = mask {
        if (m.width(), m.height()) != (img.width(), img.height()) {
            return Err(Error::shape(
                &[img.height(), img.width()],
                &[m.height(), m.width()],
            ));
        }
    }
    let x0 = rng.gen_range(0..=img.width() - big);
    let y0 = rng.gen_range(0..=img.height() - big);
    let angle = rng.gen_range(0.0..360.0);
    let off = (big - spec.side) / 2;
    let rotated = rotate_white_fill(&crop(img, x0, y0, big, big)?, angle);
    let patch = crop(&rotated, off, off, spec.side, spec.side)?;
    let blank = blank_fraction(&patch);
    if blank > spec.max_blank {
        return Ok(Draw::Rejected(Rejection::Blank(blank)));
    }
    let coverage = match mask {
        Some(m) => {
            let rotated = rotate_mask(&crop_mask(m, x0, y0, big, big)?, angle);
            let c = crop_mask(&rotated, off, off, spec.side, spec.side)?.coverage();
            if c < spec.min_coverage {
                return Ok(Draw::Rejected(Rejection::LowCoverage(c)));
            }
            Some(c)
        }
        None => None,
    };
    Ok(Draw::Accepted {
        sample: PatchSample::new(patch, prov, 2, angle),
        coverage,
    })
}

/// Draws until `count` patches are accepted or `max_draws` is reached.
pub fn random_patches<R: Rng>(
    img: &Image,
    mask: Option<&GrayMask>,
    count: usize,
    max_draws: usize,
    rng: &mut R,
    spec: &PatchSpec,
    prov: &Provenance,
) -> Result<Vec<PatchSample>> {
    let mut out = Vec::new();
    for _ in 0..max_draws {
        if out.len() == count {
            break;
        }
        if let Draw::Accepted { sample, .. } = sample_random_patch(img, mask, rng, spec, prov)? {
            out.push(sample);
        }
    }
    Ok(out)
}

/// Resizes a patch to the network input side.
pub fn to_network_input(p: &PatchSample, spec: &PatchSpec) -> Result<Image> {
    resize_bilinear(&p.image, spec.input, spec.input)
}

/// Writes each patch as `patch-NNNNN.ppm` under `dir` plus a `manifest.csv`
/// with a `method` column.
pub fn save_patch_set(samples: &[PatchSample], dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DatasetManifest::default();
    for (i, p) in samples.iter().enumerate() {
        let path = format!("patch-{i:05}.ppm");
        p.image.save_ppm(&dir.join(&path))?;
        manifest.rows.push(ManifestRow {
            path,
            label: p.label.clone(),
            case_id: p.case_id.clone(),
            mask_path: None,
            method: Some(p.method),
        });
    }
    manifest.save(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_large_image, Category, SynthSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    fn prov() -> Provenance {
        Provenance {
            label: "K".into(),
            case_id: "c0".into(),
            source: "img".into(),
        }
    }

    #[test]
    fn zero_angle_is_a_plain_centered_crop() {
        let img = noise(300, 260, 1);
        let spec = PatchSpec::desk();
        let p = crop_oriented_patch(&img, 149.5, 129.5, 0.0, false, &spec, &prov()).unwrap();
        assert_eq!(p.image, crop(&img, 86, 66, 128, 128).unwrap());
        assert_eq!(p.method, 1);
    }

    #[test]
    fn thick_patch_is_rescue_crop_resized() {
        let img = noise(300, 260, 2);
        let spec = PatchSpec::desk();
        let p = crop_oriented_patch(&img, 149.5, 129.5, 0.0, true, &spec, &prov()).unwrap();
        let oracle = resize_bilinear(&crop(&img, 70, 50, 160, 160).unwrap(), 128, 128).unwrap();
        assert_eq!(p.image.width(), spec.side);
        assert_eq!(p.image, oracle);
    }

    #[test]
    fn quarter_turn_matches_rotate_then_crop() {
        let img = noise(300, 300, 3);
        let spec = PatchSpec::desk();
        let p = crop_oriented_patch(&img, 149.5, 149.5, 90.0, false, &spec, &prov()).unwrap();
        let rotated = rotate_white_fill(&img, -90.0);
        assert_eq!(p.image, crop(&rotated, 86, 86, 128, 128).unwrap());
    }

    #[test]
    fn escaping_square_is_a_range_error() {
        let img = noise(200, 200, 4);
        let spec = PatchSpec::desk();
        let r = crop_oriented_patch(&img, 60.0, 60.0, 30.0, false, &spec, &prov());
        assert!(matches!(r, Err(Error::Range(_))));
    }

    #[test]
    fn full_mask_always_accepted_empty_mask_always_rejected() {
        let img = Image::filled(220, 200, [0.5, 0.3, 0.6]);
        let spec = PatchSpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ones = GrayMask::ones(220, 200);
        let zeros = GrayMask::zeros(220, 200);
        for _ in 0..50 {
            let d = sample_random_patch(&img, Some(&ones), &mut rng, &spec, &prov()).unwrap();
            assert!(matches!(d, Draw::Accepted { coverage: Some(c), .. } if c == 1.0));
            let d = sample_random_patch(&img, Some(&zeros), &mut rng, &spec, &prov()).unwrap();
            assert_eq!(d, Draw::Rejected(Rejection::LowCoverage(0.0)));
        }
    }

    #[test]
    fn small_image_is_a_parameter_error() {
        let img = Image::white(100, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = sample_random_patch(&img, None, &mut rng, &PatchSpec::desk(), &prov());
        assert!(matches!(r, Err(Error::Param(_))));
    }

    /// Maps each final-patch pixel straight back to the source mask.
    fn direct_coverage(mask: &GrayMask, x0: usize, y0: usize, angle: f64, spec: &PatchSpec) -> f64 {
        let big = spec.random_crop as f64;
        let c = (big - 1.0) / 2.0;
        let off = ((spec.random_crop - spec.side) / 2) as f64;
        let (s, co) = angle.to_radians().sin_cos();
        let mut hits = 0;
        for j in 0..spec.side {
            for i in 0..spec.side {
                let ox = i as f64 + off - c;
                let oy = j as f64 + off - c;
                let sx = (c + ox * co - oy * s).round();
                let sy = (c + ox * s + oy * co).round();
                let inside = sx >= 0.0 && sy >= 0.0 && sx < big && sy < big;
                if inside && mask.get(x0 + sx as usize, y0 + sy as usize) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (spec.side * spec.side) as f64
    }

    #[test]
    fn acceptance_rate_matches_independent_recomputation() {
        let syn = synth_large_image(&SynthSpec::desk(Category::K, 21)).unwrap();
        let spec = PatchSpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut shadow = rng.clone();
        let mut accepted = 0;
        let mut expected = 0;
        for _ in 0..10_000 {
            let d = sample_random_patch(&syn.image, Some(&syn.mask), &mut rng, &spec, &prov())
                .unwrap();
            // replay the same random draws
            let x0 = shadow.gen_range(0..=syn.image.width() - spec.random_crop);
            let y0 = shadow.gen_range(0..=syn.image.height() - spec.random_crop);
            let angle: f64 = shadow.gen_range(0.0..360.0);
            let cov = direct_coverage(&syn.mask, x0, y0, angle, &spec);
            let patch = crop(
                &rotate_white_fill(&crop(&syn.image, x0, y0, 181, 181).unwrap(), angle),
                26,
                26,
                128,
                128,
            )
            .unwrap();
            if blank_fraction(&patch) <= 0.5 && cov >= 0.7 {
                expected += 1;
            }
            if let Draw::Accepted { coverage, .. } = d {
                accepted += 1;
                assert!((coverage.unwrap() - cov).abs() < 1e-6);
            }
        }
        assert_eq!(accepted, expected);
        assert!(accepted > 0, "no accepted draws");
    }

    #[test]
    fn network_input_is_a_resize() {
        let spec = PatchSpec::desk();
        let p = PatchSample::new(noise(128, 128, 9), &prov(), 1, 0.0);
        let x = to_network_input(&p, &spec).unwrap();
        assert_eq!(x, resize_bilinear(&p.image, 112, 112).unwrap());
        let c = PatchSample::new(Image::filled(128, 128, [0.2, 0.4, 0.6]), &prov(), 1, 0.0);
        let y = to_network_input(&c, &spec).unwrap();
        assert!(y.data().chunks(3).all(|px| (px[0] - 0.2).abs() < 1e-6
            && (px[1] - 0.4).abs() < 1e-6
            && (px[2] - 0.6).abs() < 1e-6));
        let same = PatchSpec { input: 128, ..spec };
        assert_eq!(to_network_input(&p, &same).unwrap(), p.image);
    }

    #[test]
    fn anchors_from_the_log_yield_upright_patches() {
        let syn = synth_large_image(&SynthSpec::desk(Category::K, 4)).unwrap();
        let spec = PatchSpec::desk();
        let anchors = syn.log.anchors(612, 480, spec.side, spec.rescue);
        let (patches, skipped) = oriented_patches(&syn.image, &anchors, &spec, &prov());
        assert_eq!(patches.len() + skipped, anchors.len());
        assert!(!patches.is_empty());
        for p in &patches {
            let top = crop(&p.image, 0, 0, 128, 8).unwrap();
            let bottom = crop(&p.image, 0, 120, 128, 8).unwrap();
            assert!(blank_fraction(&top) > 0.5, "top blank {}", blank_fraction(&top));
            assert!(blank_fraction(&bottom) < 0.05);
        }
    }
}
