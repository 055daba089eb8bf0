use super::*;

fn desk(cat: Category, seed: u64) -> Synthesized {
    synth_large_image(&SynthSpec::desk(cat, seed)).unwrap()
}

#[test]
fn stroma_mask_is_empty() {
    for cat in [Category::S, Category::SInflamed] {
        let out = desk(cat, 5);
        assert_eq!(out.mask.count(), 0);
        assert!(out.log.band.is_none());
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let a = desk(Category::K, 11);
    let b = desk(Category::K, 11);
    assert_eq!(a.image, b.image);
    assert_eq!(a.mask, b.mask);
    assert_eq!(a.log, b.log);
    let c = desk(Category::K, 12);
    assert_ne!(a.image, c.image);
}

/// Boundary normal from the logged geometry, by a wider difference than the
/// generator uses, as a direction angle folded into [0, 180).
fn boundary_normal_axis(b: &BandGeometry, s: f64) -> f64 {
    let h = 1.0;
    let (x0, y0) = b.to_image(s - h, b.bottom(s - h));
    let (x1, y1) = b.to_image(s + h, b.bottom(s + h));
    let (tx, ty) = (x1 - x0, y1 - y0);
    // normal = tangent turned a quarter; angle counter-clockwise on screen
    let (nx, ny) = (-ty, tx);
    (-ny).atan2(nx).to_degrees().rem_euclid(180.0)
}

fn axis_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

#[test]
fn keratocyst_basal_nuclei_follow_the_boundary_normal() {
    for seed in 0..4 {
        let out = desk(Category::K, seed);
        let band = out.log.band.as_ref().unwrap();
        let basal: Vec<_> = out
            .log
            .nuclei
            .iter()
            .filter(|n| n.role == NucleusRole::Basal)
            .collect();
        assert!(basal.len() > 40, "{} basal nuclei", basal.len());
        let aligned = basal
            .iter()
            .filter(|n| {
                let (s, _) = band.to_local(n.x, n.y);
                axis_gap(n.angle, boundary_normal_axis(band, s)) < 15.0
            })
            .count();
        assert!(aligned as f64 >= 0.9 * basal.len() as f64, "{aligned}/{}", basal.len());
    }
}

#[test]
fn thick_non_keratocyst_basal_nuclei_are_not_aligned() {
    let out = desk(Category::NThick, 3);
    let band = out.log.band.as_ref().unwrap();
    let basal: Vec<_> = out
        .log
        .nuclei
        .iter()
        .filter(|n| n.role == NucleusRole::Basal)
        .collect();
    let aligned = basal
        .iter()
        .filter(|n| {
            let (s, _) = band.to_local(n.x, n.y);
            axis_gap(n.angle, boundary_normal_axis(band, s)) < 15.0
        })
        .count();
    assert!((aligned as f64) < 0.4 * basal.len() as f64);
}

fn inside_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[test]
fn mask_lies_inside_band_polygon() {
    for (cat, seed) in [(Category::K, 2), (Category::N, 8), (Category::NThick, 4)] {
        let out = desk(cat, seed);
        let b = out.log.band.as_ref().unwrap();
        let (lo, hi) = b.s_range(612, 480);
        let (lo, hi) = (lo - 400.0, hi + 400.0);
        let mut poly = Vec::new();
        let mut s = lo;
        while s <= hi {
            let v = b.surface(s).min(b.top(s)) - 1.0;
            poly.push(b.to_image(s, v));
            s += 0.5;
        }
        let mut s = hi;
        while s >= lo {
            poly.push(b.to_image(s, b.bottom(s) + 1.0));
            s -= 0.5;
        }
        for y in (0..480).step_by(3) {
            for x in (0..612).step_by(3) {
                if out.mask.get(x, y) {
                    assert!(inside_polygon(&poly, x as f64, y as f64), "{cat} ({x},{y})");
                }
            }
        }
        let coverage = out.mask.coverage();
        assert!(coverage > 0.0 && coverage < 0.5, "{cat} coverage {coverage}");
    }
}

#[test]
fn band_that_cannot_fit_is_rejected() {
    let mut spec = SynthSpec::desk(Category::K, 1);
    spec.thickness = (200.0, 260.0);
    assert!(matches!(synth_large_image(&spec), Err(Error::Param(_))));
}

#[test]
fn mean_color_overlaps_between_k_and_n() {
    let means = |cat: Category| -> Vec<f64> {
        (0..12)
            .map(|s| {
                let img = desk(cat, 100 + s).image;
                img.data().iter().map(|&v| v as f64).sum::<f64>() / img.data().len() as f64
            })
            .collect()
    };
    let k = means(Category::K);
    let n = means(Category::N);
    let max = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(f64::MAX, f64::min);
    assert!(min(&k) < max(&n) && min(&n) < max(&k), "{k:?} vs {n:?}");
}

#[test]
fn dataset_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let counts = DatasetCounts::default()
        .with(Category::K, 4, 2)
        .with(Category::N, 4, 2);
    let m = build_synth_dataset(&counts, 9, "t", 0.25, 32, 40, dir.path()).unwrap();
    assert_eq!(m.rows.len(), 8);
    assert_eq!(m.case_ids().len(), 4);
    for row in &m.rows {
        assert!(dir.path().join(&row.path).exists());
        assert!(dir.path().join(row.mask_path.as_ref().unwrap()).exists());
        assert!(m.rows.iter().filter(|r| r.case_id == row.case_id).count() <= MAX_IMAGES_PER_CASE);
    }
    let reread = DatasetManifest::load(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(reread, m);
    let first = std::fs::read(dir.path().join("manifest.csv")).unwrap();
    let first_img = std::fs::read(dir.path().join(&m.rows[0].path)).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    build_synth_dataset(&counts, 9, "t", 0.25, 32, 40, dir2.path()).unwrap();
    assert_eq!(first, std::fs::read(dir2.path().join("manifest.csv")).unwrap());
    assert_eq!(first_img, std::fs::read(dir2.path().join(&m.rows[0].path)).unwrap());
    let anchors = read_anchors(&dir.path().join("anchors.csv")).unwrap();
    assert!(anchors.iter().all(|a| m.rows.iter().any(|r| r.path == a.path)));
}

#[test]
fn per_case_cap_is_enforced() {
    let counts = DatasetCounts::default().with(Category::K, 61, 2);
    assert!(matches!(counts.validate(), Err(Error::Param(_))));
    let counts = DatasetCounts::default().with(Category::K, 60, 2);
    assert!(counts.validate().is_ok());
    let plan = counts.plan();
    for case in 0..2 {
        assert_eq!(plan.iter().filter(|p| p.1 == case).count(), MAX_IMAGES_PER_CASE);
    }
}
