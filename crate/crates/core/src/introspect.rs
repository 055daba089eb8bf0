//! Looking inside a trained first CNN: per-filter output landscapes, dead
//! filter counts, gradient-ascent preimages and activation overlays.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::image::{resize_plane, Image};
use crate::nn::{LayerConfig, Model, Tensor};

pub const ZERO_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_STEPS: usize = 40;
pub const DEFAULT_STEP_SIZE: f64 = 0.05;

/// Indices of the convolutional layers.
pub fn conv_layers(model: &Model<f32>) -> Vec<usize> {
    model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerConfig::Conv2d { .. }))
        .map(|(i, _)| i)
        .collect()
}

pub fn last_conv_layer(model: &Model<f32>) -> Option<usize> {
    conv_layers(model).pop()
}

/// Number of layers to run so the output is the conv layer's activation
/// (its ReLU included when one follows).
fn activation_end(model: &Model<f32>, layer: usize) -> Result<(usize, usize)> {
    let layers = model.layers();
    match layers.get(layer) {
        Some(LayerConfig::Conv2d { filters, .. }) => {
            let end = if matches!(layers.get(layer + 1), Some(LayerConfig::Relu)) {
                layer + 2
            } else {
                layer + 1
            };
            Ok((end, *filters))
        }
        _ => Err(Error::Param(format!("layer {layer} is not convolutional"))),
    }
}

fn check_filter(filters: usize, filter: usize) -> Result<()> {
    if filter >= filters {
        return Err(Error::Param(format!("filter {filter} of {filters}")));
    }
    Ok(())
}

/// Spatially averaged filter outputs, `values[image][filter]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Landscape {
    pub layer: usize,
    pub values: Vec<Vec<f64>>,
}

impl Landscape {
    pub fn filters(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Column of one filter across the probe images.
    pub fn filter_column(&self, filter: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[filter]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.filters()).map(|f| format!("f{f}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.values {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.8}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn spatial_means(act: &Tensor<f32>) -> Vec<f64> {
    let s = act.shape();
    let (hw, c) = (s[0] * s[1], s[2]);
    let mut sums = vec![0.0f64; c];
    for px in act.data().chunks(c) {
        for (acc, &v) in sums.iter_mut().zip(px) {
            *acc += v as f64;
        }
    }
    sums.iter().map(|v| v / hw as f64).collect()
}

pub fn filter_landscape(model: &Model<f32>, images: &[Image], layer: usize) -> Result<Landscape> {
    let (end, _) = activation_end(model, layer)?;
    let values = images
        .iter()
        .map(|img| Ok(spatial_means(&model.forward_to(&Tensor::from_image(img), end)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Landscape { layer, values })
}

/// Filters whose response never exceeds `tolerance` on any probe image.
pub fn dead_filters(landscape: &Landscape, tolerance: f64) -> Vec<usize> {
    (0..landscape.filters())
        .filter(|&f| landscape.values.iter().all(|row| row[f] <= tolerance))
        .collect()
}

pub fn zero_filter_fraction(landscape: &Landscape, tolerance: f64) -> f64 {
    let n = landscape.filters();
    if n == 0 {
        return 0.0;
    }
    dead_filters(landscape, tolerance).len() as f64 / n as f64
}

/// Everything known about one filter.
#[derive(Clone, Debug)]
pub struct FilterReport {
    pub layer: usize,
    pub filter: usize,
    pub means: Vec<f64>,
    pub zero_output: bool,
    pub preimage: Option<Image>,
    pub overlay: Option<Image>,
}

pub fn filter_reports(landscape: &Landscape, tolerance: f64) -> Vec<FilterReport> {
    (0..landscape.filters())
        .map(|f| {
            let means = landscape.filter_column(f);
            FilterReport {
                layer: landscape.layer,
                filter: f,
                zero_output: means.iter().all(|&v| v <= tolerance),
                means,
                preimage: None,
                overlay: None,
            }
        })
        .collect()
}

/// Mean response and `K` vs `N` comparison for one filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterStat {
    pub filter: usize,
    pub mean_k: f64,
    pub mean_n: f64,
    pub diff: f64,
    pub p_value: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Two-sided Wilcoxon rank-sum p-value, normal approximation with tie
/// correction.
pub fn rank_sum_p_value(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_a += rank * all[i..=j].iter().filter(|e| e.1).count() as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let u = rank_a - n1 * (n1 + 1.0) / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = (u - n1 * n2 / 2.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0)
}

pub fn filter_statistics(k: &Landscape, n: &Landscape) -> Result<Vec<FilterStat>> {
    if k.filters() != n.filters() {
        return Err(Error::shape(&[k.filters()], &[n.filters()]));
    }
    Ok((0..k.filters())
        .map(|f| {
            let (a, b) = (k.filter_column(f), n.filter_column(f));
            let (mean_k, mean_n) = (mean(&a), mean(&b));
            FilterStat {
                filter: f,
                mean_k,
                mean_n,
                diff: mean_k - mean_n,
                p_value: rank_sum_p_value(&a, &b),
            }
        })
        .collect())
}

pub fn filter_statistics_csv(stats: &[FilterStat]) -> String {
    let mut out = String::from("filter,mean_K,mean_N,diff,p_value\n");
    for s in stats {
        let _ = writeln!(
            out,
            "{},{:.8},{:.8},{:.8},{:.6e}",
            s.filter, s.mean_k, s.mean_n, s.diff, s.p_value
        );
    }
    out
}

/// Result of gradient ascent on one filter.
#[derive(Clone, Debug)]
pub struct Preimage {
    pub image: Image,
    pub flat_gradient: bool,
    pub initial_mean: f64,
    pub final_mean: f64,
}

/// Mean activation of one filter and its gradient with respect to the input.
pub fn filter_mean_gradient(model: &Model<f32>, input: &Tensor<f32>, layer: usize, filter: usize) -> Result<(f64, Vec<f32>)> {
    let (end, filters) = activation_end(model, layer)?;
    check_filter(filters, filter)?;
    let trace = model.trace(input, end)?;
    let act = &trace.output;
    let hw = act.shape()[0] * act.shape()[1];
    let mut g = vec![0.0f32; act.len()];
    let mut sum = 0.0f64;
    for p in 0..hw {
        sum += act.data()[p * filters + filter] as f64;
        g[p * filters + filter] = 1.0 / hw as f32;
    }
    let grad = model.backward(&trace, g, None, true).expect("input gradient");
    Ok((sum / hw as f64, grad))
}

fn to_image(model: &Model<f32>, x: &[f32]) -> Image {
    let [h, w, _] = model.input_shape();
    Image::from_vec(w, h, x.to_vec()).expect("input sized")
}

/// `x ← clamp(x + step·g/‖g‖)` from a seeded `0.5 ± 0.05` start.
pub fn gradient_ascent_preimage(
    model: &Model<f32>,
    layer: usize,
    filter: usize,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<Preimage> {
    if steps == 0 {
        return Err(Error::Param("gradient ascent needs at least one step".into()));
    }
    let shape = model.input_shape();
    if shape[2] != 3 {
        return Err(Error::Param(format!("preimages need a 3-channel input, model takes {shape:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let mut x: Vec<f32> = (0..n).map(|_| 0.5 + rng.gen_range(-0.05f32..=0.05)).collect();
    let mut flat = false;
    let mut initial = None;
    let mut current = 0.0;
    for step in 0..steps {
        let (m, g) = filter_mean_gradient(model, &Tensor::from_vec(&shape, x.clone())?, layer, filter)?;
        initial.get_or_insert(m);
        current = m;
        let norm = g.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            flat = step == 0;
            break;
        }
        let scale = (step_size / norm) as f32;
        if scale == 0.0 {
            continue;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi = (*xi + scale * gi).clamp(0.0, 1.0);
        }
    }
    let image = to_image(model, &x);
    if !flat {
        current = spatial_means(&model.forward_to(&Tensor::from_image(&image), activation_end(model, layer)?.0)?)[filter];
    }
    Ok(Preimage {
        image,
        flat_gradient: flat,
        initial_mean: initial.unwrap_or(current),
        final_mean: current,
    })
}

/// Blue at 0, red at 1.
pub fn ramp(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    [t, 0.0, 1.0 - t]
}

/// Overlay image plus the flag set when the response was constant.
#[derive(Clone, Debug)]
pub struct Overlay {
    pub image: Image,
    pub flat_response: bool,
}

/// Raw response map of one filter, `(width, height, values)`.
pub fn response_map(model: &Model<f32>, image: &Image, layer: usize, filter: usize) -> Result<(usize, usize, Vec<f32>)> {
    let (end, filters) = activation_end(model, layer)?;
    check_filter(filters, filter)?;
    let act = model.forward_to(&Tensor::from_image(image), end)?;
    let (h, w) = (act.shape()[0], act.shape()[1]);
    let values = (0..h * w).map(|p| act.data()[p * filters + filter]).collect();
    Ok((w, h, values))
}

pub fn activation_overlay(model: &Model<f32>, image: &Image, layer: usize, filter: usize, alpha: f64) -> Result<Overlay> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Param(format!("alpha {alpha} outside [0, 1]")));
    }
    let (w, h, values) = response_map(model, image, layer, filter)?;
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return Ok(Overlay {
            image: image.clone(),
            flat_response: true,
        });
    }
    let norm: Vec<f32> = values.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let up = resize_plane(&norm, w, h, 1, image.width(), image.height());
    let a = alpha as f32;
    let data = image
        .data()
        .chunks(3)
        .zip(&up)
        .flat_map(|(px, &t)| {
            let c = ramp(t);
            [0, 1, 2].map(|i| ((1.0 - a) * px[i] + a * c[i]).clamp(0.0, 1.0))
        })
        .collect();
    Ok(Overlay {
        image: Image::from_vec(image.width(), image.height(), data)?,
        flat_response: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InitMode;

    fn model(filters: usize, seed: u64) -> Model<f32> {
        let layers = vec![
            LayerConfig::conv(3, filters),
            LayerConfig::Relu,
            LayerConfig::pool(2),
            LayerConfig::conv(3, 6),
            LayerConfig::Relu,
            LayerConfig::GlobalAvgPool,
            LayerConfig::Dense { units: 2 },
            LayerConfig::Softmax,
        ];
        let mut m = Model::new([12, 12, 3], layers, vec!["K".into(), "N".into()]).unwrap();
        m.init_params(InitMode::Gaussian, seed);
        m
    }

    fn probes(n: usize, seed: u64) -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Image::from_fn(12, 12, |_, _| [rng.gen(), rng.gen(), rng.gen()]))
            .collect()
    }

    fn zero_filter(m: &mut Model<f32>, layer: usize, f: usize) {
        let p = m.params_mut()[layer].as_mut().unwrap();
        let filters = p.bias.len();
        for (i, v) in p.weight.data_mut().iter_mut().enumerate() {
            if i % filters == f {
                *v = 0.0;
            }
        }
        p.bias.data_mut()[f] = 0.0;
    }

    #[test]
    fn landscape_matches_truncated_model() {
        let m = model(4, 1);
        let imgs = probes(3, 2);
        let l = filter_landscape(&m, &imgs, 3).unwrap();
        assert_eq!(l.values.len(), 3);
        assert_eq!(l.filters(), 6);
        for (img, row) in imgs.iter().zip(&l.values) {
            let act = m.forward_to(&Tensor::from_image(img), 5).unwrap();
            let s = act.shape().to_vec();
            for f in 0..6 {
                let mut acc = 0.0f64;
                for p in 0..s[0] * s[1] {
                    acc += act.data()[p * 6 + f] as f64;
                }
                assert!((acc / (s[0] * s[1]) as f64 - row[f]).abs() < 1e-12);
                assert!(row[f] >= 0.0);
            }
        }
        assert!(filter_landscape(&m, &imgs, 1).is_err());
        assert_eq!(conv_layers(&m), vec![0, 3]);
    }

    #[test]
    fn landscape_of_zero_model_is_zero() {
        let mut m = model(4, 1);
        for f in 0..4 {
            zero_filter(&mut m, 0, f);
        }
        let l = filter_landscape(&m, &probes(2, 3), 0).unwrap();
        assert!(l.values.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(zero_filter_fraction(&l, ZERO_TOLERANCE), 1.0);
    }

    #[test]
    fn landscape_is_permutation_equivariant() {
        let m = model(4, 5);
        let imgs = probes(4, 6);
        let l = filter_landscape(&m, &imgs, 0).unwrap();
        let rev: Vec<Image> = imgs.iter().rev().cloned().collect();
        let lr = filter_landscape(&m, &rev, 0).unwrap();
        let mut back = lr.values.clone();
        back.reverse();
        assert_eq!(back, l.values);
    }

    #[test]
    fn zero_fraction_cases() {
        let none = Landscape { layer: 0, values: vec![vec![0.5; 10]; 3] };
        assert_eq!(zero_filter_fraction(&none, ZERO_TOLERANCE), 0.0);
        let mut planted = vec![vec![0.2; 100]; 4];
        for row in &mut planted {
            for f in (0..100).step_by(10).flat_map(|b| b..b + 3) {
                row[f] = 0.0;
            }
        }
        let l = Landscape { layer: 0, values: planted };
        assert_eq!(zero_filter_fraction(&l, ZERO_TOLERANCE), 0.3);
        assert_eq!(dead_filters(&l, ZERO_TOLERANCE).len(), 30);
    }

    #[test]
    fn single_filter_single_image_hand_mean() {
        let layers = vec![LayerConfig::conv(1, 1), LayerConfig::Relu, LayerConfig::GlobalAvgPool, LayerConfig::Dense { units: 2 }, LayerConfig::Softmax];
        let mut m = Model::new([2, 2, 3], layers, vec!["a".into(), "b".into()]).unwrap();
        m.init_params(InitMode::Gaussian, 0);
        let p = m.params_mut()[0].as_mut().unwrap();
        p.weight.data_mut().copy_from_slice(&[1.0, 0.0, 0.0]);
        p.bias.data_mut()[0] = -0.25;
        let img = Image::from_vec(2, 2, vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.75, 0.0, 0.0]).unwrap();
        let l = filter_landscape(&m, &[img], 0).unwrap();
        assert!((l.values[0][0] - (0.0 + 0.25 + 0.75 + 0.5) / 4.0).abs() < 1e-7);
    }

    #[test]
    fn rank_sum_values() {
        assert_eq!(rank_sum_p_value(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        let a: Vec<f64> = (0..20).map(|i| 10.0 + i as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        assert!(rank_sum_p_value(&a, &b) < 1e-6);
        let p = rank_sum_p_value(&[1.0, 3.0, 5.0], &[2.0, 4.0, 6.0]);
        assert!(p > 0.5 && p <= 1.0);
        let k = Landscape { layer: 0, values: vec![vec![1.0, 0.0]; 3] };
        let n = Landscape { layer: 0, values: vec![vec![0.5, 0.0]; 3] };
        let s = filter_statistics(&k, &n).unwrap();
        assert_eq!(s[0].diff, 0.5);
        assert!(filter_statistics_csv(&s).starts_with("filter,mean_K,mean_N,diff,p_value\n0,"));
    }

    #[test]
    fn ascent_increases_mean_and_flags_dead() {
        let mut m = model(4, 7);
        for f in 0..6 {
            let p = gradient_ascent_preimage(&m, 3, f, 20, DEFAULT_STEP_SIZE, 1).unwrap();
            if !p.flat_gradient {
                assert!(p.final_mean >= p.initial_mean);
            }
            assert!(p.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        zero_filter(&mut m, 0, 2);
        assert!(gradient_ascent_preimage(&m, 0, 2, 5, 0.05, 1).unwrap().flat_gradient);
        assert!(gradient_ascent_preimage(&m, 0, 9, 5, 0.05, 1).is_err());
        assert!(gradient_ascent_preimage(&m, 0, 1, 0, 0.05, 1).is_err());
    }

    #[test]
    fn zero_step_returns_start() {
        let m = model(4, 8);
        let a = gradient_ascent_preimage(&m, 0, 1, 5, 0.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let start: Vec<f32> = (0..12 * 12 * 3).map(|_| 0.5 + rng.gen_range(-0.05f32..=0.05)).collect();
        assert_eq!(a.image.data(), &start[..]);
    }

    #[test]
    fn edge_filter_preimage_correlates_with_kernel() {
        let layers = vec![LayerConfig::conv(3, 1), LayerConfig::Relu, LayerConfig::GlobalAvgPool, LayerConfig::Dense { units: 2 }, LayerConfig::Softmax];
        let mut m = Model::new([24, 24, 3], layers, vec!["a".into(), "b".into()]).unwrap();
        m.init_params(InitMode::Gaussian, 0);
        let kernel = [-1.0f32, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
        let p = m.params_mut()[0].as_mut().unwrap();
        for (i, &k) in kernel.iter().enumerate() {
            for c in 0..3 {
                p.weight.data_mut()[i * 3 + c] = k;
            }
        }
        p.bias.data_mut()[0] = 0.01;
        let pre = gradient_ascent_preimage(&m, 0, 0, 40, 0.5, 4).unwrap();
        assert!(!pre.flat_gradient);
        let mut corr = 0.0f64;
        for y in 1..23 {
            for x in 1..23 {
                for (i, &k) in kernel.iter().enumerate() {
                    let (dx, dy) = (i % 3, i / 3);
                    let v = pre.image.pixel(x + dx - 1, y + dy - 1);
                    corr += k as f64 * (v[0] + v[1] + v[2]) as f64;
                }
            }
        }
        assert!(corr > 0.0);
    }

    #[test]
    fn overlay_rules() {
        let m = model(4, 9);
        let img = probes(1, 10).pop().unwrap();
        let o = activation_overlay(&m, &img, 0, 1, 0.0).unwrap();
        assert_eq!(o.image, img);
        assert!(activation_overlay(&m, &img, 0, 1, 1.5).is_err());
        let mut dead = model(4, 9);
        zero_filter(&mut dead, 0, 1);
        let o = activation_overlay(&dead, &img, 0, 1, 1.0).unwrap();
        assert!(o.flat_response);
        assert_eq!(o.image, img);
    }

    #[test]
    fn overlay_peak_matches_upsampled_argmax() {
        let m = model(4, 11);
        for (i, img) in probes(6, 12).iter().enumerate() {
            let f = i % 4;
            let o = activation_overlay(&m, img, 0, f, 1.0).unwrap();
            if o.flat_response {
                continue;
            }
            let (w, h, raw) = response_map(&m, img, 0, f).unwrap();
            let up = resize_plane(&raw, w, h, 1, 12, 12);
            let argmax = |v: &[f32]| v.iter().enumerate().fold(0, |b, (j, &x)| if x > v[b] { j } else { b });
            let red: Vec<f32> = o.image.data().chunks(3).map(|p| p[0]).collect();
            assert_eq!(red[argmax(&up)], 1.0);
            assert_eq!(up[argmax(&red)], up[argmax(&up)]);
        }
    }
}
