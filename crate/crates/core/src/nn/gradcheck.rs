//! Central finite-difference verification of back-propagation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Model, Saved};
use super::{LayerConfig, Tensor};
use crate::error::{Error, Result};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for the relative error; pairs whose gradients are both
/// below this are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct KindReport {
    /// e.g. `"conv2d.weight"`, `"dense.bias"`, `"input"`.
    pub kind: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub kinds: Vec<KindReport>,
    /// Perturbations that flipped a ReLU or changed a pooling argmax; the
    /// objective is not differentiable across them, so they are replaced by
    /// fresh samples.
    pub skipped_kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Copy)]
enum Target {
    Weight(usize, usize),
    Bias(usize, usize),
    Input(usize),
}

fn activation_pattern(model: &Model<f64>, input: &Tensor<f64>) -> Result<Vec<u32>> {
    let trace = model.trace(input, model.layers().len() - 1)?;
    let mut sig = Vec::new();
    for s in &trace.saved {
        match s {
            Saved::Relu { mask } => sig.extend(mask.iter().map(|&b| b as u32)),
            Saved::Pool { argmax, .. } => sig.extend_from_slice(argmax),
            _ => {}
        }
    }
    Ok(sig)
}

/// Compares analytic gradients of the cross-entropy at `(input, label)`
/// against central differences for up to `per_kind` randomly chosen
/// parameters of every parameter kind, plus input pixels.
pub fn grad_check(
    model: &Model<f64>,
    input: &Tensor<f64>,
    label: usize,
    per_kind: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if model.param_count() > 20_000 {
        return Err(Error::Param(format!(
            "grad_check is limited to 20k parameters, model has {}",
            model.param_count()
        )));
    }
    let (_, grads) = model.param_gradients(input, label)?;
    let (_, input_grad) = model.input_gradient(input, label)?;
    let base_pattern = activation_pattern(model, input)?;

    let mut kinds: Vec<(String, Vec<Target>)> = Vec::new();
    for (li, layer) in model.layers().iter().enumerate() {
        let Some(p) = &model.params()[li] else { continue };
        let name = layer.name();
        let w: Vec<Target> = (0..p.weight.len()).map(|j| Target::Weight(li, j)).collect();
        let b: Vec<Target> = (0..p.bias.len()).map(|j| Target::Bias(li, j)).collect();
        for (suffix, targets) in [("weight", w), ("bias", b)] {
            let key = format!("{name}.{suffix}");
            match kinds.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.extend(targets),
                None => kinds.push((key, targets)),
            }
        }
    }
    kinds.push(("input".into(), (0..input.len()).map(Target::Input).collect()));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        kinds: Vec::new(),
        skipped_kinks: 0,
    };
    for (kind, mut targets) in kinds {
        targets.shuffle(&mut rng);
        let mut checked = 0;
        let mut worst = 0.0f64;
        for target in targets {
            if checked == per_kind {
                break;
            }
            let analytic = match target {
                Target::Weight(l, j) => grads.params[l].as_ref().expect("grad").weight.data()[j],
                Target::Bias(l, j) => grads.params[l].as_ref().expect("grad").bias.data()[j],
                Target::Input(j) => input_grad.data()[j],
            };
            let eval = |delta: f64| -> Result<(f64, Vec<u32>)> {
                let mut m = model.clone();
                let mut x = input.clone();
                match target {
                    Target::Weight(l, j) => m.params_mut()[l].as_mut().expect("p").weight.data_mut()[j] += delta,
                    Target::Bias(l, j) => m.params_mut()[l].as_mut().expect("p").bias.data_mut()[j] += delta,
                    Target::Input(j) => x.data_mut()[j] += delta,
                }
                Ok((m.loss(&x, label)?, activation_pattern(&m, &x)?))
            };
            let (plus, pat_plus) = eval(FD_STEP)?;
            let (minus, pat_minus) = eval(-FD_STEP)?;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.kinds.push(KindReport {
            kind,
            checked,
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Small model exercising every layer kind, sized for finite differences.
pub fn every_kind_model(categories: usize) -> Model<f64> {
    Model::new(
        [8, 8, 2],
        vec![
            LayerConfig::conv(3, 4),
            LayerConfig::Relu,
            LayerConfig::pool(2),
            LayerConfig::Conv2d {
                kernel: 3,
                filters: 5,
                stride: 2,
            },
            LayerConfig::Relu,
            LayerConfig::GlobalAvgPool,
            LayerConfig::Dense { units: 6 },
            LayerConfig::Relu,
            LayerConfig::Dense { units: categories },
            LayerConfig::Softmax,
        ],
        (0..categories).map(|i| format!("c{i}")).collect(),
    )
    .expect("valid toy architecture")
}
