use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{Gradients, InitMode, Model};
use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Training stops once validation accuracy strictly exceeds this.
    pub early_stop_accuracy: f64,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 60,
            early_stop_accuracy: 0.98,
            seed: 42,
            init: InitMode::Uniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Param(format!("learning rate {} must be ≥ 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Param(format!("momentum {} outside [0,1)", self.momentum)));
        }
        Ok(())
    }
}

/// Network inputs with integer labels. Pixel-valued inputs are held as
/// bytes (`v/255`) to keep large patch sets compact.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    shape: [usize; 3],
    storage: Storage,
    labels: Vec<usize>,
}

#[derive(Clone, Debug)]
enum Storage {
    Bytes(Vec<u8>),
    Floats(Vec<f32>),
}

impl LabeledSet {
    pub fn bytes(shape: [usize; 3]) -> Self {
        LabeledSet {
            shape,
            storage: Storage::Bytes(Vec::new()),
            labels: Vec::new(),
        }
    }

    pub fn floats(shape: [usize; 3]) -> Self {
        LabeledSet {
            shape,
            storage: Storage::Floats(Vec::new()),
            labels: Vec::new(),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    fn stride(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn push(&mut self, input: &Tensor<f32>, label: usize) -> Result<()> {
        if input.shape() != self.shape {
            return Err(Error::shape(&self.shape, input.shape()));
        }
        match &mut self.storage {
            Storage::Bytes(b) => b.extend(input.data().iter().map(|&v| crate::image::quantize(v))),
            Storage::Floats(f) => f.extend_from_slice(input.data()),
        }
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn relabel(&mut self, map: impl Fn(usize) -> usize) {
        for l in &mut self.labels {
            *l = map(*l);
        }
    }

    pub fn input(&self, i: usize) -> Tensor<f32> {
        let n = self.stride();
        let data = match &self.storage {
            Storage::Bytes(b) => b[i * n..(i + 1) * n].iter().map(|&v| v as f32 / 255.0).collect(),
            Storage::Floats(f) => f[i * n..(i + 1) * n].to_vec(),
        };
        Tensor::from_vec(&self.shape, data).expect("stored with matching shape")
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        let n = self.stride();
        let storage = match &self.storage {
            Storage::Bytes(b) => Storage::Bytes(indices.iter().flat_map(|&i| b[i * n..(i + 1) * n].iter().copied()).collect()),
            Storage::Floats(f) => Storage::Floats(indices.iter().flat_map(|&i| f[i * n..(i + 1) * n].iter().copied()).collect()),
        };
        LabeledSet {
            shape: self.shape,
            storage,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// SGD with classical momentum: `v ← μv − η·g`, `w ← w + v`.
pub struct Sgd<T = f32> {
    velocity: Gradients<T>,
    pub epoch: usize,
    pub batch: usize,
}

impl<T: Real> Sgd<T> {
    pub fn new(model: &Model<T>) -> Self {
        Sgd {
            velocity: Gradients::zeros_like(model),
            epoch: 0,
            batch: 0,
        }
    }
}

fn sum_in_order<T: Real>(parts: Vec<Gradients<T>>) -> Option<Gradients<T>> {
    let mut iter = parts.into_iter();
    let mut total = iter.next()?;
    for part in iter {
        for (acc, p) in total.params.iter_mut().zip(part.params) {
            if let (Some(acc), Some(p)) = (acc.as_mut(), p) {
                for (a, v) in acc.weight.data_mut().iter_mut().zip(p.weight.data()) {
                    *a += *v;
                }
                for (a, v) in acc.bias.data_mut().iter_mut().zip(p.bias.data()) {
                    *a += *v;
                }
            }
        }
    }
    Some(total)
}

/// One momentum step on the mean cross-entropy of `batch`. Per-example
/// gradients may be computed in parallel; they are summed in batch order so
/// the update does not depend on the worker count.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    opt: &mut Sgd<T>,
    batch: &[Tensor<T>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() || batch.len() != labels.len() {
        return Err(Error::Param(format!(
            "batch of {} inputs with {} labels",
            batch.len(),
            labels.len()
        )));
    }
    let scale = T::from_f64(1.0 / batch.len() as f64);
    let m: &Model<T> = model;
    let results: Vec<Result<(T, Gradients<T>)>> = batch
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &y)| {
            let mut g = Gradients::zeros_like(m);
            let (loss, _) = m.accumulate_example(x, y, &mut g, scale)?;
            Ok((loss, g))
        })
        .collect();
    let mut loss_sum = 0.0f64;
    let mut parts = Vec::with_capacity(results.len());
    for r in results {
        let (loss, g) = r?;
        loss_sum += loss.as_f64();
        parts.push(g);
    }
    let mean_loss = loss_sum / batch.len() as f64;
    if !mean_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: opt.epoch,
            batch: opt.batch,
            loss: mean_loss,
        });
    }
    let grads = sum_in_order(parts).expect("non-empty batch");
    let lr = T::from_f64(cfg.learning_rate);
    let mu = T::from_f64(cfg.momentum);
    for ((p, v), g) in model
        .params_mut()
        .iter_mut()
        .zip(opt.velocity.params.iter_mut())
        .zip(grads.params)
    {
        let (Some(p), Some(v), Some(g)) = (p.as_mut(), v.as_mut(), g) else {
            continue;
        };
        for ((w, vel), d) in p
            .weight
            .data_mut()
            .iter_mut()
            .zip(v.weight.data_mut())
            .zip(g.weight.data())
        {
            *vel = mu * *vel - lr * *d;
            *w += *vel;
        }
        for ((w, vel), d) in p
            .bias
            .data_mut()
            .iter_mut()
            .zip(v.bias.data_mut())
            .zip(g.bias.data())
        {
            *vel = mu * *vel - lr * *d;
            *w += *vel;
        }
    }
    opt.batch += 1;
    Ok(mean_loss)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax<T: Real>(probs: &[T]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Accuracy and mean cross-entropy over a labeled set.
pub fn evaluate(model: &Model<f32>, set: &LabeledSet) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Evaluation("empty evaluation set".into()));
    }
    let per: Vec<Result<(bool, f64)>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let logits = model.logits(&set.input(i))?;
            let label = set.labels()[i];
            let (loss, probs) = super::softmax_cross_entropy(&logits, label);
            Ok((argmax(&probs) == label, loss as f64))
        })
        .collect();
    let mut correct = 0usize;
    let mut loss = 0.0;
    for r in per {
        let (ok, l) = r?;
        correct += ok as usize;
        loss += l;
    }
    Ok(Evaluation {
        accuracy: correct as f64 / set.len() as f64,
        mean_loss: loss / set.len() as f64,
    })
}

/// Summary of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_val_accuracy: f64,
    pub lowest_val_loss: f64,
    pub wall_clock_secs: f64,
}

/// Trains `model` in place from its current weights. The model left behind
/// is the snapshot with the highest validation accuracy (earliest on ties).
pub fn fit(
    model: &mut Model<f32>,
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64, &Evaluation),
) -> Result<RunRecord> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let started = Instant::now();
    let mut opt = Sgd::new(model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_0DE5);
    let mut best_acc = f64::NEG_INFINITY;
    let mut lowest_loss = f64::INFINITY;
    let mut best_model = model.clone();
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        opt.epoch = epoch;
        opt.batch = 0;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Tensor<f32>> = chunk.iter().map(|&i| train.input(i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            loss_sum += train_step(model, &mut opt, &inputs, &labels, cfg)?;
            batches += 1;
        }
        epochs_run = epoch + 1;
        let eval = evaluate(model, val)?;
        if !eval.mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches,
                loss: eval.mean_loss,
            });
        }
        progress(epoch, loss_sum / batches as f64, &eval);
        lowest_loss = lowest_loss.min(eval.mean_loss);
        if eval.accuracy > best_acc {
            best_acc = eval.accuracy;
            best_model = model.clone();
        }
        if eval.accuracy > cfg.early_stop_accuracy {
            break;
        }
    }
    *model = best_model;
    Ok(RunRecord {
        seed: cfg.seed,
        epochs_run,
        best_val_accuracy: best_acc.max(0.0),
        lowest_val_loss: lowest_loss,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerConfig;

    fn linear_model() -> Model<f32> {
        Model::new(
            [1, 1, 4],
            vec![LayerConfig::GlobalAvgPool, LayerConfig::Dense { units: 2 }, LayerConfig::Softmax],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn x(v: [f32; 4]) -> Tensor<f32> {
        Tensor::from_vec(&[1, 1, 4], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut m = linear_model();
        m.init_params(InitMode::Gaussian, 1);
        let before = m.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = Sgd::new(&m);
        for _ in 0..5 {
            train_step(&mut m, &mut opt, &[x([1.0, 0.5, -0.2, 0.3])], &[1], &cfg).unwrap();
        }
        assert_eq!(m, before);
    }

    #[test]
    fn single_example_loss_is_non_increasing() {
        let mut m = linear_model();
        m.init_params(InitMode::Gaussian, 2);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            momentum: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = Sgd::new(&m);
        let input = x([0.9, -0.4, 0.3, 0.7]);
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let loss = train_step(&mut m, &mut opt, &[input.clone()], &[0], &cfg).unwrap();
            assert!(loss <= prev + 1e-7, "{loss} > {prev}");
            prev = loss;
        }
    }

    #[test]
    fn identical_seeds_give_identical_weights() {
        let run = || {
            let mut m = linear_model();
            m.init_params(InitMode::Uniform, 3);
            let mut opt = Sgd::new(&m);
            let cfg = TrainConfig::default();
            for step in 0..20 {
                let v = step as f32 / 20.0;
                train_step(&mut m, &mut opt, &[x([v, 1.0 - v, 0.5, -v]), x([0.1, v, v, 0.2])], &[0, 1], &cfg).unwrap();
            }
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut m = linear_model();
        let mut opt = Sgd::new(&m);
        assert!(train_step(&mut m, &mut opt, &[], &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn non_finite_loss_reports_position() {
        let mut m = linear_model();
        let mut opt = Sgd::new(&m);
        opt.epoch = 4;
        opt.batch = 7;
        let err = train_step(&mut m, &mut opt, &[x([f32::NAN, 0.0, 0.0, 0.0])], &[0], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 4, batch: 7, .. }));
    }

    #[test]
    fn zero_model_at_zero_rate_scores_the_majority_rate() {
        // Ties resolve to the lowest category index; category 0 is the majority.
        let mut train = LabeledSet::floats([1, 1, 4]);
        let mut val = LabeledSet::floats([1, 1, 4]);
        for i in 0..10 {
            train.push(&x([i as f32, 0.0, 1.0, 0.0]), (i % 3 == 0) as usize).unwrap();
            val.push(&x([0.0, i as f32, 0.0, 1.0]), (i % 4 == 0) as usize).unwrap();
        }
        let mut m = linear_model();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let rec = fit(&mut m, &train, &val, &cfg, |_, _, _| {}).unwrap();
        let majority = val.labels().iter().filter(|&&l| l == 0).count() as f64 / 10.0;
        assert_eq!(rec.best_val_accuracy, majority);
    }
}
