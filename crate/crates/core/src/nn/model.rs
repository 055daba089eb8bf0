use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    conv2d, conv2d_backward, conv2d_cached, dense, global_avg_pool, maxpool2d, maxpool2d_indexed,
    relu_in_place, softmax, ConvGeometry, LayerConfig,
};
use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// He-uniform: `U(-√(6/fan_in), √(6/fan_in))`.
    Uniform,
    /// He-normal: `N(0, 2/fan_in)`.
    Gaussian,
}

impl std::str::FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(InitMode::Uniform),
            "gaussian" => Ok(InitMode::Gaussian),
            other => Err(Error::Param(format!("unknown init mode {other:?}"))),
        }
    }
}

impl InitMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitMode::Uniform => "uniform",
            InitMode::Gaussian => "gaussian",
        }
    }
}

pub fn uniform_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

pub fn gaussian_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Ordered layer stack with its weights and category names. The last layer
/// is always a softmax whose width equals the category count.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    input_shape: [usize; 3],
    layers: Vec<LayerConfig>,
    params: Vec<Option<LayerParams<T>>>,
    categories: Vec<String>,
    // input shape of every layer, plus the output shape at the end
    shapes: Vec<Vec<usize>>,
}

/// Per-layer intermediate values recorded by [`Model::trace`].
pub(crate) enum Saved<T> {
    Conv { cols: Vec<T>, geom: ConvGeometry },
    Relu { mask: Vec<bool> },
    Pool { argmax: Vec<u32>, input_len: usize },
    Gap { h: usize, w: usize, c: usize },
    Dense { input: Vec<T> },
    Softmax,
}

pub(crate) struct Trace<T> {
    pub saved: Vec<Saved<T>>,
    /// Output of the last traced layer.
    pub output: Tensor<T>,
}

/// Gradients laid out like [`Model`] parameters.
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    pub params: Vec<Option<LayerParams<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        Gradients {
            params: model
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for p in self.params.iter_mut().flatten() {
            for v in p.weight.data_mut().iter_mut().chain(p.bias.data_mut()) {
                *v *= factor;
            }
        }
    }
}

impl<T: Real> Model<T> {
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerConfig>, categories: Vec<String>) -> Result<Self> {
        if categories.len() < 2 {
            return Err(Error::Param("a model needs at least two categories".into()));
        }
        if layers.last() != Some(&LayerConfig::Softmax) {
            return Err(Error::Param("the final layer must be softmax".into()));
        }
        let mut shapes = vec![input_shape.to_vec()];
        let mut params = Vec::with_capacity(layers.len());
        for layer in &layers {
            let input = shapes.last().expect("non-empty");
            params.push(layer.param_shapes(input).map(|(w, b)| LayerParams {
                weight: Tensor::zeros(&w),
                bias: Tensor::zeros(&b),
            }));
            let next = layer.output_shape(input)?;
            shapes.push(next);
        }
        let out = shapes.last().expect("non-empty");
        if out != &[categories.len()] {
            return Err(Error::shape(&[categories.len()], out));
        }
        Ok(Model {
            input_shape,
            layers,
            params,
            categories,
            shapes,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerConfig] {
        &self.layers
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn params(&self) -> &[Option<LayerParams<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<LayerParams<T>>] {
        &mut self.params
    }

    /// Input shape of layer `i`; `layer_input_shape(layers().len())` is the
    /// output shape.
    pub fn layer_input_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Stable tensor names used by the weights file: `"{layer}.weight"` and
    /// `"{layer}.bias"`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if let Some(p) = p {
                out.push((format!("{i}.weight"), &p.weight));
                out.push((format!("{i}.bias"), &p.bias));
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
            categories: self.categories.clone(),
            shapes: self.shapes.clone(),
        }
    }

    /// Re-draws every weight tensor from `mode`, fan-in scaled; zeroes biases.
    pub fn init_params(&mut self, mode: InitMode, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, layer) in self.layers.iter().enumerate() {
            let Some(p) = self.params[i].as_mut() else {
                continue;
            };
            let fan_in = layer.fan_in(&self.shapes[i]);
            match mode {
                InitMode::Uniform => {
                    let bound = uniform_bound(fan_in);
                    for v in p.weight.data_mut() {
                        *v = T::from_f64(rng.gen_range(-bound..bound));
                    }
                }
                InitMode::Gaussian => {
                    let normal = Normal::new(0.0, gaussian_std(fan_in)).expect("positive std");
                    for v in p.weight.data_mut() {
                        *v = T::from_f64(normal.sample(&mut rng));
                    }
                }
            }
            p.bias.data_mut().fill(T::zero());
        }
    }

    pub fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape() != self.input_shape {
            return Err(Error::shape(&self.input_shape, input.shape()));
        }
        Ok(())
    }

    fn apply(&self, i: usize, x: Tensor<T>) -> Result<Tensor<T>> {
        Ok(match self.layers[i] {
            LayerConfig::Conv2d { stride, .. } => {
                let p = self.params[i].as_ref().expect("conv params");
                conv2d(&x, &p.weight, &p.bias, stride)?
            }
            LayerConfig::Relu => {
                let mut x = x;
                relu_in_place(x.data_mut());
                x
            }
            LayerConfig::MaxPool2d { window, stride } => maxpool2d(&x, window, stride)?,
            LayerConfig::GlobalAvgPool => global_avg_pool(&x)?,
            LayerConfig::Dense { .. } => {
                let p = self.params[i].as_ref().expect("dense params");
                dense(&x, &p.weight, &p.bias)?
            }
            LayerConfig::Softmax => {
                let shape = x.shape().to_vec();
                Tensor::from_vec(&shape, softmax(x.data()))?
            }
        })
    }

    /// Output of layer `upto - 1` (the first `upto` layers applied).
    pub fn forward_to(&self, input: &Tensor<T>, upto: usize) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for i in 0..upto.min(self.layers.len()) {
            x = self.apply(i, x)?;
        }
        Ok(x)
    }

    /// Category probabilities.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward_to(input, self.layers.len())?.into_data())
    }

    /// Pre-softmax scores.
    pub fn logits(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward_to(input, self.layers.len() - 1)?.into_data())
    }

    /// Runs layers `0..upto`, recording what the backward pass needs.
    pub(crate) fn trace(&self, input: &Tensor<T>, upto: usize) -> Result<Trace<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut saved = Vec::with_capacity(upto);
        for i in 0..upto {
            let layer = self.layers[i];
            match layer {
                LayerConfig::Conv2d { stride, .. } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let (out, cols, geom) = conv2d_cached(&x, &p.weight, &p.bias, stride)?;
                    saved.push(Saved::Conv { cols, geom });
                    x = out;
                }
                LayerConfig::Relu => {
                    let mask = x.data().iter().map(|&v| v > T::zero()).collect();
                    relu_in_place(x.data_mut());
                    saved.push(Saved::Relu { mask });
                }
                LayerConfig::MaxPool2d { window, stride } => {
                    let input_len = x.len();
                    let (out, argmax) = maxpool2d_indexed(&x, window, stride)?;
                    saved.push(Saved::Pool { argmax, input_len });
                    x = out;
                }
                LayerConfig::GlobalAvgPool => {
                    let s = x.shape();
                    saved.push(Saved::Gap {
                        h: s[0],
                        w: s[1],
                        c: s[2],
                    });
                    x = global_avg_pool(&x)?;
                }
                LayerConfig::Dense { .. } => {
                    let p = self.params[i].as_ref().expect("dense params");
                    let out = dense(&x, &p.weight, &p.bias)?;
                    saved.push(Saved::Dense {
                        input: x.into_data(),
                    });
                    x = out;
                }
                LayerConfig::Softmax => {
                    let shape = x.shape().to_vec();
                    x = Tensor::from_vec(&shape, softmax(x.data()))?;
                    saved.push(Saved::Softmax);
                }
            }
        }
        Ok(Trace { saved, output: x })
    }

    /// Back-propagates `grad` (gradient w.r.t. the trace output) through the
    /// traced layers, accumulating parameter gradients into `grads` and
    /// returning the input gradient when requested. The softmax layer is
    /// never back-propagated here; losses supply logit gradients directly.
    pub(crate) fn backward(
        &self,
        trace: &Trace<T>,
        grad: Vec<T>,
        mut grads: Option<&mut Gradients<T>>,
        need_input: bool,
    ) -> Option<Vec<T>> {
        let mut g = grad;
        for i in (0..trace.saved.len()).rev() {
            // the first parameterized layer has nothing below it to feed
            let needs_below = need_input || i > 0;
            match &trace.saved[i] {
                Saved::Conv { cols, geom } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let filters = p.bias.len();
                    let sink = grads.as_deref_mut().map(|gr| {
                        let gp = gr.params[i].as_mut().expect("conv grads");
                        (gp.weight.data_mut(), gp.bias.data_mut())
                    });
                    match conv2d_backward(cols, geom, p.weight.data(), &g, filters, sink, needs_below) {
                        Some(d) => g = d,
                        None => return None,
                    }
                }
                Saved::Relu { mask } => {
                    for (v, &on) in g.iter_mut().zip(mask) {
                        if !on {
                            *v = T::zero();
                        }
                    }
                }
                Saved::Pool { argmax, input_len } => {
                    let mut d = vec![T::zero(); *input_len];
                    for (&src, &v) in argmax.iter().zip(&g) {
                        d[src as usize] += v;
                    }
                    g = d;
                }
                Saved::Gap { h, w, c } => {
                    let n = T::from_f64((h * w) as f64);
                    let mut d = Vec::with_capacity(h * w * c);
                    for _ in 0..h * w {
                        d.extend(g.iter().map(|&v| v / n));
                    }
                    g = d;
                }
                Saved::Dense { input } => {
                    let p = self.params[i].as_ref().expect("dense params");
                    let units = p.bias.len();
                    let n = input.len();
                    if let Some(gr) = grads.as_deref_mut() {
                        let gp = gr.params[i].as_mut().expect("dense grads");
                        // dW += xᵀ·g (outer product)
                        T::gemm(
                            n,
                            1,
                            units,
                            T::one(),
                            input,
                            1,
                            1,
                            &g,
                            units as isize,
                            1,
                            T::one(),
                            gp.weight.data_mut(),
                            units as isize,
                            1,
                        );
                        for (b, &v) in gp.bias.data_mut().iter_mut().zip(&g) {
                            *b += v;
                        }
                    }
                    if !needs_below {
                        return None;
                    }
                    let mut d = vec![T::zero(); n];
                    // dx = W·g
                    T::gemm(
                        n,
                        units,
                        1,
                        T::one(),
                        p.weight.data(),
                        units as isize,
                        1,
                        &g,
                        1,
                        1,
                        T::zero(),
                        &mut d,
                        1,
                        1,
                    );
                    g = d;
                }
                Saved::Softmax => {
                    unreachable!("softmax is folded into the loss gradient")
                }
            }
        }
        if need_input {
            Some(g)
        } else {
            None
        }
    }

    /// Mean-loss gradient of a single example; returns the loss and the
    /// probability vector.
    pub(crate) fn accumulate_example(
        &self,
        input: &Tensor<T>,
        label: usize,
        grads: &mut Gradients<T>,
        scale: T,
    ) -> Result<(T, Vec<T>)> {
        let trace = self.trace(input, self.layers.len() - 1)?;
        let (loss, probs) = super::softmax_cross_entropy(trace.output.data(), label);
        let mut g: Vec<T> = probs.clone();
        g[label] -= T::one();
        for v in &mut g {
            *v *= scale;
        }
        self.backward(&trace, g, Some(grads), false);
        Ok((loss, probs))
    }

    /// Gradient of `loss(input, label)` with respect to the input.
    pub fn input_gradient(&self, input: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
        let trace = self.trace(input, self.layers.len() - 1)?;
        let (loss, probs) = super::softmax_cross_entropy(trace.output.data(), label);
        let mut g = probs;
        g[label] -= T::one();
        let d = self.backward(&trace, g, None, true).expect("input gradient");
        Ok((loss, Tensor::from_vec(&self.input_shape, d)?))
    }

    /// Parameter gradients of `loss(input, label)`.
    pub fn param_gradients(&self, input: &Tensor<T>, label: usize) -> Result<(T, Gradients<T>)> {
        let mut grads = Gradients::zeros_like(self);
        let (loss, _) = self.accumulate_example(input, label, &mut grads, T::one())?;
        Ok((loss, grads))
    }

    pub fn loss(&self, input: &Tensor<T>, label: usize) -> Result<T> {
        let logits = self.logits(input)?;
        Ok(super::softmax_cross_entropy(&logits, label).0)
    }
}
