//! Dense feed-forward classifier: relu hidden layers, softmax output.
//!
//! Layers are indexed 1..=L from the outside, matching the convention that
//! `feature_at(net, l, x)` is the post-activation output of layer `l` and
//! layer `L` is the softmax output. Everything is `f64`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{sgd_step, Adam, AdamParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
}

/// One dense layer. Weights are stored row-major with shape `in_dim x out_dim`,
/// so `z[c] = bias[c] + sum_r x[r] * w[r][c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let in_dim = weights.len();
        if in_dim == 0 {
            return Err(Error::Config("layer has no input rows".into()));
        }
        let out_dim = bias.len();
        if out_dim == 0 {
            return Err(Error::Config("layer has no outputs".into()));
        }
        let mut flat = Vec::with_capacity(in_dim * out_dim);
        for row in &weights {
            if row.len() != out_dim {
                return Err(Error::Shape {
                    what: "weight row",
                    expected: out_dim,
                    got: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights: flat,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn random(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-limit..=limit)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.out_dim + col]
    }

    /// Flat row-major weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn weight_rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.out_dim).map(<[f64]>::to_vec).collect()
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let row = &self.weights[r * self.out_dim..(r + 1) * self.out_dim];
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += xr * w;
            }
        }
        z
    }

    fn activate(&self, z: &[f64]) -> Vec<f64> {
        match self.activation {
            Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            Activation::Softmax => softmax(z),
        }
    }

    /// Given dL/da for this layer's output, returns dL/dz.
    fn activation_backward(&self, grad_out: &[f64], z: &[f64], a: &[f64]) -> Vec<f64> {
        match self.activation {
            // subgradient 0 at the kink
            Activation::Relu => grad_out
                .iter()
                .zip(z)
                .map(|(g, zi)| if *zi > 0.0 { *g } else { 0.0 })
                .collect(),
            Activation::Softmax => {
                let dot: f64 = grad_out.iter().zip(a).map(|(g, p)| g * p).sum();
                grad_out.iter().zip(a).map(|(g, p)| p * (g - dot)).collect()
            }
        }
    }

    /// `W * dz`, i.e. dL/dx given dL/dz.
    fn propagate_back(&self, dz: &[f64]) -> Vec<f64> {
        (0..self.in_dim)
            .map(|r| {
                let row = &self.weights[r * self.out_dim..(r + 1) * self.out_dim];
                row.iter().zip(dz).map(|(w, d)| w * d).sum()
            })
            .collect()
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Cross-entropy `H(y, softmax(z))` computed from logits.
pub fn cross_entropy_from_logits(logits: &[f64], target: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .zip(target)
        .filter(|(_, y)| **y != 0.0)
        .map(|(lp, y)| -y * lp)
        .sum()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Cached intermediate values of one forward pass. `post[0]` is the input.
struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

fn forward_trace(layers: &[Layer], x: &[f64]) -> Trace {
    let mut pre = Vec::with_capacity(layers.len());
    let mut post = Vec::with_capacity(layers.len() + 1);
    post.push(x.to_vec());
    for layer in layers {
        let z = layer.pre_activation(post.last().unwrap());
        let a = layer.activate(&z);
        pre.push(z);
        post.push(a);
    }
    Trace { pre, post }
}

/// Gradients of a scalar loss with respect to one layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGradient {
    fn zeros(layer: &Layer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// Loss seeds for one backward pass.
struct Seeds {
    /// dL/dz of the last layer, added directly (cross-entropy shortcut).
    logits: Option<Vec<f64>>,
    /// dL/da contributions keyed by 1-based layer index.
    post: Vec<(usize, Vec<f64>)>,
}

/// Runs backpropagation; accumulates parameter gradients for layers with
/// index >= `first_trainable` into `param_grads` when given. Returns dL/dx.
fn backward(
    layers: &[Layer],
    trace: &Trace,
    seeds: &Seeds,
    mut param_grads: Option<&mut [LayerGradient]>,
    first_trainable: usize,
) -> Vec<f64> {
    let depth = layers.len();
    let mut grad_a: Vec<f64> = vec![0.0; layers[depth - 1].out_dim];
    for i in (0..depth).rev() {
        let layer = &layers[i];
        for (idx, g) in &seeds.post {
            if *idx == i + 1 {
                for (acc, v) in grad_a.iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        let mut dz = layer.activation_backward(&grad_a, &trace.pre[i], &trace.post[i + 1]);
        if i + 1 == depth {
            if let Some(extra) = &seeds.logits {
                for (d, e) in dz.iter_mut().zip(extra) {
                    *d += e;
                }
            }
        }
        if let Some(grads) = param_grads.as_deref_mut() {
            if i >= first_trainable {
                let g = &mut grads[i];
                let input = &trace.post[i];
                for (r, &xr) in input.iter().enumerate() {
                    if xr == 0.0 {
                        continue;
                    }
                    let row = &mut g.weights[r * layer.out_dim..(r + 1) * layer.out_dim];
                    for (gw, d) in row.iter_mut().zip(&dz) {
                        *gw += xr * d;
                    }
                }
                for (gb, d) in g.bias.iter_mut().zip(&dz) {
                    *gb += d;
                }
            }
        }
        // nothing below the first trainable layer is needed for a parameter update
        if param_grads.is_some() && i <= first_trainable {
            break;
        }
        grad_a = layer.propagate_back(&dz);
    }
    grad_a
}

fn ce_logit_grad(probs: &[f64], target: &[f64]) -> Vec<f64> {
    let mass: f64 = target.iter().sum();
    probs.iter().zip(target).map(|(p, y)| p * mass - y).collect()
}

/// A scalar objective of the network input, differentiable almost everywhere.
#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    Constant(f64),
    /// `H(target, f^L(x))`.
    CrossEntropy {
        target: Vec<f64>,
    },
    /// `||f^l(x) - point||_2`.
    FeatureDistance {
        layer: usize,
        point: Vec<f64>,
    },
    /// `-lambda * H(label, f^L(x)) + ||f^l(x) - point||_2`.
    Corner {
        label: Vec<f64>,
        point: Vec<f64>,
        layer: usize,
        lambda: f64,
    },
}

impl LossSpec {
    fn feature_layer(&self) -> Option<(usize, &[f64])> {
        match self {
            LossSpec::FeatureDistance { layer, point } | LossSpec::Corner { layer, point, .. } => Some((*layer, point)),
            _ => None,
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of leading layers whose parameters stay fixed.
    pub frozen_prefix: usize,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            frozen_prefix: 0,
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    fn check(&self, depth: usize) -> Result<()> {
        if self.frozen_prefix >= depth {
            return Err(Error::Config(format!(
                "frozen_prefix {} must be < number of layers {depth}",
                self.frozen_prefix
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy per epoch, measured on the full dataset before each
/// epoch's updates and once more after the last epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape {
                what: "dataset labels",
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        if let (Some(x0), Some(y0)) = (inputs.first(), labels.first()) {
            for x in &inputs {
                check_dim("dataset input", x0.len(), x.len())?;
            }
            for (row, y) in labels.iter().enumerate() {
                check_dim("dataset label", y0.len(), y.len())?;
                let sum: f64 = y.iter().sum();
                if y.iter().any(|v| *v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "label of sample {row} is not a probability vector"
                    )));
                }
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }

    pub fn label_dim(&self) -> Option<usize> {
        self.labels.first().map(Vec::len)
    }

    /// One-hot labels from class indices.
    pub fn from_classes(inputs: Vec<Vec<f64>>, classes: &[usize], num_classes: usize) -> Result<Self> {
        let labels = classes
            .iter()
            .map(|&c| {
                let mut y = vec![0.0; num_classes];
                y[c] = 1.0;
                y
            })
            .collect();
        Self::new(inputs, labels)
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { what, expected, got });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Validates adjacent dimensions, depth >= 2, relu hidden layers and a
    /// softmax output layer.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least 2 layers, got {}",
                layers.len()
            )));
        }
        validate_stack(&layers)?;
        Ok(Self { layers })
    }

    /// Randomly initialised network with the given `[d_0, ..., d_L]`.
    pub fn random(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::Config("layer_dims must list at least 3 widths (L >= 2)".into()));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = layer_dims.len() - 2;
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Softmax
                } else {
                    Activation::Relu
                };
                Layer::random(w[0], w[1], act, &mut rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// `[d_0, d_1, ..., d_L]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Width of layer `l` (1-based; `l = 0` is the input).
    pub fn width(&self, l: usize) -> Result<usize> {
        self.check_layer(l)?;
        Ok(self.layer_dims()[l])
    }

    fn check_layer(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.depth() {
            return Err(Error::LayerIndex {
                layer: l,
                max: self.depth(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim("network input", self.input_dim(), x.len())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(run(&self.layers, x))
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let trace = forward_trace(&self.layers, x);
        Ok(trace.pre.last().unwrap().clone())
    }

    /// Post-activation output of layer `l`, `1 <= l <= L`.
    pub fn feature_at(&self, l: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_layer(l)?;
        self.check_input(x)?;
        Ok(run(&self.layers[..l], x))
    }

    /// Output of layers `l+1..=L` applied to a layer-`l` feature vector.
    pub fn forward_from(&self, l: usize, feature: &[f64]) -> Result<Vec<f64>> {
        if l >= self.depth() {
            return Err(Error::LayerIndex {
                layer: l,
                max: self.depth() - 1,
            });
        }
        let width = if l == 0 {
            self.input_dim()
        } else {
            self.layers[l - 1].out_dim
        };
        check_dim("layer feature", width, feature.len())?;
        Ok(run(&self.layers[l..], feature))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyData("accuracy needs at least one sample"));
        }
        let mut correct = 0usize;
        for (x, y) in data.inputs.iter().zip(&data.labels) {
            if self.predict(x)? == argmax(y) {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Mean cross-entropy over the dataset.
    pub fn mean_loss(&self, data: &LabeledDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyData("loss needs at least one sample"));
        }
        self.check_dataset(data, self.input_dim())?;
        Ok(mean_ce(&self.layers, &data.inputs, &data.labels))
    }

    fn check_dataset(&self, data: &LabeledDataset, input_dim: usize) -> Result<()> {
        if let Some(d) = data.input_dim() {
            check_dim("dataset input", input_dim, d)?;
        }
        if let Some(d) = data.label_dim() {
            check_dim("dataset label", self.output_dim(), d)?;
        }
        Ok(())
    }

    /// Mean cross-entropy over a batch and its gradient for every layer.
    pub fn loss_and_gradients(&self, inputs: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<(f64, Vec<LayerGradient>)> {
        if inputs.is_empty() {
            return Err(Error::EmptyData("gradient needs at least one sample"));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let (loss, grads) = batch_gradients(&self.layers, inputs, labels, 0);
        Ok((loss, grads))
    }

    pub fn loss(&self, spec: &LossSpec, x: &[f64]) -> Result<f64> {
        self.check_loss(spec, x)?;
        let trace = forward_trace(&self.layers, x);
        Ok(eval_loss(spec, &trace))
    }

    /// Gradient of `spec` with respect to the network input.
    pub fn input_gradient(&self, spec: &LossSpec, x: &[f64]) -> Result<Vec<f64>> {
        self.check_loss(spec, x)?;
        let trace = forward_trace(&self.layers, x);
        Ok(loss_input_gradient(&self.layers, spec, &trace))
    }

    /// Loss value and input gradient from a single forward pass.
    pub fn loss_with_gradient(&self, spec: &LossSpec, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_loss(spec, x)?;
        let trace = forward_trace(&self.layers, x);
        Ok((eval_loss(spec, &trace), loss_input_gradient(&self.layers, spec, &trace)))
    }

    fn check_loss(&self, spec: &LossSpec, x: &[f64]) -> Result<()> {
        self.check_input(x)?;
        match spec {
            LossSpec::Constant(_) => {}
            LossSpec::CrossEntropy { target } => {
                check_dim("loss target", self.output_dim(), target.len())?;
            }
            LossSpec::FeatureDistance { layer, point } => {
                check_dim("feature point", self.width(*layer)?, point.len())?;
            }
            LossSpec::Corner {
                label, point, layer, ..
            } => {
                check_dim("loss label", self.output_dim(), label.len())?;
                check_dim("feature point", self.width(*layer)?, point.len())?;
            }
        }
        Ok(())
    }

    pub fn train(&self, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Network> {
        self.train_with_report(data, cfg).map(|(net, _)| net)
    }

    pub fn train_with_report(&self, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
        if data.is_empty() {
            return Err(Error::EmptyData("training set is empty"));
        }
        cfg.check(self.depth())?;
        self.check_dataset(data, self.input_dim())?;
        let mut layers = self.layers.clone();
        let report = fit(&mut layers, cfg.frozen_prefix, data, cfg);
        Ok((Network { layers }, report))
    }

    /// Retrains layers `l+1..=L` on a dataset whose inputs are layer-`l`
    /// features; layers `1..=l` are copied unchanged.
    pub fn retrain_suffix(&self, l: usize, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
        if l == 0 || l >= self.depth() {
            return Err(Error::LayerIndex {
                layer: l,
                max: self.depth() - 1,
            });
        }
        if data.is_empty() {
            return Err(Error::EmptyData("modification dataset is empty"));
        }
        let mut suffix_cfg = cfg.clone();
        suffix_cfg.frozen_prefix = 0;
        suffix_cfg.check(self.depth() - l)?;
        self.check_dataset(data, self.layers[l - 1].out_dim)?;
        let mut suffix = self.layers[l..].to_vec();
        let report = fit(&mut suffix, 0, data, &suffix_cfg);
        let mut layers = self.layers[..l].to_vec();
        layers.extend(suffix);
        Ok((Network { layers }, report))
    }
}

fn validate_stack(layers: &[Layer]) -> Result<()> {
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Config(format!(
                "layer {} outputs {} values but layer {} expects {}",
                i + 1,
                pair[0].out_dim,
                i + 2,
                pair[1].in_dim
            )));
        }
    }
    let last = layers.len() - 1;
    for (i, layer) in layers.iter().enumerate() {
        let expected = if i == last {
            Activation::Softmax
        } else {
            Activation::Relu
        };
        if layer.activation != expected {
            return Err(Error::Config(format!(
                "layer {} must use {:?} activation",
                i + 1,
                expected
            )));
        }
    }
    Ok(())
}

fn run(layers: &[Layer], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for layer in layers {
        a = layer.activate(&layer.pre_activation(&a));
    }
    a
}

fn mean_ce(layers: &[Layer], inputs: &[Vec<f64>], labels: &[Vec<f64>]) -> f64 {
    let total: f64 = inputs
        .iter()
        .zip(labels)
        .map(|(x, y)| {
            let trace = forward_trace(layers, x);
            cross_entropy_from_logits(trace.pre.last().unwrap(), y)
        })
        .sum();
    total / inputs.len() as f64
}

fn batch_gradients(
    layers: &[Layer],
    inputs: &[Vec<f64>],
    labels: &[Vec<f64>],
    first_trainable: usize,
) -> (f64, Vec<LayerGradient>) {
    let mut grads: Vec<LayerGradient> = layers.iter().map(LayerGradient::zeros).collect();
    let mut loss = 0.0;
    for (x, y) in inputs.iter().zip(labels) {
        let trace = forward_trace(layers, x);
        loss += cross_entropy_from_logits(trace.pre.last().unwrap(), y);
        let seeds = Seeds {
            logits: Some(ce_logit_grad(trace.post.last().unwrap(), y)),
            post: Vec::new(),
        };
        backward(layers, &trace, &seeds, Some(&mut grads), first_trainable);
    }
    let n = inputs.len() as f64;
    for g in &mut grads {
        g.weights.iter_mut().for_each(|v| *v /= n);
        g.bias.iter_mut().for_each(|v| *v /= n);
    }
    (loss / n, grads)
}

enum LayerOpt {
    Sgd,
    Adam { weights: Adam, bias: Adam },
}

fn fit(layers: &mut [Layer], frozen: usize, data: &LabeledDataset, cfg: &TrainConfig) -> TrainReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opts: Vec<LayerOpt> = layers
        .iter()
        .map(|l| match cfg.optimizer {
            Optimizer::Sgd => LayerOpt::Sgd,
            Optimizer::Adam => LayerOpt::Adam {
                weights: Adam::new(l.weights.len(), cfg.adam),
                bias: Adam::new(l.bias.len(), cfg.adam),
            },
        })
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return report;
    }
    report.losses.push(mean_ce(layers, &data.inputs, &data.labels));
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    let mut ys: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            xs.clear();
            ys.clear();
            for &i in chunk {
                xs.push(data.inputs[i].clone());
                ys.push(data.labels[i].clone());
            }
            let (_, grads) = batch_gradients(layers, &xs, &ys, frozen);
            for (i, (layer, grad)) in layers.iter_mut().zip(&grads).enumerate() {
                if i < frozen {
                    continue;
                }
                match &mut opts[i] {
                    LayerOpt::Sgd => {
                        sgd_step(&mut layer.weights, &grad.weights, cfg.learning_rate);
                        sgd_step(&mut layer.bias, &grad.bias, cfg.learning_rate);
                    }
                    LayerOpt::Adam { weights, bias } => {
                        weights.step(&mut layer.weights, &grad.weights, cfg.learning_rate);
                        bias.step(&mut layer.bias, &grad.bias, cfg.learning_rate);
                    }
                }
            }
        }
        report.losses.push(mean_ce(layers, &data.inputs, &data.labels));
    }
    report
}

fn eval_loss(spec: &LossSpec, trace: &Trace) -> f64 {
    let logits = trace.pre.last().unwrap();
    match spec {
        LossSpec::Constant(c) => *c,
        LossSpec::CrossEntropy { target } => cross_entropy_from_logits(logits, target),
        LossSpec::FeatureDistance { layer, point } => euclidean(&trace.post[*layer], point),
        LossSpec::Corner {
            label,
            point,
            layer,
            lambda,
        } => -lambda * cross_entropy_from_logits(logits, label) + euclidean(&trace.post[*layer], point),
    }
}

fn loss_input_gradient(layers: &[Layer], spec: &LossSpec, trace: &Trace) -> Vec<f64> {
    let probs = trace.post.last().unwrap();
    let mut seeds = Seeds {
        logits: None,
        post: Vec::new(),
    };
    match spec {
        LossSpec::Constant(_) => return vec![0.0; trace.post[0].len()],
        LossSpec::CrossEntropy { target } => seeds.logits = Some(ce_logit_grad(probs, target)),
        LossSpec::FeatureDistance { .. } => {}
        LossSpec::Corner { label, lambda, .. } => {
            seeds.logits = Some(ce_logit_grad(probs, label).into_iter().map(|g| -lambda * g).collect());
        }
    }
    if let Some((layer, point)) = spec.feature_layer() {
        let feat = &trace.post[layer];
        let norm = euclidean(feat, point);
        // the norm is not differentiable at zero; the minimum is reached there
        let g = if norm > 0.0 {
            feat.iter().zip(point).map(|(f, p)| (f - p) / norm).collect()
        } else {
            vec![0.0; feat.len()]
        };
        seeds.post.push((layer, g));
    }
    backward(layers, trace, &seeds, None, 0)
}

/// JSON document layout for a network.
#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    layer_dims: Vec<usize>,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Serialize for Network {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetworkDoc {
            layer_dims: self.layer_dims(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    weights: l.weight_rows(),
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Network {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = NetworkDoc::deserialize(d)?;
        let layers = doc
            .layers
            .into_iter()
            .map(|l| Layer::new(l.weights, l.bias, l.activation))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let net = Network::from_layers(layers).map_err(D::Error::custom)?;
        if net.layer_dims() != doc.layer_dims {
            return Err(D::Error::custom(format!(
                "layer_dims {:?} disagree with weight shapes {:?}",
                doc.layer_dims,
                net.layer_dims()
            )));
        }
        Ok(net)
    }
}
