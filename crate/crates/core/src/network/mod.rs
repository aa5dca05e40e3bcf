//! Layer graphs with per-unit shape parameters: forward pass, back-propagation
//! and penalized losses.
//!
//! A [`Network`] is a chain of [`Layer`]s whose last layer produces logits,
//! followed by an [`OutputSpec`] link (logistic or softmax). Training state
//! lives in the layers as forward caches, so `forward`/`backward` take
//! `&mut self`; [`Network::predict`] is the cache-free read-only path.

mod io;
mod layers;

pub use io::{NETWORK_FORMAT, NETWORK_VERSION};
pub use layers::{Conv2dLayer, DenseLayer, Layer, LayerGrad, MaxPool2dLayer, ParamClass};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::{logistic, ActivationKind};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<NetworkError>,
    },
    #[error("{0}")]
    Shape(String),
    #[error("input shape {found:?} does not match network input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("no forward cache for this batch; run forward first")]
    MissingCache,
    #[error("{labels} labels for a batch of {batch}")]
    LabelCount { labels: usize, batch: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("prediction {value} at row {row} is not a probability")]
    Probability { row: usize, value: f64 },
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("gradient layout does not match network at layer {layer}")]
    GradientShape { layer: usize },
    #[error("malformed network document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// Link from final-layer logits to probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutputSpec {
    /// One logit, `pi = logistic(eta)`; label 1 when `pi > 0.5`.
    BinaryLogistic,
    Softmax { classes: usize },
}

impl OutputSpec {
    pub fn classes(self) -> usize {
        match self {
            OutputSpec::BinaryLogistic => 2,
            OutputSpec::Softmax { classes } => classes,
        }
    }

    /// Width of the final logit layer.
    pub fn logits(self) -> usize {
        match self {
            OutputSpec::BinaryLogistic => 1,
            OutputSpec::Softmax { classes } => classes,
        }
    }

    fn link(self, logits: &Tensor) -> Result<Tensor> {
        match self {
            OutputSpec::BinaryLogistic => Ok(logits.map(logistic)),
            OutputSpec::Softmax { .. } => {
                let k = logits.row_len();
                let mut out = logits.clone().into_data();
                for row in out.chunks_exact_mut(k) {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                }
                Ok(Tensor::from_vec(logits.shape().to_vec(), out)?)
            }
        }
    }

    /// Hard labels from probabilities.
    pub fn decide(self, probs: &Tensor) -> Result<Vec<usize>> {
        match self {
            OutputSpec::BinaryLogistic => Ok(probs.data().iter().map(|&p| usize::from(p > 0.5)).collect()),
            OutputSpec::Softmax { .. } => Ok(probs.argmax(1)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLoss {
    CrossEntropy,
    SquaredError,
}

/// Batch-mean base loss plus `l1 * sum|w| + l2 * sum w^2` over weight
/// matrices and kernels. Biases are never penalized; shape parameters only
/// when `penalize_alpha` is set (penalty on `alpha`, not on `ln alpha`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub base: BaseLoss,
    #[serde(default)]
    pub l1: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub penalize_alpha: bool,
}

/// Probabilities are clamped to this window before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

impl LossSpec {
    pub fn new(base: BaseLoss, l1: f64, l2: f64) -> Result<Self> {
        let spec = Self {
            base,
            l1,
            l2,
            penalize_alpha: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cross_entropy() -> Self {
        Self {
            base: BaseLoss::CrossEntropy,
            l1: 0.0,
            l2: 0.0,
            penalize_alpha: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l1 >= 0.0 && self.l1.is_finite() && self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(NetworkError::Invalid(format!(
                "penalties must be non-negative, got l1={} l2={}",
                self.l1, self.l2
            )));
        }
        Ok(())
    }

    /// Mean base loss over the batch (no penalty).
    pub fn data_loss(&self, output: OutputSpec, probs: &Tensor, labels: &[usize]) -> Result<f64> {
        check_labels(output, probs.rows(), labels)?;
        let k = probs.row_len();
        let mut total = 0.0;
        for (row, &y) in labels.iter().enumerate() {
            let p = probs.row(row);
            if let Some(&value) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(NetworkError::Probability { row, value });
            }
            total += match (self.base, output) {
                (BaseLoss::CrossEntropy, OutputSpec::BinaryLogistic) => {
                    let pi = clamp_prob(p[0]);
                    if y == 1 {
                        -pi.ln()
                    } else {
                        -(1.0 - pi).ln()
                    }
                }
                (BaseLoss::CrossEntropy, OutputSpec::Softmax { .. }) => -clamp_prob(p[y]).ln(),
                (BaseLoss::SquaredError, OutputSpec::BinaryLogistic) => (p[0] - y as f64).powi(2),
                (BaseLoss::SquaredError, OutputSpec::Softmax { .. }) => (0..k)
                    .map(|j| (p[j] - f64::from(u8::from(j == y))).powi(2))
                    .sum(),
            };
        }
        Ok(total / labels.len() as f64)
    }

    /// Gradient of the batch-mean base loss with respect to the logits.
    ///
    /// Cross-entropy uses the exact `p - y` form; the clamp only guards the
    /// logarithm in the loss value.
    fn logit_grad(&self, output: OutputSpec, probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
        check_labels(output, probs.rows(), labels)?;
        let k = probs.row_len();
        let inv_b = 1.0 / labels.len() as f64;
        let mut g = vec![0.0; probs.len()];
        for (row, &y) in labels.iter().enumerate() {
            let p = probs.row(row);
            let out = &mut g[row * k..(row + 1) * k];
            match (self.base, output) {
                (BaseLoss::CrossEntropy, OutputSpec::BinaryLogistic) => {
                    out[0] = (p[0] - y as f64) * inv_b;
                }
                (BaseLoss::CrossEntropy, OutputSpec::Softmax { .. }) => {
                    for j in 0..k {
                        out[j] = (p[j] - f64::from(u8::from(j == y))) * inv_b;
                    }
                }
                (BaseLoss::SquaredError, OutputSpec::BinaryLogistic) => {
                    out[0] = 2.0 * (p[0] - y as f64) * p[0] * (1.0 - p[0]) * inv_b;
                }
                (BaseLoss::SquaredError, OutputSpec::Softmax { .. }) => {
                    let dp: Vec<f64> = (0..k)
                        .map(|j| 2.0 * (p[j] - f64::from(u8::from(j == y))))
                        .collect();
                    let dot: f64 = dp.iter().zip(p).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        out[j] = p[j] * (dp[j] - dot) * inv_b;
                    }
                }
            }
        }
        Ok(Tensor::from_vec(probs.shape().to_vec(), g)?)
    }
}

/// L1 subgradient; zero at zero.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_labels(output: OutputSpec, batch: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != batch {
        return Err(NetworkError::LabelCount {
            labels: labels.len(),
            batch,
        });
    }
    let classes = output.classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NetworkError::LabelRange { label, classes });
    }
    Ok(())
}

/// Gradients of the total loss for every layer, in layer order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn get(&self, layer: usize, class: ParamClass) -> &[f64] {
        let g = &self.layers[layer];
        match class {
            ParamClass::Weight => &g.weights,
            ParamClass::Bias => &g.bias,
            ParamClass::Shape => &g.shape,
        }
    }

    pub fn get_mut(&mut self, layer: usize, class: ParamClass) -> &mut Vec<f64> {
        let g = &mut self.layers[layer];
        match class {
            ParamClass::Weight => &mut g.weights,
            ParamClass::Bias => &mut g.bias,
            ParamClass::Shape => &mut g.shape,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|g| {
            g.weights
                .iter()
                .chain(&g.bias)
                .chain(&g.shape)
                .all(|v| v.is_finite())
        })
    }
}

/// Declarative layer description used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        activation: ActivationKind,
    },
    Conv2d {
        channels: usize,
        kernel: usize,
        activation: ActivationKind,
    },
    MaxPool2d,
}

/// Hidden layers plus an output link; the final logit layer is implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Per-sample input shape, e.g. `[10]` or `[1, 28, 28]`.
    pub input: Vec<usize>,
    pub hidden: Vec<LayerSpec>,
    pub output: OutputSpec,
}

impl Architecture {
    /// `depth` dense hidden layers of `width` units sharing one activation.
    pub fn mlp(inputs: usize, depth: usize, width: usize, activation: ActivationKind, output: OutputSpec) -> Self {
        Self {
            input: vec![inputs],
            hidden: (0..depth)
                .map(|_| LayerSpec::Dense {
                    units: width,
                    activation,
                })
                .collect(),
            output,
        }
    }

    /// conv 6@5x5, pool, conv 16@5x5, pool, dense `dense_units`, softmax 10
    /// on `1 x 28 x 28` inputs.
    pub fn lenet5(conv: ActivationKind, dense: ActivationKind, dense_units: usize) -> Self {
        Self {
            input: vec![1, 28, 28],
            hidden: vec![
                LayerSpec::Conv2d {
                    channels: 6,
                    kernel: 5,
                    activation: conv,
                },
                LayerSpec::MaxPool2d,
                LayerSpec::Conv2d {
                    channels: 16,
                    kernel: 5,
                    activation: conv,
                },
                LayerSpec::MaxPool2d,
                LayerSpec::Dense {
                    units: dense_units,
                    activation: dense,
                },
            ],
            output: OutputSpec::Softmax { classes: 10 },
        }
    }

    /// Builds a network with zeroed parameters and `alpha = 1` everywhere.
    pub fn build(&self) -> Result<Network> {
        let mut shape = self.input.clone();
        let mut layers = Vec::with_capacity(self.hidden.len() + 1);
        for (i, spec) in self.hidden.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Dense { units, activation } => {
                    Layer::Dense(DenseLayer::new(shape.iter().product(), units, activation))
                }
                LayerSpec::Conv2d {
                    channels,
                    kernel,
                    activation,
                } => {
                    let in_ch = *shape.first().ok_or_else(|| NetworkError::Invalid("empty input shape".into()))?;
                    Layer::Conv2d(Conv2dLayer::new(in_ch, channels, kernel, activation))
                }
                LayerSpec::MaxPool2d => Layer::MaxPool2d(MaxPool2dLayer::new()),
            };
            shape = layer.output_shape(&shape).map_err(|msg| NetworkError::Layer {
                layer: i,
                source: Box::new(NetworkError::Shape(msg)),
            })?;
            layers.push(layer);
        }
        layers.push(Layer::Dense(DenseLayer::new(
            shape.iter().product(),
            self.output.logits(),
            ActivationKind::Identity,
        )));
        Network::new(self.input.clone(), layers, self.output)
    }
}

/// Feed-forward network with an output link.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    output: OutputSpec,
    probs: Option<Tensor>,
}

impl Network {
    /// Assembles and validates a layer chain. The last layer's output width
    /// must equal `output.logits()`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, output: OutputSpec) -> Result<Self> {
        let net = Self {
            input_shape,
            layers,
            output,
            probs: None,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NetworkError::Invalid(format!("bad input shape {:?}", self.input_shape)));
        }
        if self.layers.is_empty() {
            return Err(NetworkError::Invalid("network has no layers".into()));
        }
        if let OutputSpec::Softmax { classes } = self.output {
            if classes < 2 {
                return Err(NetworkError::Invalid("softmax needs at least 2 classes".into()));
            }
        }
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| NetworkError::Layer {
                layer: i,
                source: Box::new(NetworkError::Invalid(msg)),
            };
            if let Some(b) = layer.bias() {
                let units = match layer {
                    Layer::Dense(d) => {
                        if d.weights.rank() != 2 {
                            return Err(fail("dense weights must be a matrix".into()));
                        }
                        d.fan_out()
                    }
                    Layer::Conv2d(c) => {
                        if c.kernels.rank() != 4 {
                            return Err(fail("conv kernels must be rank 4".into()));
                        }
                        c.out_channels()
                    }
                    Layer::MaxPool2d(_) => unreachable!(),
                };
                if b.len() != units {
                    return Err(fail(format!("bias has {} entries for {units} units", b.len())));
                }
                let kind = layer.activation().expect("parametric layer");
                let expected = if kind.is_adaptive() { units } else { 0 };
                if layer.shape_params().len() != expected {
                    return Err(fail(format!(
                        "{kind} layer with {units} units has {} shape parameters",
                        layer.shape_params().len()
                    )));
                }
                if layer.shape_params().iter().any(|p| !p.0.is_finite()) {
                    return Err(fail("non-finite shape parameter".into()));
                }
            }
            shape = layer.output_shape(&shape).map_err(fail)?;
        }
        if shape.iter().product::<usize>() != self.output.logits() {
            return Err(NetworkError::Invalid(format!(
                "final layer emits {shape:?}, output link needs {}",
                self.output.logits()
            )));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Direct parameter access. Callers must keep layer shapes intact.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output(&self) -> OutputSpec {
        self.output
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| ParamClass::ALL.iter().map(|&c| l.param_count(c)).sum::<usize>())
            .sum()
    }

    /// `(layer, unit, alpha)` for every shape parameter.
    pub fn alphas(&self) -> Vec<(usize, usize, f64)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.shape_params()
                    .iter()
                    .enumerate()
                    .map(move |(j, p)| (i, j, p.alpha()))
            })
            .collect()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.rank() < 2 || batch.shape()[1..] != self.input_shape[..] {
            return Err(NetworkError::InputShape {
                expected: self.input_shape.clone(),
                found: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping per-layer caches for [`Network::backward`].
    /// Returns output probabilities (`b x 1` or `b x K`).
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        self.probs = None;
        let mut h = batch.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, true).map_err(|e| NetworkError::Layer {
                layer: i,
                source: Box::new(e),
            })?;
        }
        let probs = self.output.link(&h)?;
        self.probs = Some(probs.clone());
        Ok(probs)
    }

    /// Cache-free forward pass; safe on shared references.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut h = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h).map_err(|e| NetworkError::Layer {
                layer: i,
                source: Box::new(e),
            })?;
        }
        self.output.link(&h)
    }

    /// Predicted class per row.
    pub fn classify(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let probs = self.predict(batch)?;
        self.output.decide(&probs)
    }

    /// Penalty term of the loss for the current parameters.
    pub fn penalty(&self, loss: &LossSpec) -> f64 {
        let mut total = 0.0;
        for layer in &self.layers {
            if let Some(w) = layer.weights() {
                for &v in w.data() {
                    total += loss.l1 * v.abs() + loss.l2 * v * v;
                }
            }
            if loss.penalize_alpha {
                for p in layer.shape_params() {
                    let a = p.alpha();
                    total += loss.l1 * a + loss.l2 * a * a;
                }
            }
        }
        total
    }

    /// Full loss of given predictions: batch-mean base loss plus penalty.
    pub fn loss_value(&self, probs: &Tensor, labels: &[usize], loss: &LossSpec) -> Result<f64> {
        Ok(loss.data_loss(self.output, probs, labels)? + self.penalty(loss))
    }

    /// Cache-free loss evaluation on a batch.
    pub fn loss(&self, batch: &Tensor, labels: &[usize], loss: &LossSpec) -> Result<f64> {
        let probs = self.predict(batch)?;
        self.loss_value(&probs, labels, loss)
    }

    /// Back-propagates the loss of the most recent [`Network::forward`] batch.
    ///
    /// Shape gradients are with respect to `a = ln alpha`, i.e. the
    /// `alpha`-gradient multiplied by `alpha`. Conv shape gradients sum over
    /// all spatial positions and samples of the channel.
    pub fn backward(&mut self, labels: &[usize], loss: &LossSpec) -> Result<Gradients> {
        let probs = self.probs.as_ref().ok_or(NetworkError::MissingCache)?;
        if !self.layers.iter().all(Layer::has_cache) {
            return Err(NetworkError::MissingCache);
        }
        let mut grad = loss.logit_grad(self.output, probs, labels)?;
        let batch = probs.rows();
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            let mut full = vec![batch];
            full.extend_from_slice(&shape);
            shapes.push(full);
            shape = layer.output_shape(&shape).map_err(NetworkError::Shape)?;
        }
        let mut grads = vec![LayerGrad::default(); self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (grad_in, mut g) = layer
                .backward(&grad, &shapes[i], i > 0)
                .map_err(|e| NetworkError::Layer {
                    layer: i,
                    source: Box::new(e),
                })?;
            if let Some(w) = layer.weights() {
                for (d, &v) in g.weights.iter_mut().zip(w.data()) {
                    *d += loss.l1 * sign(v) + 2.0 * loss.l2 * v;
                }
            }
            if loss.penalize_alpha {
                for (d, p) in g.shape.iter_mut().zip(layer.shape_params()) {
                    let a = p.alpha();
                    *d += (loss.l1 + 2.0 * loss.l2 * a) * a;
                }
            }
            grads[i] = g;
            if let Some(gi) = grad_in {
                grad = gi;
            }
        }
        Ok(Gradients { layers: grads })
    }

    /// Forward and backward on one batch; returns the loss and its gradients.
    pub fn loss_and_gradients(&mut self, batch: &Tensor, labels: &[usize], loss: &LossSpec) -> Result<(f64, Gradients)> {
        let probs = self.forward(batch)?;
        let value = self.loss_value(&probs, labels, loss)?;
        let grads = self.backward(labels, loss)?;
        Ok((value, grads))
    }

    pub fn clear_caches(&mut self) {
        self.probs = None;
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }
}
