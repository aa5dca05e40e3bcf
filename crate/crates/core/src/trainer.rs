//! Parameter initialization, mini-batch SGD over weights, biases and shape
//! parameters, and the finite-difference gradient checker.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::ShapeParam;
use crate::data::Dataset;
use crate::network::{BaseLoss, Gradients, Layer, LossSpec, Network, NetworkError, ParamClass};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("gradient for layer {layer} has the wrong layout")]
    GradientShape { layer: usize },
    #[error("dataset `{0}` is empty")]
    EmptyDataset(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights `U(-sqrt(3/fan_in), sqrt(3/fan_in))`, biases zero.
    LeCun,
    /// Weights from an equal mixture of `N(1, 0.5)` and `N(-1, 0.5)`,
    /// biases from `N(0, 0.5)` (standard deviations). Used for generator nets.
    SimMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Learning rate for weights and biases. Zero is allowed and freezes the net.
    pub gamma: f64,
    /// Shape parameters step with `gamma * gamma_alpha_multiplier`.
    pub gamma_alpha_multiplier: f64,
    pub l1: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init: InitScheme,
    pub shuffle_each_epoch: bool,
    pub loss: BaseLoss,
    pub penalize_alpha: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            gamma_alpha_multiplier: 1.0,
            l1: 0.001,
            l2: 0.001,
            batch_size: 20,
            epochs: 2000,
            seed: 0,
            init: InitScheme::LeCun,
            shuffle_each_epoch: true,
            loss: BaseLoss::CrossEntropy,
            penalize_alpha: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.gamma_alpha_multiplier > 0.0 && self.gamma_alpha_multiplier.is_finite()) {
            return bad(format!(
                "gamma_alpha_multiplier must be > 0, got {}",
                self.gamma_alpha_multiplier
            ));
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0 && self.l1.is_finite() && self.l2.is_finite()) {
            return bad(format!("l1/l2 must be >= 0, got {}/{}", self.l1, self.l2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            base: self.loss,
            l1: self.l1,
            l2: self.l2,
            penalize_alpha: self.penalize_alpha,
        }
    }
}

/// Derives an independent 64-bit seed from `(base, stream)` (SplitMix64).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fan_in(layer: &Layer) -> usize {
    match layer {
        Layer::Dense(d) => d.fan_in(),
        Layer::Conv2d(c) => {
            let (kh, kw) = c.kernel_hw();
            c.in_channels() * kh * kw
        }
        Layer::MaxPool2d(_) => 0,
    }
}

/// Re-initializes every parameter of `net`; shape parameters reset to
/// `alpha = 1`.
pub fn initialize<R: Rng>(net: &mut Network, scheme: InitScheme, rng: &mut R) {
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    for layer in net.layers_mut() {
        let fan = fan_in(layer);
        if let Some(w) = layer.weights_mut() {
            match scheme {
                InitScheme::LeCun => {
                    let limit = (3.0 / fan as f64).sqrt();
                    for v in w.data_mut() {
                        *v = rng.random_range(-limit..=limit);
                    }
                }
                InitScheme::SimMixture => {
                    for v in w.data_mut() {
                        let mean = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                        *v = mean + 0.5 * unit.sample(rng);
                    }
                }
            }
        }
        if let Some(b) = layer.bias_mut() {
            for v in b.data_mut() {
                *v = match scheme {
                    InitScheme::LeCun => 0.0,
                    InitScheme::SimMixture => 0.5 * unit.sample(rng),
                };
            }
        }
        layer.shape_params_mut().fill(ShapeParam(0.0));
    }
}

/// One plain gradient step:
/// `w -= gamma * dw`, `b -= gamma * db`, `a -= gamma * multiplier * da`,
/// where `da` is already the gradient with respect to `a = ln alpha`.
pub fn sgd_step(net: &mut Network, grads: &Gradients, config: &TrainConfig) -> Result<()> {
    if grads.layers.len() != net.layers().len() {
        return Err(TrainError::GradientShape {
            layer: grads.layers.len().min(net.layers().len()),
        });
    }
    for (i, (layer, g)) in net.layers().iter().zip(&grads.layers).enumerate() {
        let ok = layer.param_count(ParamClass::Weight) == g.weights.len()
            && layer.param_count(ParamClass::Bias) == g.bias.len()
            && layer.param_count(ParamClass::Shape) == g.shape.len();
        if !ok {
            return Err(TrainError::GradientShape { layer: i });
        }
    }
    let gamma = config.gamma;
    let gamma_a = config.gamma * config.gamma_alpha_multiplier;
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        if let Some(w) = layer.weights_mut() {
            for (v, d) in w.data_mut().iter_mut().zip(&g.weights) {
                *v -= gamma * d;
            }
        }
        if let Some(b) = layer.bias_mut() {
            for (v, d) in b.data_mut().iter_mut().zip(&g.bias) {
                *v -= gamma * d;
            }
        }
        for (p, d) in layer.shape_params_mut().iter_mut().zip(&g.shape) {
            p.0 -= gamma_a * d;
        }
    }
    Ok(())
}

/// Per-epoch mean training loss and, when a validation set is given,
/// validation loss after the epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

/// Rows per forward pass when scoring whole datasets.
const EVAL_CHUNK: usize = 1000;

/// Loss of `net` over a whole dataset, evaluated in chunks.
pub fn dataset_loss(net: &Network, data: &Dataset, loss: &LossSpec) -> Result<f64> {
    let n = data.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x = data.features.select_rows(&idx).map_err(NetworkError::from)?;
        let probs = net.predict(&x)?;
        total += loss.data_loss(net.output(), &probs, &data.labels[start..end])? * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64 + net.penalty(loss))
}

/// Predicted labels for every row of `data`.
pub fn predict_labels(net: &Network, features: &Tensor) -> Result<Vec<usize>> {
    let n = features.rows();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x = features.select_rows(&idx).map_err(NetworkError::from)?;
        out.extend(net.classify(&x)?);
        start = end;
    }
    Ok(out)
}

/// Trains `net` in place with mini-batch SGD. See [`train_with`].
pub fn train(net: &mut Network, data: &Dataset, validation: Option<&Dataset>, config: &TrainConfig) -> Result<LossCurve> {
    train_with(net, data, validation, config, |_| {})
}

/// Trains `net` in place, calling `on_epoch` after every pass.
///
/// Batches follow a seeded Fisher-Yates permutation per epoch (or dataset
/// order when shuffling is off); the last batch may be short. The network is
/// not re-initialized here.
pub fn train_with(
    net: &mut Network,
    data: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(EpochStats),
) -> Result<LossCurve> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset(data.name.clone()));
    }
    let loss = config.loss_spec();
    let mut rng = rng_from(derive_seed(config.seed, 2));
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = LossCurve::default();
    for epoch in 0..config.epochs {
        if config.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let x = data.features.select_rows(idx).map_err(NetworkError::from)?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let (value, grads) = match net.loss_and_gradients(&x, &labels, &loss) {
                Ok(r) => r,
                // diverged parameters surface as non-finite activations
                Err(e) if overflowed(&e) => {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e.into()),
            };
            if !value.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch,
                    loss: value,
                });
            }
            sgd_step(net, &grads, config)?;
            epoch_loss += value * idx.len() as f64;
        }
        net.clear_caches();
        let train_loss = epoch_loss / n as f64;
        curve.train.push(train_loss);
        let validation_loss = match validation {
            Some(v) => {
                let l = dataset_loss(net, v, &loss)?;
                curve.validation.push(l);
                Some(l)
            }
            None => None,
        };
        on_epoch(EpochStats {
            epoch,
            train_loss,
            validation_loss,
        });
    }
    Ok(curve)
}

fn overflowed(err: &NetworkError) -> bool {
    match err {
        NetworkError::Tensor(TensorError::NonFinite { .. }) => true,
        NetworkError::Layer { source, .. } => overflowed(source),
        _ => false,
    }
}

/// One parameter's analytic and numeric derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamCheck {
    pub layer: usize,
    pub class: ParamClass,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: ParamClass,
    pub count: usize,
    pub max_rel_err: f64,
    pub worst: Option<ParamCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub worst_param: Option<ParamCheck>,
    /// Weights, biases and shape parameters, in that order.
    pub classes: Vec<ClassReport>,
    /// Every parameter whose relative error exceeds the tolerance.
    pub flagged: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn class(&self, class: ParamClass) -> &ClassReport {
        self.classes.iter().find(|c| c.class == class).expect("all classes reported")
    }
}

/// Absolute error below which two derivatives are always considered equal.
pub const GRAD_CHECK_ABS_FLOOR: f64 = 1e-8;

/// Compares back-propagated gradients with central differences
/// `(L(p + h) - L(p - h)) / 2h` for every parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor / tol)`, so errors under
/// [`GRAD_CHECK_ABS_FLOOR`] always pass. Intended for nets of at most ~10^4
/// parameters.
pub fn grad_check(net: &Network, batch: &Tensor, labels: &[usize], loss: &LossSpec, h: f64, tol: f64) -> Result<GradCheckReport> {
    let mut work = net.clone();
    let (_, grads) = work.loss_and_gradients(batch, labels, loss)?;
    grad_check_against(net, &grads, batch, labels, loss, h, tol)
}

/// Like [`grad_check`] but validates caller-supplied gradients.
pub fn grad_check_against(
    net: &Network,
    grads: &Gradients,
    batch: &Tensor,
    labels: &[usize],
    loss: &LossSpec,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut probe = net.clone();
    probe.clear_caches();
    let scale_floor = GRAD_CHECK_ABS_FLOOR / tol;
    let mut classes: Vec<ClassReport> = ParamClass::ALL
        .iter()
        .map(|&class| ClassReport {
            class,
            count: 0,
            max_rel_err: 0.0,
            worst: None,
        })
        .collect();
    let mut flagged = Vec::new();
    for layer in 0..net.layers().len() {
        for (ci, class) in ParamClass::ALL.into_iter().enumerate() {
            let count = net.layers()[layer].param_count(class);
            let analytic_all = grads.get(layer, class);
            if analytic_all.len() != count {
                return Err(TrainError::GradientShape { layer });
            }
            for (index, &analytic) in analytic_all.iter().enumerate() {
                let orig = probe.layers()[layer].param(class, index);
                probe.layers_mut()[layer].set_param(class, index, orig + h);
                let up = probe.loss(batch, labels, loss)?;
                probe.layers_mut()[layer].set_param(class, index, orig - h);
                let down = probe.loss(batch, labels, loss)?;
                probe.layers_mut()[layer].set_param(class, index, orig);
                let numeric = (up - down) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(scale_floor);
                let rel_err = (analytic - numeric).abs() / denom;
                let check = ParamCheck {
                    layer,
                    class,
                    index,
                    analytic,
                    numeric,
                    rel_err,
                };
                let report = &mut classes[ci];
                report.count += 1;
                if rel_err > report.max_rel_err || report.worst.is_none() {
                    report.max_rel_err = report.max_rel_err.max(rel_err);
                    report.worst = Some(check);
                }
                // NaN errors are flagged too
                if rel_err.is_nan() || rel_err > tol {
                    flagged.push(check);
                }
            }
        }
    }
    let worst_param = classes
        .iter()
        .filter_map(|c| c.worst)
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err));
    Ok(GradCheckReport {
        step: h,
        tolerance: tol,
        max_rel_err: worst_param.map_or(0.0, |p| p.rel_err),
        worst_param,
        classes,
        flagged,
    })
}
