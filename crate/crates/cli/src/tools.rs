//! Single-model commands: gradient check, curve and alpha dumps, train, eval.

use std::path::Path;

use adaptact_core::activations::{curve_dump, linspace};
use adaptact_core::data::{compute_metrics, Dataset};
use adaptact_core::network::ParamClass;
use adaptact_core::trainer::{derive_seed, grad_check, initialize, predict_labels, rng_from, GradCheckReport};
use adaptact_core::{ActivationKind, Architecture, LossSpec, Metrics, Network, OutputSpec, Tensor, TrainConfig};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::output::{f, write_csv};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSetup {
    pub inputs: usize,
    pub layers: usize,
    pub width: usize,
    pub batch: usize,
    pub seed: u64,
    pub h: f64,
    pub tolerance: f64,
    pub l1: f64,
    pub l2: f64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            inputs: 10,
            layers: 2,
            width: 10,
            batch: 16,
            seed: 7,
            h: 1e-5,
            tolerance: 1e-5,
            l1: 0.001,
            l2: 0.001,
        }
    }
}

/// LeCun-initialized net with biases and `ln alpha` moved off their initial
/// values, so every parameter class has a non-trivial gradient.
pub fn gradcheck_network(kind: ActivationKind, s: &GradCheckSetup) -> Result<Network> {
    let mut net = Architecture::mlp(s.inputs, s.layers, s.width, kind, OutputSpec::BinaryLogistic).build()?;
    initialize(&mut net, adaptact_core::InitScheme::LeCun, &mut rng_from(derive_seed(s.seed, 1)));
    let mut rng = rng_from(derive_seed(s.seed, 4));
    for layer in net.layers_mut() {
        for i in 0..layer.param_count(ParamClass::Bias) {
            layer.set_param(ParamClass::Bias, i, rng.random_range(-0.5..0.5));
        }
        for i in 0..layer.param_count(ParamClass::Shape) {
            layer.set_param(ParamClass::Shape, i, rng.random_range(-0.7..0.7));
        }
    }
    Ok(net)
}

pub fn gradcheck_batch(s: &GradCheckSetup) -> Result<(Tensor, Vec<usize>)> {
    let mut rng = rng_from(derive_seed(s.seed, 5));
    let x = Tensor::from_fn([s.batch, s.inputs], |_| StandardNormal.sample(&mut rng))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let labels = (0..s.batch).map(|_| rng.random_range(0..2)).collect();
    Ok((x, labels))
}

pub fn gradcheck_kind(kind: ActivationKind, s: &GradCheckSetup) -> Result<GradCheckReport> {
    let net = gradcheck_network(kind, s)?;
    let (x, labels) = gradcheck_batch(s)?;
    let loss = LossSpec::new(adaptact_core::BaseLoss::CrossEntropy, s.l1, s.l2)?;
    Ok(grad_check(&net, &x, &labels, &loss, s.h, s.tolerance)?)
}

/// Checks a saved model on a random batch shaped like its input.
pub fn gradcheck_model(net: &Network, s: &GradCheckSetup) -> Result<GradCheckReport> {
    let mut rng = rng_from(derive_seed(s.seed, 5));
    let mut shape = vec![s.batch];
    shape.extend_from_slice(net.input_shape());
    let x = Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng)).map_err(|e| CliError::Config(e.to_string()))?;
    let classes = net.output().classes();
    let labels: Vec<usize> = (0..s.batch).map(|_| rng.random_range(0..classes)).collect();
    let loss = LossSpec::new(adaptact_core::BaseLoss::CrossEntropy, s.l1, s.l2)?;
    Ok(grad_check(net, &x, &labels, &loss, s.h, s.tolerance)?)
}

pub fn format_report(label: &str, r: &GradCheckReport) -> String {
    let mut out = format!(
        "{label}: {} (max rel err {:.3e}, tol {:.0e}, h {:.0e})\n",
        if r.passed() { "PASS" } else { "FAIL" },
        r.max_rel_err,
        r.tolerance,
        r.step
    );
    for c in &r.classes {
        out += &format!("  {:<7} n={:<5} max rel err {:.3e}\n", format!("{:?}", c.class), c.count, c.max_rel_err);
    }
    for p in r.flagged.iter().take(10) {
        out += &format!(
            "  flagged layer {} {:?}[{}]: analytic {:.9e} numeric {:.9e} rel {:.3e}\n",
            p.layer, p.class, p.index, p.analytic, p.numeric, p.rel_err
        );
    }
    out
}

/// `x,value,dx,dalpha` rows for one kind and shape value.
pub fn write_kind_curve(path: &Path, kind: ActivationKind, alpha: f64, grid: &[f64]) -> Result<()> {
    let points = curve_dump(kind, alpha, grid)?;
    write_csv(
        path,
        &["x", "value", "dx", "dalpha"],
        points.iter().map(|p| vec![f(p.x), f(p.value), f(p.dx), f(p.dalpha)]),
    )
}

/// `layer,neuron,x,value` rows for every unit with an activation. Units of
/// fixed kinds are included with their single shape.
pub fn write_model_curves(path: &Path, net: &Network, grid: &[f64], adaptive_only: bool) -> Result<()> {
    let mut rows = Vec::new();
    for (li, layer) in net.layers().iter().enumerate() {
        let Some(kind) = layer.activation() else { continue };
        if kind == ActivationKind::Identity || (adaptive_only && !kind.is_adaptive()) {
            continue;
        }
        let units = layer.bias().map_or(0, Tensor::len);
        for unit in 0..units {
            let alpha = layer.shape_params().get(unit).map_or(1.0, |p| p.alpha());
            for &x in grid {
                rows.push(vec![li.to_string(), unit.to_string(), f(x), f(kind.eval(alpha, x).value)]);
            }
        }
    }
    write_csv(path, &["layer", "neuron", "x", "value"], rows)
}

pub fn write_alpha_hist(path: &Path, net: &Network) -> Result<()> {
    write_csv(
        path,
        &["layer", "neuron", "alpha"],
        net.alphas()
            .into_iter()
            .map(|(l, n, a)| vec![l.to_string(), n.to_string(), f(a)]),
    )
}

pub fn default_grid() -> Vec<f64> {
    linspace(-5.0, 5.0, 201)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub dataset: String,
    pub rows: usize,
    pub loss: f64,
    pub metrics: Metrics,
}

pub fn evaluate(net: &Network, data: &Dataset, loss: &LossSpec) -> Result<EvalSummary> {
    if data.sample_shape() != net.input_shape() {
        return Err(CliError::Data(format!(
            "dataset rows are {:?}, the model expects {:?}",
            data.sample_shape(),
            net.input_shape()
        )));
    }
    let predicted = predict_labels(net, &data.features)?;
    let metrics = compute_metrics(&predicted, &data.labels, net.output().classes())?;
    Ok(EvalSummary {
        dataset: data.name.clone(),
        rows: data.len(),
        loss: adaptact_core::trainer::dataset_loss(net, data, loss)?,
        metrics,
    })
}

/// MLP sized for `data`, with a logistic output for two classes and softmax otherwise.
pub fn mlp_for(data: &Dataset, layers: usize, width: usize, kind: ActivationKind) -> Result<Network> {
    if data.features.rank() != 2 {
        return Err(CliError::Data(format!(
            "train expects n x d features, got {:?}",
            data.features.shape()
        )));
    }
    let output = if data.classes == 2 {
        OutputSpec::BinaryLogistic
    } else {
        OutputSpec::Softmax { classes: data.classes }
    };
    Ok(Architecture::mlp(data.features.row_len(), layers, width, kind, output).build()?)
}

pub fn init_for(net: &mut Network, config: &TrainConfig) {
    initialize(net, config.init, &mut rng_from(derive_seed(config.seed, 1)));
}
