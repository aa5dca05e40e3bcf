//! LeNet5-style runs on MNIST IDX files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use adaptact_core::data::{compute_metrics, load_mnist_idx, Dataset, MnistPaths};
use adaptact_core::trainer::{derive_seed, initialize, predict_labels, rng_from, train_with, LossCurve};
use adaptact_core::{ActivationKind, Architecture, Metrics, Network, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::output::{f, read_json, write_csv, write_json};
use crate::table1::{alpha_snapshot, AlphaEntry, Progress};

/// Environment variable pointing at a directory with the four standard IDX files.
pub const MNIST_DIR_ENV: &str = "MNIST_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistConfig {
    pub dir: Option<PathBuf>,
    /// Use only the first `n` training images.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub conv: Vec<ActivationKind>,
    pub dense: Vec<ActivationKind>,
    pub dense_units: usize,
    pub train: TrainConfig,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            dir: None,
            train_subset: None,
            test_subset: None,
            conv: vec![ActivationKind::Relu],
            dense: vec![ActivationKind::AdaptiveGumbel],
            dense_units: 1000,
            train: TrainConfig {
                gamma: 0.01,
                l1: 0.0,
                l2: 0.0,
                batch_size: 100,
                epochs: 5,
                seed: 1,
                ..TrainConfig::default()
            },
        }
    }
}

impl MnistConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() || self.dense.is_empty() {
            return Err(CliError::Config("need at least one conv and one dense kind".into()));
        }
        if let Some(k) = self.conv.iter().chain(&self.dense).find(|k| **k == ActivationKind::Identity) {
            return Err(CliError::Config(format!("{k} is not a hidden-layer activation")));
        }
        if self.dense_units == 0 || self.train_subset == Some(0) || self.test_subset == Some(0) {
            return Err(CliError::Config("dense_units and subsets must be >= 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn paths(&self) -> Result<MnistPaths> {
        let dir = self
            .dir
            .clone()
            .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| CliError::Config(format!("no MNIST directory: pass --dir or set {MNIST_DIR_ENV}")))?;
        Ok(MnistPaths::in_dir(dir))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistRun {
    pub conv: ActivationKind,
    pub dense: ActivationKind,
    pub seed: u64,
    pub test_metrics: Metrics,
    pub loss: LossCurve,
    pub alpha_initial: Vec<AlphaEntry>,
    pub alpha_final: Vec<AlphaEntry>,
    pub wall_clock_seconds: f64,
}

pub const REPORT_FORMAT: &str = "adaptact-mnist";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistReport {
    pub format: String,
    pub version: u32,
    pub config: MnistConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub runs: Vec<MnistRun>,
    pub wall_clock_seconds: f64,
}

impl MnistReport {
    pub fn load(path: &Path) -> Result<Self> {
        let report: Self = read_json(path)?;
        if report.format != REPORT_FORMAT {
            return Err(CliError::Data(format!("{}: not a `{REPORT_FORMAT}` report", path.display())));
        }
        Ok(report)
    }
}

pub fn load(config: &MnistConfig) -> Result<(Dataset, Dataset)> {
    let paths = config.paths()?;
    let mut train = load_mnist_idx(&paths.train_images, &paths.train_labels)?;
    let mut test = load_mnist_idx(&paths.test_images, &paths.test_labels)?;
    if let Some(n) = config.train_subset {
        train = train.head(n)?;
    }
    if let Some(n) = config.test_subset {
        test = test.head(n)?;
    }
    Ok((train, test))
}

/// Trains one network per (conv, dense) pair and scores it on `test`.
/// Returns the report and the trained models in grid order.
pub fn run(
    config: &MnistConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    mut progress: Progress<'_>,
) -> Result<(MnistReport, Vec<Network>)> {
    config.validate()?;
    let started = Instant::now();
    let mut runs = Vec::new();
    let mut models = Vec::new();
    for (i, (&conv, &dense)) in config
        .conv
        .iter()
        .flat_map(|c| config.dense.iter().map(move |d| (c, d)))
        .enumerate()
    {
        let t = Instant::now();
        let at = format!("conv {conv}, dense {dense}");
        let seed = derive_seed(config.train.seed, i as u64);
        let mut net = Architecture::lenet5(conv, dense, config.dense_units)
            .build()
            .map_err(|e| CliError::from(e).context(&at))?;
        if net.input_shape() != train_set.sample_shape() {
            return Err(CliError::Data(format!(
                "images are {:?}, the network expects {:?}",
                train_set.sample_shape(),
                net.input_shape()
            )));
        }
        initialize(&mut net, config.train.init, &mut rng_from(derive_seed(seed, 1)));
        let alpha_initial = alpha_snapshot(&net);
        let cfg = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let loss = train_with(&mut net, train_set, Some(test_set), &cfg, |s| {
            if let Some(p) = progress.as_mut() {
                p(&format!(
                    "{at}: epoch {} train loss {:.4} test loss {:.4}",
                    s.epoch + 1,
                    s.train_loss,
                    s.validation_loss.unwrap_or(f64::NAN)
                ));
            }
        })
        .map_err(|e| CliError::from(e).context(&at))?;
        let predicted = predict_labels(&net, &test_set.features)?;
        let test_metrics = compute_metrics(&predicted, &test_set.labels, 10)?;
        if let Some(p) = progress.as_mut() {
            p(&format!("{at}: test accuracy {:.2}%", test_metrics.accuracy * 100.0));
        }
        runs.push(MnistRun {
            conv,
            dense,
            seed,
            test_metrics,
            loss,
            alpha_initial,
            alpha_final: alpha_snapshot(&net),
            wall_clock_seconds: t.elapsed().as_secs_f64(),
        });
        models.push(net);
    }
    Ok((
        MnistReport {
            format: REPORT_FORMAT.into(),
            version: 1,
            config: config.clone(),
            train_size: train_set.len(),
            test_size: test_set.len(),
            runs,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
        models,
    ))
}

pub const TABLE_CSV: &str = "mnist.csv";
pub const CURVES_CSV: &str = "mnist_curves.csv";
pub const CONFUSION_CSV: &str = "mnist_confusion.csv";
pub const REPORT_JSON: &str = "mnist_report.json";

/// Writes a conv-by-dense accuracy table plus curves, confusion matrices and the report.
pub fn write_outputs(report: &MnistReport, dir: &Path) -> Result<()> {
    let dense = &report.config.dense;
    let mut header = vec!["conv".to_string()];
    header.extend(dense.iter().map(|k| k.short_name().to_string()));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = report.config.conv.iter().map(|&c| {
        let mut row = vec![c.name().to_string()];
        row.extend(dense.iter().map(|&d| {
            report
                .runs
                .iter()
                .find(|r| r.conv == c && r.dense == d)
                .map_or_else(String::new, |r| f(r.test_metrics.accuracy * 100.0))
        }));
        row
    });
    write_csv(&dir.join(TABLE_CSV), &header_ref, rows)?;

    let curves = report.runs.iter().flat_map(|r| {
        r.loss.train.iter().enumerate().map(move |(e, &tl)| {
            vec![
                r.conv.name().to_string(),
                r.dense.name().to_string(),
                e.to_string(),
                f(tl),
                r.loss.validation.get(e).map_or_else(String::new, |&v| f(v)),
            ]
        })
    });
    write_csv(&dir.join(CURVES_CSV), &["conv", "dense", "epoch", "train_loss", "test_loss"], curves)?;

    let confusion = report.runs.iter().flat_map(|r| {
        r.test_metrics.confusion.iter().enumerate().flat_map(move |(t, row)| {
            row.iter().enumerate().map(move |(p, &n)| {
                vec![
                    r.conv.name().to_string(),
                    r.dense.name().to_string(),
                    t.to_string(),
                    p.to_string(),
                    n.to_string(),
                ]
            })
        })
    });
    write_csv(&dir.join(CONFUSION_CSV), &["conv", "dense", "true", "predicted", "count"], confusion)?;
    write_json(&dir.join(REPORT_JSON), report)
}
