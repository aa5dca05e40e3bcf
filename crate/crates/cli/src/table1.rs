//! Simulation grid: generator networks x fitted activation kinds, k-fold CV.

use std::path::Path;
use std::time::Instant;

use adaptact_core::data::{compute_metrics, kfold_split, simulate, Dataset, SimManifest, SimSpec};
use adaptact_core::trainer::{derive_seed, initialize, predict_labels, rng_from, train, LossCurve};
use adaptact_core::{ActivationKind, Architecture, Metrics, OutputSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::output::{f, mean_se, read_json, write_csv, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub activation: ActivationKind,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Config {
    pub generators: Vec<GeneratorSpec>,
    pub fitted: Vec<ActivationKind>,
    pub n: usize,
    pub d: usize,
    pub width: usize,
    pub folds: usize,
    pub seed: u64,
    pub stochastic_labels: bool,
    pub train: TrainConfig,
}

impl Default for Table1Config {
    fn default() -> Self {
        let generators = [ActivationKind::Sigmoid, ActivationKind::Relu]
            .into_iter()
            .flat_map(|activation| [1, 8].map(|layers| GeneratorSpec { activation, layers }))
            .collect();
        Self {
            generators,
            fitted: FITTED_KINDS.to_vec(),
            n: 10_000,
            d: 10,
            width: 10,
            folds: 5,
            seed: 1,
            stochastic_labels: false,
            train: TrainConfig::default(),
        }
    }
}

pub const FITTED_KINDS: [ActivationKind; 4] = [
    ActivationKind::Sigmoid,
    ActivationKind::AdaptiveGumbel,
    ActivationKind::Relu,
    ActivationKind::AdaptiveReluExp,
];

pub const FAST_N: usize = 2000;
pub const FAST_EPOCHS: usize = 300;

impl Table1Config {
    /// Shrinks to the `--fast` profile.
    pub fn fast(mut self) -> Self {
        self.n = FAST_N;
        self.train.epochs = FAST_EPOCHS;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.generators.is_empty() || self.fitted.is_empty() {
            return Err(CliError::Config("need at least one generator and one fitted kind".into()));
        }
        for g in &self.generators {
            if !matches!(g.activation, ActivationKind::Sigmoid | ActivationKind::Relu) || g.layers == 0 {
                return Err(CliError::Config(format!(
                    "generator must be sigmoid or relu with >= 1 layer, got {} x {}",
                    g.activation, g.layers
                )));
            }
        }
        if let Some(k) = self.fitted.iter().find(|k| !FITTED_KINDS.contains(k)) {
            return Err(CliError::Config(format!(
                "fitted kind {k} not in the table grid (sigmoid, adaptive_gumbel, relu, adaptive_relu_exp)"
            )));
        }
        if self.folds < 2 || self.folds > self.n {
            return Err(CliError::Config(format!("folds must be in [2, n], got {}", self.folds)));
        }
        if self.d == 0 || self.width == 0 {
            return Err(CliError::Config("d and width must be >= 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEntry {
    pub layer: usize,
    pub neuron: usize,
    pub alpha: f64,
}

pub fn alpha_snapshot(net: &adaptact_core::Network) -> Vec<AlphaEntry> {
    net.alphas()
        .into_iter()
        .map(|(layer, neuron, alpha)| AlphaEntry { layer, neuron, alpha })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub validation_size: usize,
    pub metrics: Metrics,
    pub loss: LossCurve,
    pub alpha_initial: Vec<AlphaEntry>,
    pub alpha_final: Vec<AlphaEntry>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell_index: usize,
    pub generator: GeneratorSpec,
    pub fitted: ActivationKind,
    pub seed: u64,
    /// Percent, mean over folds.
    pub accuracy: f64,
    /// Percent, sample std over folds / sqrt(k).
    pub std_error: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub folds: Vec<FoldReport>,
}

pub const REPORT_FORMAT: &str = "adaptact-table1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub format: String,
    pub version: u32,
    pub config: Table1Config,
    pub datasets: Vec<SimManifest>,
    pub cells: Vec<CellReport>,
    pub wall_clock_seconds: f64,
}

impl Table1Report {
    pub fn cell(&self, generator: GeneratorSpec, fitted: ActivationKind) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.generator == generator && c.fitted == fitted)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let report: Self = read_json(path)?;
        if report.format != REPORT_FORMAT {
            return Err(CliError::Data(format!(
                "{}: expected a `{REPORT_FORMAT}` report, found `{}`",
                path.display(),
                report.format
            )));
        }
        Ok(report)
    }
}

/// Progress sink; `None` keeps runs silent.
pub type Progress<'a> = Option<&'a mut dyn FnMut(&str)>;

/// Dataset seed for generator `g`; shared by every fitted kind on that row.
fn dataset_seed(base: u64, g: usize) -> u64 {
    derive_seed(base, 1_000 + g as u64)
}

/// Runs the grid. Cells are numbered generator-major; each cell's training
/// seed is `derive_seed(seed, cell_index)` so cells are independent of
/// execution order.
pub fn run(config: &Table1Config, mut progress: Progress<'_>) -> Result<Table1Report> {
    config.validate()?;
    let started = Instant::now();
    let mut datasets = Vec::new();
    let mut cells = Vec::new();
    let total = config.generators.len() * config.fitted.len();
    for (g, &generator) in config.generators.iter().enumerate() {
        let spec = SimSpec {
            layers: generator.layers,
            neurons_per_layer: config.width,
            activation: generator.activation,
            n: config.n,
            d: config.d,
            seed: dataset_seed(config.seed, g),
            stochastic_labels: config.stochastic_labels,
        };
        let (data, manifest) = simulate(&spec)?;
        let folds = kfold_split(data.len(), config.folds, derive_seed(manifest.used_seed, 3))?;
        datasets.push(manifest);
        for (j, &fitted) in config.fitted.iter().enumerate() {
            let cell_index = g * config.fitted.len() + j;
            let seed = derive_seed(config.seed, cell_index as u64);
            let coords = format!(
                "cell {cell_index} (generator {} x{}, fitted {fitted})",
                generator.activation, generator.layers
            );
            let mut fold_reports = Vec::new();
            for (k, fold) in folds.iter().enumerate() {
                let fr = run_fold(config, generator, fitted, &data, fold, k, derive_seed(seed, k as u64))
                    .map_err(|e| e.context(format!("{coords}, fold {k}")))?;
                if let Some(p) = progress.as_mut() {
                    p(&format!(
                        "[{}/{total}] {} x{} -> {:<6} fold {}/{}: acc {:.2}% ({:.1}s)",
                        cell_index + 1,
                        generator.activation.short_name(),
                        generator.layers,
                        fitted.short_name(),
                        k + 1,
                        folds.len(),
                        fr.metrics.accuracy * 100.0,
                        fr.wall_clock_seconds
                    ));
                }
                fold_reports.push(fr);
            }
            let accs: Vec<f64> = fold_reports.iter().map(|r| r.metrics.accuracy * 100.0).collect();
            let (accuracy, std_error) = mean_se(&accs);
            let mean_of = |get: fn(&Metrics) -> f64| {
                fold_reports.iter().map(|r| get(&r.metrics)).sum::<f64>() / fold_reports.len() as f64
            };
            cells.push(CellReport {
                cell_index,
                generator,
                fitted,
                seed,
                accuracy,
                std_error,
                macro_precision: mean_of(Metrics::macro_precision),
                macro_recall: mean_of(Metrics::macro_recall),
                folds: fold_reports,
            });
        }
    }
    Ok(Table1Report {
        format: REPORT_FORMAT.into(),
        version: 1,
        config: config.clone(),
        datasets,
        cells,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

fn run_fold(
    config: &Table1Config,
    generator: GeneratorSpec,
    fitted: ActivationKind,
    data: &Dataset,
    fold: &adaptact_core::data::Fold,
    k: usize,
    seed: u64,
) -> Result<FoldReport> {
    let started = Instant::now();
    let train_set = data.subset(&fold.train, format!("{}-train{k}", data.name))?;
    let valid_set = data.subset(&fold.validation, format!("{}-valid{k}", data.name))?;
    let mut net = Architecture::mlp(config.d, generator.layers, config.width, fitted, OutputSpec::BinaryLogistic).build()?;
    initialize(&mut net, config.train.init, &mut rng_from(derive_seed(seed, 1)));
    let alpha_initial = alpha_snapshot(&net);
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let loss = train(&mut net, &train_set, Some(&valid_set), &train_config)?;
    let predicted = predict_labels(&net, &valid_set.features)?;
    let metrics = compute_metrics(&predicted, &valid_set.labels, 2)?;
    Ok(FoldReport {
        fold: k,
        seed,
        train_size: train_set.len(),
        validation_size: valid_set.len(),
        metrics,
        loss,
        alpha_initial,
        alpha_final: alpha_snapshot(&net),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

pub const TABLE_CSV: &str = "table1.csv";
pub const FOLDS_CSV: &str = "table1_folds.csv";
pub const ALPHAS_CSV: &str = "table1_alphas.csv";
pub const CURVES_CSV: &str = "table1_curves.csv";
pub const REPORT_JSON: &str = "table1_report.json";

/// Writes the report JSON and the CSVs. Only the JSON carries wall-clock
/// times, so the CSVs are byte-identical across reruns of the same config.
pub fn write_outputs(report: &Table1Report, dir: &Path) -> Result<()> {
    let fitted = &report.config.fitted;
    let mut header = vec!["generator".to_string(), "layers".to_string()];
    header.extend(fitted.iter().map(|k| k.short_name().to_string()));
    header.extend(fitted.iter().map(|k| format!("{}_se", k.short_name())));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = report.config.generators.iter().map(|&g| {
        let cells: Vec<&CellReport> = fitted.iter().filter_map(|&k| report.cell(g, k)).collect();
        let mut row = vec![g.activation.name().to_string(), g.layers.to_string()];
        row.extend(cells.iter().map(|c| f(c.accuracy)));
        row.extend(cells.iter().map(|c| f(c.std_error)));
        row
    });
    write_csv(&dir.join(TABLE_CSV), &header_ref, rows)?;

    let folds = report.cells.iter().flat_map(|c| {
        c.folds.iter().map(move |r| {
            vec![
                c.generator.activation.name().to_string(),
                c.generator.layers.to_string(),
                c.fitted.name().to_string(),
                r.fold.to_string(),
                f(r.metrics.accuracy),
                f(r.metrics.macro_precision()),
                f(r.metrics.macro_recall()),
            ]
        })
    });
    write_csv(
        &dir.join(FOLDS_CSV),
        &["generator", "layers", "fitted", "fold", "accuracy", "macro_precision", "macro_recall"],
        folds,
    )?;

    let alphas = report.cells.iter().flat_map(|c| {
        c.folds.iter().flat_map(move |r| {
            r.alpha_initial.iter().zip(&r.alpha_final).map(move |(a0, a1)| {
                vec![
                    c.generator.activation.name().to_string(),
                    c.generator.layers.to_string(),
                    c.fitted.name().to_string(),
                    r.fold.to_string(),
                    a1.layer.to_string(),
                    a1.neuron.to_string(),
                    f(a0.alpha),
                    f(a1.alpha),
                ]
            })
        })
    });
    write_csv(
        &dir.join(ALPHAS_CSV),
        &["generator", "layers", "fitted", "fold", "layer", "neuron", "alpha_initial", "alpha_final"],
        alphas,
    )?;

    let curves = report.cells.iter().flat_map(|c| {
        c.folds.iter().flat_map(move |r| {
            r.loss.train.iter().enumerate().map(move |(e, &tl)| {
                vec![
                    c.generator.activation.name().to_string(),
                    c.generator.layers.to_string(),
                    c.fitted.name().to_string(),
                    r.fold.to_string(),
                    e.to_string(),
                    f(tl),
                    r.loss.validation.get(e).map_or_else(String::new, |&v| f(v)),
                ]
            })
        })
    });
    write_csv(
        &dir.join(CURVES_CSV),
        &["generator", "layers", "fitted", "fold", "epoch", "train_loss", "validation_loss"],
        curves,
    )?;

    write_json(&dir.join(REPORT_JSON), report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_fill_in_from_defaults() {
        let c: Table1Config = toml::from_str(
            r#"
            fitted = ["adaptive_gumbel"]
            n = 500
            generators = [{ activation = "relu", layers = 8 }]
            [train]
            epochs = 12
            gamma = 0.05
            "#,
        )
        .unwrap();
        assert_eq!(c.fitted, [ActivationKind::AdaptiveGumbel]);
        assert_eq!(c.generators, [GeneratorSpec { activation: ActivationKind::Relu, layers: 8 }]);
        assert_eq!((c.n, c.folds, c.d), (500, 5, 10));
        assert_eq!((c.train.epochs, c.train.gamma, c.train.batch_size), (12, 0.05, 20));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Table1Config>("epochs = 3").is_err());
        assert!(toml::from_str::<Table1Config>("[train]\nlearning_rate = 3").is_err());
    }

    #[test]
    fn validation_catches_bad_grids() {
        let bad = |edit: fn(&mut Table1Config)| {
            let mut c = Table1Config::default();
            edit(&mut c);
            c.validate().unwrap_err().exit_code()
        };
        assert_eq!(bad(|c| c.fitted.clear()), 2);
        assert_eq!(bad(|c| c.fitted = vec![ActivationKind::AdaptiveReluLogistic]), 2);
        assert_eq!(bad(|c| c.generators[0].activation = ActivationKind::AdaptiveGumbel), 2);
        assert_eq!(bad(|c| c.folds = 1), 2);
        assert_eq!(bad(|c| c.train.batch_size = 0), 2);
        Table1Config::default().validate().unwrap();
    }

    #[test]
    fn fast_profile_shrinks_only_size_and_epochs() {
        let c = Table1Config::default().fast();
        assert_eq!((c.n, c.train.epochs), (FAST_N, FAST_EPOCHS));
        assert_eq!(c.generators, Table1Config::default().generators);
    }

    #[test]
    fn small_grid_report_is_consistent() {
        let config = Table1Config {
            generators: vec![GeneratorSpec { activation: ActivationKind::Sigmoid, layers: 1 }],
            fitted: vec![ActivationKind::Sigmoid, ActivationKind::AdaptiveGumbel],
            n: 90,
            folds: 3,
            train: TrainConfig { epochs: 3, ..TrainConfig::default() },
            ..Table1Config::default()
        };
        let report = run(&config, None).unwrap();
        assert_eq!(report.cells.len(), 2);
        for cell in &report.cells {
            assert_eq!(cell.folds.len(), 3);
            let accs: Vec<f64> = cell.folds.iter().map(|f| f.metrics.accuracy * 100.0).collect();
            let (m, se) = mean_se(&accs);
            assert!((cell.accuracy - m).abs() < 1e-12 && (cell.std_error - se).abs() < 1e-12);
            assert!(cell.folds.iter().all(|f| f.train_size + f.validation_size == 90));
        }
        let sig = report.cell(config.generators[0], ActivationKind::Sigmoid).unwrap();
        assert!(sig.folds[0].alpha_final.is_empty());
        let gumb = report.cell(config.generators[0], ActivationKind::AdaptiveGumbel).unwrap();
        assert!(gumb.folds[0].alpha_initial.iter().all(|a| a.alpha == 1.0));
        assert_eq!(gumb.folds[0].alpha_initial.len(), 10);
    }
}
