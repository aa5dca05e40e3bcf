use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptact_runner::output::{f, resolve_out_dir, write_csv, write_json};
use adaptact_runner::tools::{self, GradCheckSetup};
use adaptact_runner::{mnist, table1, CliError, Result};
use adaptact_core::data::{simulate, Dataset, SimSpec};
use adaptact_core::trainer::train;
use adaptact_core::{ActivationKind, Network, TrainConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptact", version, about = "Adaptive-activation network experiments")]
struct Cli {
    /// Output directory (default: $ADAPTACT_OUT_DIR, else ./adaptact-out)
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Suppress progress lines on stderr
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a binary dataset from a random generator network
    Simulate(SimulateArgs),
    /// Generator x fitted-activation accuracy grid with k-fold CV
    Table1(Table1Args),
    /// LeNet5-style networks on MNIST IDX files
    Mnist(MnistArgs),
    /// Compare back-propagated gradients with central differences
    Gradcheck(GradcheckArgs),
    /// Dump activation curves as CSV
    Curves(CurvesArgs),
    /// Dump fitted alpha values as `layer,neuron,alpha` CSV
    AlphaHist(AlphaHistArgs),
    /// Train an MLP on a CSV dataset and save the model
    Train(TrainCmdArgs),
    /// Score a saved model on a CSV dataset
    Eval(EvalArgs),
}

/// Overrides applied on top of a config file or report.
#[derive(Args, Default)]
struct TrainArgs {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    gamma_alpha_multiplier: Option<f64>,
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.gamma_alpha_multiplier {
            c.gamma_alpha_multiplier = v;
        }
        if let Some(v) = self.l1 {
            c.l1 = v;
        }
        if let Some(v) = self.l2 {
            c.l2 = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 10)]
    width: usize,
    /// Generator activation: sigmoid or relu
    #[arg(long, default_value = "sigmoid")]
    activation: ActivationKind,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Draw labels from Bernoulli(pi) instead of thresholding at 0.5
    #[arg(long)]
    stochastic_labels: bool,
    /// CSV path (default: <out-dir>/simulated.csv); the manifest goes next to it
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Table1Args {
    /// TOML file with table1 settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-run the config embedded in a previous table1_report.json
    #[arg(long, conflicts_with = "config")]
    from_report: Option<PathBuf>,
    /// n=2000 and 300 epochs
    #[arg(long)]
    fast: bool,
    /// Generator as kind:layers, e.g. sigmoid:1 (repeatable)
    #[arg(long = "generator", value_parser = parse_generator)]
    generators: Vec<table1::GeneratorSpec>,
    /// Fitted kinds, comma separated
    #[arg(long, value_delimiter = ',')]
    fitted: Vec<ActivationKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    stochastic_labels: bool,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct MnistArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "config")]
    from_report: Option<PathBuf>,
    /// Directory with the four standard IDX files (default: $MNIST_DIR)
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Train on the first n training images
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
    /// Conv-layer kinds, comma separated
    #[arg(long, value_delimiter = ',')]
    conv: Vec<ActivationKind>,
    /// Dense-layer kinds, comma separated
    #[arg(long, value_delimiter = ',')]
    dense: Vec<ActivationKind>,
    #[arg(long)]
    dense_units: Option<usize>,
    /// Save each trained network as mnist_model_<conv>_<dense>.json
    #[arg(long)]
    save_models: bool,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check a saved model instead of fresh 2x10 dense nets
    #[arg(long)]
    model: Option<PathBuf>,
    /// Kinds to check (default: all), comma separated
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<ActivationKind>,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

#[derive(Args)]
struct CurvesArgs {
    /// Per-neuron curves of a saved model
    #[arg(long, conflicts_with = "kind")]
    model: Option<PathBuf>,
    /// Single kind at a given alpha, with derivatives
    #[arg(long)]
    kind: Option<ActivationKind>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// Skip fixed-activation layers
    #[arg(long)]
    adaptive_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AlphaHistArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCmdArgs {
    /// CSV with feature columns and a final `label` column
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 10)]
    width: usize,
    #[arg(long, default_value = "adaptive_gumbel")]
    activation: ActivationKind,
    /// Model path (default: <out-dir>/model.json)
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

fn parse_generator(s: &str) -> std::result::Result<table1::GeneratorSpec, String> {
    let (kind, layers) = s.split_once(':').ok_or("expected kind:layers, e.g. relu:8")?;
    Ok(table1::GeneratorSpec {
        activation: kind.parse().map_err(|e| format!("{e}"))?,
        layers: layers.parse().map_err(|e| format!("bad layer count `{layers}`: {e}"))?,
    })
}

fn load_model(path: &Path) -> Result<Network> {
    Network::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn progress_sink(quiet: bool) -> impl FnMut(&str) {
    move |line: &str| {
        if !quiet {
            eprintln!("{line}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    let out_dir = || resolve_out_dir(cli.out_dir.as_deref());
    match cli.command {
        Command::Simulate(a) => {
            let spec = SimSpec {
                layers: a.layers,
                neurons_per_layer: a.width,
                activation: a.activation,
                n: a.n,
                d: a.d,
                seed: a.seed,
                stochastic_labels: a.stochastic_labels,
            };
            let path = match a.out {
                Some(p) => p,
                None => out_dir()?.join("simulated.csv"),
            };
            let (data, manifest) = simulate(&spec)?;
            data.write_csv(&path)?;
            write_json(&path.with_extension("manifest.json"), &manifest)?;
            println!(
                "wrote {} ({} rows, positive rate {:.3}, seed {})",
                path.display(),
                data.len(),
                manifest.positive_rate,
                manifest.used_seed
            );
        }
        Command::Table1(a) => {
            let mut config = if let Some(p) = &a.from_report {
                table1::Table1Report::load(p)?.config
            } else if let Some(p) = &a.config {
                adaptact_runner::output::read_toml(p)?
            } else {
                table1::Table1Config::default()
            };
            if a.fast {
                config = config.fast();
            }
            if !a.generators.is_empty() {
                config.generators = a.generators.clone();
            }
            if !a.fitted.is_empty() {
                config.fitted = a.fitted.clone();
            }
            if let Some(n) = a.n {
                config.n = n;
            }
            if let Some(k) = a.folds {
                config.folds = k;
            }
            if a.stochastic_labels {
                config.stochastic_labels = true;
            }
            a.train.apply(&mut config.train);
            let dir = out_dir()?;
            let mut sink = progress_sink(quiet);
            let report = table1::run(&config, Some(&mut sink))?;
            table1::write_outputs(&report, &dir)?;
            for c in &report.cells {
                println!(
                    "{} x{} -> {:<6} {:6.2} +- {:.2}",
                    c.generator.activation.short_name(),
                    c.generator.layers,
                    c.fitted.short_name(),
                    c.accuracy,
                    c.std_error
                );
            }
            println!("wrote {}", dir.join(table1::TABLE_CSV).display());
        }
        Command::Mnist(a) => {
            let mut config = if let Some(p) = &a.from_report {
                mnist::MnistReport::load(p)?.config
            } else if let Some(p) = &a.config {
                adaptact_runner::output::read_toml(p)?
            } else {
                mnist::MnistConfig::default()
            };
            if a.dir.is_some() {
                config.dir = a.dir.clone();
            }
            if a.subset.is_some() {
                config.train_subset = a.subset;
            }
            if a.test_subset.is_some() {
                config.test_subset = a.test_subset;
            }
            if !a.conv.is_empty() {
                config.conv = a.conv.clone();
            }
            if !a.dense.is_empty() {
                config.dense = a.dense.clone();
            }
            if let Some(u) = a.dense_units {
                config.dense_units = u;
            }
            a.train.apply(&mut config.train);
            config.validate()?;
            let dir = out_dir()?;
            let (train_set, test_set) = mnist::load(&config)?;
            let mut sink = progress_sink(quiet);
            let (report, models) = mnist::run(&config, &train_set, &test_set, Some(&mut sink))?;
            mnist::write_outputs(&report, &dir)?;
            if a.save_models {
                for (r, m) in report.runs.iter().zip(&models) {
                    let name = format!("mnist_model_{}_{}.json", r.conv.name(), r.dense.name());
                    m.save(dir.join(name))?;
                }
            }
            for r in &report.runs {
                println!(
                    "conv {:<6} dense {:<6} test accuracy {:.2}%",
                    r.conv.short_name(),
                    r.dense.short_name(),
                    r.test_metrics.accuracy * 100.0
                );
            }
        }
        Command::Gradcheck(a) => {
            let setup = GradCheckSetup {
                batch: a.batch,
                seed: a.seed,
                h: a.h,
                tolerance: a.tol,
                ..GradCheckSetup::default()
            };
            let mut failed = Vec::new();
            if let Some(p) = &a.model {
                let net = load_model(p)?;
                let r = tools::gradcheck_model(&net, &setup)?;
                print!("{}", tools::format_report(&p.display().to_string(), &r));
                if !r.passed() {
                    failed.push(p.display().to_string());
                }
            } else {
                let kinds = if a.kinds.is_empty() {
                    ActivationKind::ALL.to_vec()
                } else {
                    a.kinds.clone()
                };
                for kind in kinds {
                    let r = tools::gradcheck_kind(kind, &setup)?;
                    print!("{}", tools::format_report(kind.name(), &r));
                    if !r.passed() {
                        failed.push(kind.name().to_string());
                    }
                }
            }
            if !failed.is_empty() {
                return Err(CliError::Numeric(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        Command::Curves(a) => {
            if a.points == 0 || a.from.is_nan() || a.to.is_nan() || a.from >= a.to {
                return Err(CliError::Config("need --points >= 1 and --from < --to".into()));
            }
            let grid = adaptact_core::activations::linspace(a.from, a.to, a.points);
            let path = match a.out {
                Some(p) => p,
                None => out_dir()?.join("curves.csv"),
            };
            match (&a.model, a.kind) {
                (Some(m), _) => tools::write_model_curves(&path, &load_model(m)?, &grid, a.adaptive_only)?,
                (None, Some(kind)) => tools::write_kind_curve(&path, kind, a.alpha, &grid)?,
                (None, None) => return Err(CliError::Config("pass --model or --kind".into())),
            }
            println!("wrote {}", path.display());
        }
        Command::AlphaHist(a) => {
            let net = load_model(&a.model)?;
            let path = match a.out {
                Some(p) => p,
                None => out_dir()?.join("alpha_hist.csv"),
            };
            tools::write_alpha_hist(&path, &net)?;
            println!("wrote {} ({} alphas)", path.display(), net.alphas().len());
        }
        Command::Train(a) => {
            let mut config = TrainConfig::default();
            a.train.apply(&mut config);
            config.validate()?;
            let data = Dataset::read_csv(&a.data, a.classes)?;
            let validation = a.validation.as_ref().map(|p| Dataset::read_csv(p, a.classes)).transpose()?;
            let mut net = tools::mlp_for(&data, a.layers, a.width, a.activation)?;
            tools::init_for(&mut net, &config);
            let curve = train(&mut net, &data, validation.as_ref(), &config)?;
            let dir = out_dir()?;
            let model_path = a.model_out.unwrap_or_else(|| dir.join("model.json"));
            net.save(&model_path)?;
            write_csv(
                &dir.join("train_curve.csv"),
                &["epoch", "train_loss", "validation_loss"],
                curve.train.iter().enumerate().map(|(e, &l)| {
                    vec![
                        e.to_string(),
                        f(l),
                        curve.validation.get(e).map_or_else(String::new, |&v| f(v)),
                    ]
                }),
            )?;
            let summary = tools::evaluate(&net, validation.as_ref().unwrap_or(&data), &config.loss_spec())?;
            println!(
                "saved {}; accuracy on {} {:.4}",
                model_path.display(),
                summary.dataset,
                summary.metrics.accuracy
            );
        }
        Command::Eval(a) => {
            let net = load_model(&a.model)?;
            let data = Dataset::read_csv(&a.data, net.output().classes())?;
            let summary = tools::evaluate(&net, &data, &adaptact_core::LossSpec::cross_entropy())?;
            println!(
                "{}",
                adaptact_core::numfmt::to_json_17(&summary).map_err(|e| CliError::Output(e.to_string()))?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exec(dir: &Path, args: &[&str]) -> Result<()> {
        let mut argv = vec!["adaptact", "-q", "--out-dir", dir.to_str().unwrap()];
        argv.extend_from_slice(args);
        run(Cli::try_parse_from(argv).expect("arguments parse"))
    }

    fn p(dir: &Path, name: &str) -> String {
        dir.join(name).to_str().unwrap().to_string()
    }

    fn csv_rows(path: &Path) -> Vec<Vec<String>> {
        let text = std::fs::read_to_string(path).unwrap();
        text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
    }

    #[test]
    fn simulate_train_eval_and_dumps() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        exec(d, &["simulate", "--n", "300", "--d", "4", "--seed", "3"]).unwrap();
        let rows = csv_rows(&d.join("simulated.csv"));
        assert_eq!(rows[0], ["x0", "x1", "x2", "x3", "label"]);
        assert_eq!(rows.len(), 301);
        assert!(d.join("simulated.manifest.json").exists());

        let data = p(d, "simulated.csv");
        exec(d, &["train", "--data", &data, "--epochs", "5", "--width", "3"]).unwrap();
        let curve = csv_rows(&d.join("train_curve.csv"));
        assert_eq!(curve.len(), 6);
        let model = p(d, "model.json");
        let net = Network::load(&model).unwrap();
        assert_eq!(net.input_shape(), &[4]);

        exec(d, &["eval", "--model", &model, "--data", &data]).unwrap();
        exec(d, &["gradcheck", "--model", &model]).unwrap();

        exec(d, &["alpha-hist", "--model", &model]).unwrap();
        let hist = csv_rows(&d.join("alpha_hist.csv"));
        assert_eq!(hist[0], ["layer", "neuron", "alpha"]);
        assert_eq!(hist.len(), 4);

        exec(d, &["curves", "--model", &model, "--points", "11"]).unwrap();
        assert_eq!(csv_rows(&d.join("curves.csv")).len(), 1 + 3 * 11);
    }

    #[test]
    fn fresh_adaptive_model_starts_at_alpha_one_and_fixed_kinds_have_none() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        exec(d, &["simulate", "--n", "100", "--d", "3"]).unwrap();
        let data = p(d, "simulated.csv");
        let fresh = p(d, "fresh.json");
        exec(d, &["train", "--data", &data, "--epochs", "1", "--gamma", "0", "--model-out", &fresh]).unwrap();
        exec(d, &["alpha-hist", "--model", &fresh]).unwrap();
        let hist = csv_rows(&d.join("alpha_hist.csv"));
        assert_eq!(hist.len(), 11);
        assert!(hist[1..].iter().all(|r| r[2].parse::<f64>().unwrap() == 1.0));

        let fixed = p(d, "fixed.json");
        exec(d, &["train", "--data", &data, "--epochs", "1", "--activation", "relu", "--model-out", &fixed]).unwrap();
        exec(d, &["alpha-hist", "--model", &fixed]).unwrap();
        assert_eq!(csv_rows(&d.join("alpha_hist.csv")), vec![vec!["layer", "neuron", "alpha"]]);
    }

    #[test]
    fn kind_curve_has_derivative_columns() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        exec(d, &["curves", "--kind", "adaptive_gumbel", "--alpha", "0.5", "--from", "-2", "--to", "2", "--points", "5"]).unwrap();
        let rows = csv_rows(&d.join("curves.csv"));
        assert_eq!(rows[0], ["x", "value", "dx", "dalpha"]);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[3][0].parse::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn single_fitted_kind_table_has_one_accuracy_column() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        exec(
            d,
            &["table1", "--generator", "sigmoid:1", "--fitted", "adaptive_gumbel", "--n", "120", "--folds", "2", "--epochs", "2"],
        )
        .unwrap();
        let rows = csv_rows(&d.join(table1::TABLE_CSV));
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].len(), 4, "{:?}", rows[0]);
        let acc: f64 = rows[1][2].parse().unwrap();
        assert!((0.0..=100.0).contains(&acc));
    }

    #[test]
    fn errors_map_to_exit_codes() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        let code = |args: &[&str]| exec(d, args).unwrap_err().exit_code();

        assert_eq!(code(&["simulate", "--activation", "adaptive_gumbel", "--n", "10"]), 2);
        assert_eq!(code(&["curves", "--kind", "relu", "--from", "1", "--to", "0"]), 2);
        assert_eq!(code(&["alpha-hist", "--model", &p(d, "missing.json")]), 3);
        std::fs::write(d.join("bad.csv"), "x0,label\n0.5,7\n").unwrap();
        assert_eq!(code(&["train", "--data", &p(d, "bad.csv")]), 3);
        assert_eq!(code(&["gradcheck", "--kinds", "sigmoid", "--h", "1.0"]), 4);
        assert_eq!(code(&["mnist", "--dir", &p(d, "nowhere"), "--subset", "10"]), 3);
    }

    #[test]
    fn generator_flag_syntax() {
        let g = parse_generator("relu:8").unwrap();
        assert_eq!((g.activation, g.layers), (ActivationKind::Relu, 8));
        assert!(parse_generator("relu").is_err());
        assert!(parse_generator("relu:x").is_err());
    }
}
