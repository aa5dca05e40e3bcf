//! Datasets: synthetic data sampled from a random generator network, MNIST
//! IDX files, k-fold splits and classification metrics.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::ActivationKind;
use crate::network::{Architecture, OutputSpec};
use crate::tensor::{Tensor, TensorError};
use crate::trainer::{derive_seed, initialize, predict_labels, rng_from, InitScheme};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: String, expected: u32, found: u32 },
    #[error("{path}: truncated, expected {expected} bytes but found {actual}")]
    Truncated { path: String, expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at row {row} out of range for {classes} classes")]
    LabelRange { row: usize, label: usize, classes: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    /// The request itself is malformed, independent of any data.
    #[error("invalid request: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Feature rows (`n x d` or `n x 1 x 28 x 28`) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rank() < 2 || features.rows() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} labels for features of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DataError::LabelRange { row, label, classes });
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample feature shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        })
    }

    /// First `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.name.clone())
    }

    /// Fraction of rows labelled 1 (binary datasets).
    pub fn positive_rate(&self) -> f64 {
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.len() as f64
    }

    /// Writes `x0,...,x{d-1},label` rows with 17-significant-digit floats.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |source| DataError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let d = self.features.row_len();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|&v| crate::numfmt::fmt17(v)).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads a CSV written by [`Dataset::write_csv`]; the last column is the label.
    pub fn read_csv(path: impl AsRef<Path>, classes: usize) -> Result<Self> {
        let path = path.as_ref();
        let p = path.display().to_string();
        let mut r = csv::Reader::from_path(path).map_err(|source| DataError::Csv { path: p.clone(), source })?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for rec in r.records() {
            let rec = rec.map_err(|source| DataError::Csv { path: p.clone(), source })?;
            let n = rec.len();
            if n < 2 || width.is_some_and(|w| w != n) {
                return Err(DataError::Invalid(format!("{p}: ragged or too-narrow row")));
            }
            width = Some(n);
            for field in rec.iter().take(n - 1) {
                data.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| DataError::Invalid(format!("{p}: bad feature `{field}`: {e}")))?,
                );
            }
            let label = &rec[n - 1];
            labels.push(
                label
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| DataError::Invalid(format!("{p}: bad label `{label}`: {e}")))?,
            );
        }
        let w = width.ok_or_else(|| DataError::Invalid(format!("{p}: no rows")))?;
        let name = path.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
        Dataset::new(name, Tensor::from_vec([labels.len(), w - 1], data)?, labels, classes)
    }
}

// ---------------------------------------------------------------------------
// Simulation

fn default_width() -> usize {
    10
}

/// Generator network and sampling settings for a synthetic binary dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub layers: usize,
    #[serde(default = "default_width")]
    pub neurons_per_layer: usize,
    pub activation: ActivationKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Sample labels from Bernoulli(pi) instead of thresholding at 0.5.
    #[serde(default)]
    pub stochastic_labels: bool,
}

/// Accepted class-balance window; draws outside it are regenerated.
pub const BALANCE_WINDOW: (f64, f64) = (0.25, 0.75);
const MAX_REDRAWS: u64 = 1000;

/// Provenance of a simulated dataset, written next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub spec: SimSpec,
    pub used_seed: u64,
    pub rejected_seeds: Vec<u64>,
    pub positive_rate: f64,
    pub generator_init: InitScheme,
    pub feature_distribution: String,
    pub labeling: String,
    pub assumptions: Vec<String>,
}

/// Samples a dataset from a random generator network.
///
/// The generator is an MLP with `layers` hidden layers of
/// `neurons_per_layer` units and a logistic output, initialized with
/// [`InitScheme::SimMixture`]. Features are i.i.d. `N(0, 1)`. When the
/// positive rate falls outside [`BALANCE_WINDOW`], the draw is repeated with
/// a seed derived from `(seed, attempt)` and the rejected seeds are recorded,
/// so neighbouring base seeds never share a dataset.
pub fn simulate(spec: &SimSpec) -> Result<(Dataset, SimManifest)> {
    if !matches!(spec.activation, ActivationKind::Sigmoid | ActivationKind::Relu) {
        return Err(DataError::Spec(format!(
            "generator activation must be sigmoid or relu, got {}",
            spec.activation
        )));
    }
    if spec.n == 0 || spec.d == 0 || spec.neurons_per_layer == 0 {
        return Err(DataError::Spec("n, d and neurons_per_layer must be >= 1".into()));
    }
    let mut rejected = Vec::new();
    for attempt in 0..MAX_REDRAWS {
        let seed = if attempt == 0 {
            spec.seed
        } else {
            derive_seed(spec.seed, 100 + attempt)
        };
        let data = simulate_once(spec, seed)?;
        let rate = data.positive_rate();
        if (BALANCE_WINDOW.0..=BALANCE_WINDOW.1).contains(&rate) {
            let manifest = SimManifest {
                spec: spec.clone(),
                used_seed: seed,
                rejected_seeds: rejected,
                positive_rate: rate,
                generator_init: InitScheme::SimMixture,
                feature_distribution: "normal(0,1) iid".into(),
                labeling: if spec.stochastic_labels {
                    "bernoulli(pi)".into()
                } else {
                    "pi > 0.5".into()
                },
                assumptions: vec![
                    "feature distribution chosen as standard normal".into(),
                    "labels thresholded unless stochastic_labels is set".into(),
                ],
            };
            return Ok((data, manifest));
        }
        rejected.push(seed);
    }
    Err(DataError::Invalid(format!(
        "no balanced draw within {MAX_REDRAWS} seeds starting at {}",
        spec.seed
    )))
}

fn simulate_once(spec: &SimSpec, seed: u64) -> Result<Dataset> {
    let arch = Architecture::mlp(
        spec.d,
        spec.layers,
        spec.neurons_per_layer,
        spec.activation,
        OutputSpec::BinaryLogistic,
    );
    let mut generator = arch.build().map_err(|e| DataError::Invalid(e.to_string()))?;
    initialize(&mut generator, InitScheme::SimMixture, &mut rng_from(derive_seed(seed, 10)));
    let mut rng = rng_from(derive_seed(seed, 11));
    let features = Tensor::from_fn([spec.n, spec.d], |_| StandardNormal.sample(&mut rng))?;
    let labels = if spec.stochastic_labels {
        let probs = generator
            .predict(&features)
            .map_err(|e| DataError::Invalid(e.to_string()))?;
        let mut coin = rng_from(derive_seed(seed, 12));
        probs.data().iter().map(|&p| usize::from(coin.random::<f64>() < p)).collect()
    } else {
        predict_labels(&generator, &features).map_err(|e| DataError::Invalid(e.to_string()))?
    };
    let name = format!(
        "sim-{}-{}x{}-seed{seed}",
        spec.activation.short_name(),
        spec.layers,
        spec.neurons_per_layer
    );
    Dataset::new(name, features, labels, 2)
}

// ---------------------------------------------------------------------------
// IDX

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn check_header(bytes: &[u8], path: &str, magic: u32, header: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated {
            path: path.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.into(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(DataError::Truncated {
            path: path.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Raw IDX image block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8], path: &str) -> Result<IdxImages> {
    check_header(bytes, path, IDX_IMAGES_MAGIC, 16)?;
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &str) -> Result<Vec<u8>> {
    check_header(bytes, path, IDX_LABELS_MAGIC, 8)?;
    let count = be_u32(bytes, 4) as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads an IDX image/label pair as `n x 1 x rows x cols` features in [0, 1].
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let img = parse_idx_images(&read(ip)?, &ip.display().to_string())?;
    let lab = parse_idx_labels(&read(lp)?, &lp.display().to_string())?;
    if img.count != lab.len() {
        return Err(DataError::CountMismatch {
            images: img.count,
            labels: lab.len(),
        });
    }
    if img.count == 0 {
        return Err(DataError::Invalid("IDX files hold no samples".into()));
    }
    let features = Tensor::from_vec(
        [img.count, 1, img.rows, img.cols],
        img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    let name = ip.file_name().map_or("mnist".into(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, features, lab.into_iter().map(usize::from).collect(), 10)
}

/// Standard file names inside an MNIST directory.
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            train_images: d.join("train-images-idx3-ubyte"),
            train_labels: d.join("train-labels-idx1-ubyte"),
            test_images: d.join("t10k-images-idx3-ubyte"),
            test_labels: d.join("t10k-labels-idx1-ubyte"),
        }
    }
}

/// Re-encodes image features as IDX bytes, quantizing `x * 255` with
/// round-half-to-even.
pub fn encode_idx_images(data: &Dataset) -> Result<Vec<u8>> {
    let [n, 1, rows, cols] = *data.features.shape() else {
        return Err(DataError::Invalid(format!(
            "expected n x 1 x h x w features, got {:?}",
            data.features.shape()
        )));
    };
    let mut out = Vec::with_capacity(16 + n * rows * cols);
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(
        data.features
            .data()
            .iter()
            .map(|&x| (x * 255.0).round_ties_even().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn encode_idx_labels(data: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + data.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for &l in &data.labels {
        out.push(u8::try_from(l).map_err(|_| DataError::Invalid(format!("label {l} does not fit in a byte")))?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Cross-validation

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded k-fold split of `0..n`. Validation folds are contiguous slices of
/// one permutation; the first `n % k` folds get one extra row.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(DataError::Spec(format!("k must be >= 2, got {k}")));
    }
    if k > n {
        return Err(DataError::Invalid(format!("k = {k} exceeds n = {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from(seed));
    let (base, extra) = (n / k, n % k);
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for f in 0..k {
        bounds.push(bounds[f] + base + usize::from(f < extra));
    }
    Ok((0..k)
        .map(|f| Fold {
            validation: perm[bounds[f]..bounds[f + 1]].to_vec(),
            train: perm[..bounds[f]]
                .iter()
                .chain(&perm[bounds[f + 1]..])
                .copied()
                .collect(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Per class; 0 when the class is never predicted.
    pub precision: Vec<f64>,
    /// Per class; 0 when the class never occurs.
    pub recall: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn macro_precision(&self) -> f64 {
        self.precision.iter().sum::<f64>() / self.precision.len() as f64
    }

    pub fn macro_recall(&self) -> f64 {
        self.recall.iter().sum::<f64>() / self.recall.len() as f64
    }
}

pub fn compute_metrics(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(DataError::Invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(DataError::Invalid("no predictions".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (row, (&p, &t)) in predicted.iter().zip(truth).enumerate() {
        for label in [p, t] {
            if label >= classes {
                return Err(DataError::LabelRange { row, label, classes });
            }
        }
        confusion[t][p] += 1;
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let trace: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let precision = (0..classes)
        .map(|c| ratio(confusion[c][c], (0..classes).map(|t| confusion[t][c]).sum()))
        .collect();
    let recall = (0..classes)
        .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
        .collect();
    Ok(Metrics {
        accuracy: trace as f64 / predicted.len() as f64,
        precision,
        recall,
        confusion,
    })
}
