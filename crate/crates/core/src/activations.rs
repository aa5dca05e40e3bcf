//! Fixed and adaptive activation functions.
//!
//! The adaptive families carry a positive shape parameter `alpha`:
//!
//! * [`ActivationKind::AdaptiveGumbel`]: `1 - (1 + alpha * e^x)^(-1/alpha)`.
//!   `alpha = 1` is the logistic sigmoid, `alpha -> 0` the Gumbel CDF
//!   `1 - exp(-e^x)`.
//! * [`ActivationKind::AdaptiveReluExp`]: `x * (1 - e^(-alpha x))` for `x > 0`,
//!   zero otherwise. Tends to `max(0, x)` as `alpha -> inf`.
//! * [`ActivationKind::AdaptiveReluLogistic`]: `x * logistic(alpha x)` (SWISH),
//!   SiLU at `alpha = 1`.
//!
//! Every kind exposes its value, its derivative in `x` and, for adaptive
//! kinds, its derivative in `alpha`. Networks never store `alpha` directly;
//! see [`ShapeParam`].

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActivationError {
    #[error("shape parameter must be positive and finite for {kind}, got {alpha}")]
    Domain { kind: ActivationKind, alpha: f64 },
    #[error("{kind} has no shape parameter")]
    Unsupported { kind: ActivationKind },
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error("unknown activation kind `{0}`")]
    UnknownKind(String),
}

pub type Result<T> = std::result::Result<T, ActivationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    /// Pass-through; used for output logits and linear probes.
    Identity,
    Sigmoid,
    Relu,
    AdaptiveGumbel,
    AdaptiveReluExp,
    AdaptiveReluLogistic,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        Self::Identity,
        Self::Sigmoid,
        Self::Relu,
        Self::AdaptiveGumbel,
        Self::AdaptiveReluExp,
        Self::AdaptiveReluLogistic,
    ];

    pub fn is_adaptive(self) -> bool {
        matches!(
            self,
            Self::AdaptiveGumbel | Self::AdaptiveReluExp | Self::AdaptiveReluLogistic
        )
    }

    /// Kinds built on `x * CDF(x)`, whose value and slope vanish at `x <= 0`
    /// in the limit and which have a kink (or near-kink) at zero.
    pub fn is_relu_family(self) -> bool {
        matches!(
            self,
            Self::Relu | Self::AdaptiveReluExp | Self::AdaptiveReluLogistic
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Sigmoid => "sigmoid",
            Self::Relu => "relu",
            Self::AdaptiveGumbel => "adaptive_gumbel",
            Self::AdaptiveReluExp => "adaptive_relu_exp",
            Self::AdaptiveReluLogistic => "adaptive_relu_logistic",
        }
    }

    /// Column label used in experiment tables.
    pub fn short_name(self) -> &'static str {
        match self {
            Self::Identity => "Id",
            Self::Sigmoid => "Sig",
            Self::Relu => "ReLU",
            Self::AdaptiveGumbel => "AGumb",
            Self::AdaptiveReluExp => "AReLU",
            Self::AdaptiveReluLogistic => "ASwish",
        }
    }

    fn check_alpha(self, alpha: f64) -> Result<()> {
        if self.is_adaptive() && !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ActivationError::Domain { kind: self, alpha });
        }
        Ok(())
    }

    /// `sigma_alpha(x)`. Fixed kinds ignore `alpha`.
    pub fn value(self, alpha: f64, x: f64) -> Result<f64> {
        self.check_alpha(alpha)?;
        Ok(self.eval(alpha, x).value)
    }

    /// Derivative with respect to `x`. ReLU-family kinds use slope 0 at `x = 0`.
    pub fn dx(self, alpha: f64, x: f64) -> Result<f64> {
        self.check_alpha(alpha)?;
        Ok(self.eval(alpha, x).dx)
    }

    /// Derivative with respect to `alpha`.
    pub fn dalpha(self, alpha: f64, x: f64) -> Result<f64> {
        if !self.is_adaptive() {
            return Err(ActivationError::Unsupported { kind: self });
        }
        self.check_alpha(alpha)?;
        Ok(self.eval(alpha, x).dalpha)
    }

    /// Value and both partial derivatives in one pass, without domain checks.
    ///
    /// Callers must guarantee `alpha > 0` for adaptive kinds; layers do so by
    /// storing `alpha = exp(a)`. `dalpha` is zero for fixed kinds.
    #[inline]
    pub fn eval(self, alpha: f64, x: f64) -> Eval {
        match self {
            Self::Identity => Eval {
                value: x,
                dx: 1.0,
                dalpha: 0.0,
            },
            Self::Sigmoid => {
                let s = logistic(x);
                Eval {
                    value: s,
                    dx: s * (1.0 - s),
                    dalpha: 0.0,
                }
            }
            Self::Relu => {
                if x > 0.0 {
                    Eval {
                        value: x,
                        dx: 1.0,
                        dalpha: 0.0,
                    }
                } else {
                    Eval::ZERO
                }
            }
            Self::AdaptiveGumbel => gumbel(alpha, x),
            Self::AdaptiveReluExp => {
                if x > 0.0 {
                    let decay = (-alpha * x).exp();
                    Eval {
                        value: x * -(-alpha * x).exp_m1(),
                        dx: -(-alpha * x).exp_m1() + alpha * x * decay,
                        dalpha: x * x * decay,
                    }
                } else {
                    Eval::ZERO
                }
            }
            Self::AdaptiveReluLogistic => {
                let s = logistic(alpha * x);
                let ds = s * (1.0 - s);
                Eval {
                    value: x * s,
                    dx: s + alpha * x * ds,
                    dalpha: x * x * ds,
                }
            }
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = ActivationError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        let kind = match norm.as_str() {
            "identity" | "id" | "linear" => Self::Identity,
            "sigmoid" | "sig" => Self::Sigmoid,
            "relu" => Self::Relu,
            "adaptive_gumbel" | "agumb" | "agumbel" | "gumbel" => Self::AdaptiveGumbel,
            "adaptive_relu_exp" | "arelu" | "adaptive_relu" => Self::AdaptiveReluExp,
            "adaptive_relu_logistic" | "aswish" | "swish" => Self::AdaptiveReluLogistic,
            _ => return Err(ActivationError::UnknownKind(s.to_string())),
        };
        Ok(kind)
    }
}

/// Value and partial derivatives of an activation at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eval {
    pub value: f64,
    pub dx: f64,
    pub dalpha: f64,
}

impl Eval {
    const ZERO: Eval = Eval {
        value: 0.0,
        dx: 0.0,
        dalpha: 0.0,
    };
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

// With z = x + ln(alpha) and L = ln(1 + alpha e^x) = softplus(z):
//   1 - sigma = exp(-L / alpha)
//   d sigma/dx     = (1 - sigma) * logistic(z) / alpha
//   d sigma/dalpha = (1 - sigma) * (logistic(z) - L) / alpha^2
// At alpha = 1 the value and slope are computed exactly as the sigmoid's so
// that unit-shape networks reproduce sigmoid networks bit for bit.
#[inline]
fn gumbel(alpha: f64, x: f64) -> Eval {
    if alpha == 1.0 {
        let s = logistic(x);
        return Eval {
            value: s,
            dx: s * (1.0 - s),
            dalpha: (1.0 - s) * (s - softplus(x)),
        };
    }
    let z = x + alpha.ln();
    let l = softplus(z);
    let q = -l / alpha;
    let tail = q.exp();
    let s = logistic(z);
    Eval {
        value: -q.exp_m1(),
        dx: tail * s / alpha,
        dalpha: tail * (s - l) / (alpha * alpha),
    }
}

/// Trainable shape parameter stored unconstrained as `a`, with `alpha = exp(a)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShapeParam(pub f64);

impl ShapeParam {
    pub fn from_alpha(alpha: f64) -> Self {
        Self(alpha.ln())
    }

    pub fn alpha(self) -> f64 {
        self.0.exp()
    }

    pub fn raw(self) -> f64 {
        self.0
    }
}

/// Deviation of an adaptive family from its limiting function on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitsReport {
    pub kind: ActivationKind,
    /// Shape value used to approximate the limit.
    pub alpha: f64,
    pub limit: &'static str,
    pub max_deviation: f64,
    pub worst_x: f64,
}

pub const GUMBEL_LIMIT_ALPHA: f64 = 1e-8;
pub const RELU_LIMIT_ALPHA: f64 = 1e4;

/// Compares each adaptive family against its limiting shape:
/// the Gumbel CDF for `AdaptiveGumbel` at `alpha = 1e-8`, and `max(0, x)` for
/// the ReLU family at `alpha = 1e4`. Fixed kinds are compared with themselves.
pub fn limits_check(kind: ActivationKind, grid: &[f64]) -> LimitsReport {
    let (alpha, limit, target): (f64, &'static str, fn(f64) -> f64) = match kind {
        ActivationKind::AdaptiveGumbel => (GUMBEL_LIMIT_ALPHA, "gumbel_cdf", |x| {
            -(-x.exp()).exp_m1()
        }),
        ActivationKind::AdaptiveReluExp | ActivationKind::AdaptiveReluLogistic => {
            (RELU_LIMIT_ALPHA, "relu", |x| x.max(0.0))
        }
        ActivationKind::Identity => (1.0, "identity", |x| x),
        ActivationKind::Sigmoid => (1.0, "sigmoid", logistic),
        ActivationKind::Relu => (1.0, "relu", |x| x.max(0.0)),
    };
    let mut report = LimitsReport {
        kind,
        alpha,
        limit,
        max_deviation: 0.0,
        worst_x: grid.first().copied().unwrap_or(0.0),
    };
    for &x in grid {
        let dev = (kind.eval(alpha, x).value - target(x)).abs();
        if dev > report.max_deviation {
            report.max_deviation = dev;
            report.worst_x = x;
        }
    }
    report
}

/// Supremum over `grid` of `|sigma_alpha1(x) - sigma_alpha2(x)|` for the
/// adaptive Gumbel family. Distinct shapes give distinct functions, so this is
/// positive whenever the shapes differ.
pub fn identifiability_witness(alpha1: f64, alpha2: f64, grid: &[f64]) -> Result<f64> {
    let kind = ActivationKind::AdaptiveGumbel;
    kind.check_alpha(alpha1)?;
    kind.check_alpha(alpha2)?;
    if grid.is_empty() {
        return Err(ActivationError::EmptyGrid);
    }
    Ok(grid.iter().fold(0.0, |sup, &x| {
        let d = (kind.eval(alpha1, x).value - kind.eval(alpha2, x).value).abs();
        sup.max(d)
    }))
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| lo + step * i as f64).collect()
        }
    }
}

/// One row of a curve dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub value: f64,
    pub dx: f64,
    pub dalpha: f64,
}

/// Evaluates `kind` at `alpha` over `grid`; rows feed `x,value,dx,dalpha` CSVs.
pub fn curve_dump(kind: ActivationKind, alpha: f64, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    kind.check_alpha(alpha)?;
    Ok(grid
        .iter()
        .map(|&x| {
            let e = kind.eval(alpha, x);
            CurvePoint {
                x,
                value: e.value,
                dx: e.dx,
                dalpha: e.dalpha,
            }
        })
        .collect())
}
