//! Dense row-major `f64` arrays.
//!
//! [`Tensor`] is the only numeric container in the crate. It deliberately
//! supports a small surface: construction, elementwise maps, 2-D matrix
//! products, transposition, axis reductions and argmax. The only broadcast is
//! [`Tensor::add_row`], which adds a bias vector to every row of a matrix.
//!
//! All reductions and products accumulate in a fixed row-major order, so two
//! runs over identical inputs produce bitwise identical outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("invalid shape {0:?}: need at least one dimension, all positive")]
    InvalidShape(Vec<usize>),
    #[error("axis {axis} out of range for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("{op} needs a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense n-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = TensorError;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::from_vec(raw.shape, raw.data)
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Builds a tensor from owned data. Rejects non-finite entries.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFinite { index, value });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    /// Fills a tensor by calling `f` once per element in row-major order.
    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn([n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    /// Matrix from nested rows. Panics on ragged input; intended for literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::from_vec([rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for accumulator and optimizer paths.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Leading dimension (batch size for batched tensors).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all but the leading dimension.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Gathers the listed leading-dimension slices into a new tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let n = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        check_shape(&shape)?;
        Ok(Self { shape, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// Adds `bias` (length = row length) to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self> {
        let n = self.row_len();
        if bias.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(n) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Matrix product `self[m×k] · other[k×n]`.
    ///
    /// Each output entry accumulates over `k` in increasing order.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let c_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2("transpose")?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sums over `axis`, removing it. Reducing a rank-1 tensor yields shape `[1]`.
    pub fn reduce_sum(&self, axis: usize) -> Result<Self> {
        let (outer, mid, inner) = self.split_axis(axis)?;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let src = &self.data[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Ok(Self {
            shape: self.reduced_shape(axis),
            data,
        })
    }

    /// Index of the maximum along `axis` for every remaining position, in
    /// row-major order. Ties resolve to the lowest index.
    pub fn argmax(&self, axis: usize) -> Result<Vec<usize>> {
        let (outer, mid, inner) = self.split_axis(axis)?;
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut best_val = self.data[o * mid * inner + i];
                for m in 1..mid {
                    let v = self.data[(o * mid + m) * inner + i];
                    if v > best_val {
                        best = m;
                        best_val = v;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn split_axis(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    fn reduced_shape(&self, axis: usize) -> Vec<usize> {
        let mut shape = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        shape
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 2], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn identity_left_product() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let out = Tensor::identity(2).unwrap().matmul(&a).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random([3, 4], &mut rng);
        let b = random([4, 2], &mut rng);
        let out = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.data()[i * 4 + k] * b.data()[k * 2 + j];
                }
                assert_eq!(out.data()[i * 2 + j], s);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros([2, 3]).unwrap();
        let b = Tensor::zeros([2, 3]).unwrap();
        let err = a.matmul(&b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3] vs [2, 3]"));
    }

    #[test]
    fn scale_by_zero() {
        let t = Tensor::from_vec([3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.scale(0.0).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::from_vec([3], vec![0.2, 0.5, 0.5]).unwrap();
        assert_eq!(t.argmax(0).unwrap(), vec![1]);
        let m = Tensor::from_rows(&[&[1.0, 1.0, 0.0], &[0.0, 2.0, 2.0]]).unwrap();
        assert_eq!(m.argmax(1).unwrap(), vec![0, 1]);
        assert_eq!(m.argmax(0).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn reduce_sum_axes() {
        let m = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let cols = m.reduce_sum(0).unwrap();
        assert_eq!(cols.shape(), &[2]);
        assert_eq!(cols.data(), &[4.0, 6.0]);
        assert_eq!(m.reduce_sum(1).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(cols.reduce_sum(0).unwrap().data(), &[10.0]);
        assert!(matches!(
            m.reduce_sum(2),
            Err(TensorError::InvalidAxis { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn binary_ops_reject_mismatch() {
        let a = Tensor::zeros([2, 2]).unwrap();
        let b = Tensor::zeros([4]).unwrap();
        assert!(matches!(a.add(&b), Err(TensorError::ShapeMismatch { op: "add", .. })));
        assert!(a.add_row(&b).is_err());
    }

    #[test]
    fn construction_checks() {
        assert!(matches!(
            Tensor::from_vec([2, 2], vec![1.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
        assert!(matches!(Tensor::zeros([2, 0]), Err(TensorError::InvalidShape(_))));
        assert!(matches!(
            Tensor::from_vec([2], vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { index: 1, .. })
        ));
        let bad: std::result::Result<Tensor, _> =
            serde_json::from_str(r#"{"shape":[2,2],"data":[1.0]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn add_row_broadcasts_bias() {
        let m = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::from_vec([2], vec![10.0, 20.0]).unwrap();
        assert_eq!(m.add_row(&b).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
    }

    proptest! {
        #[test]
        fn transpose_is_an_involution(m in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random([m, n], &mut rng);
            let back = a.transpose().unwrap().transpose().unwrap();
            prop_assert_eq!(back, a);
        }

        #[test]
        fn right_identity_is_exact(m in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random([m, n], &mut rng);
            let out = a.matmul(&Tensor::identity(n).unwrap()).unwrap();
            prop_assert_eq!(out, a);
        }

        #[test]
        fn matmul_is_associative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random([5, 5], &mut rng);
            let b = random([5, 5], &mut rng);
            let c = random([5, 5], &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            for (l, r) in left.data().iter().zip(right.data()) {
                prop_assert!((l - r).abs() <= 1e-12 * scale);
            }
        }
    }
}
