use std::fmt;

use super::{NumError, Scalar};

/// Denominator floor for cosine similarity; zero vectors give similarity 0.
pub const COSINE_EPS: f64 = 1e-12;

/// Dense row-major tensor.
///
/// Scalars have rank 0 (`shape == []`), column vectors are `[d, 1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NumError> {
        if shape.contains(&0) {
            return Err(NumError::InvalidShape { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Column vector of shape `[len, 1]`.
    pub fn column(values: Vec<T>) -> Self {
        Self {
            shape: vec![values.len(), 1],
            data: values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = T::one();
        }
        out
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self, NumError> {
        Self::new(shape, data.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T, NumError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(NumError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize), NumError> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(NumError::RankMismatch {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.shape[1] + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[row * cols..(row + 1) * cols]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, NumError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<(), NumError> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(NumError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            })
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self, NumError> {
        self.same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self, NumError> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self, NumError> {
        self.zip_with(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    /// In-place `self += other`; shapes must match.
    pub fn add_assign(&mut self, other: &Self) -> Result<(), NumError> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NumError> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self, NumError> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Mean along `axis` of a rank-2 tensor, keeping the reduced axis with size 1.
    pub fn mean_axis(&self, axis: usize) -> Result<Self, NumError> {
        let (r, c) = self.dims2("mean_axis")?;
        match axis {
            0 => {
                let mut out = vec![T::zero(); c];
                for i in 0..r {
                    for (o, &x) in out.iter_mut().zip(self.row(i)) {
                        *o = *o + x;
                    }
                }
                let inv = T::one() / T::lit(r as f64);
                Ok(Self {
                    shape: vec![1, c],
                    data: out.into_iter().map(|x| x * inv).collect(),
                })
            }
            1 => {
                let inv = T::one() / T::lit(c as f64);
                let data = (0..r).map(|i| self.row(i).iter().copied().sum::<T>() * inv).collect();
                Ok(Self {
                    shape: vec![r, 1],
                    data,
                })
            }
            _ => Err(NumError::InvalidAxis { axis, rank: 2 }),
        }
    }

    /// Numerically stable softmax over each row (rank 1 is treated as one row).
    pub fn softmax_rows(&self) -> Result<Self, NumError> {
        let cols = self.row_len("softmax_rows")?;
        let mut data = self.data.clone();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total = total + *x;
            }
            for x in row.iter_mut() {
                *x = *x / total;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn log_softmax_rows(&self) -> Result<Self, NumError> {
        let cols = self.row_len("log_softmax_rows")?;
        let mut data = self.data.clone();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            for x in row.iter_mut() {
                *x = *x - lse;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    fn row_len(&self, op: &'static str) -> Result<usize, NumError> {
        match self.shape.as_slice() {
            [n] => Ok(*n),
            [_, c] => Ok(*c),
            _ => Err(NumError::RankMismatch {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self, NumError> {
        let (r, c) = self.dims2("gather_rows")?;
        if indices.is_empty() {
            return Err(NumError::EmptyIndex { op: "gather_rows" });
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(NumError::IndexOutOfRange { index: i, len: r });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            shape: vec![indices.len(), c],
            data,
        })
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self, NumError> {
        let (r, c) = self.dims2("slice_cols")?;
        if start >= end || end > c {
            return Err(NumError::IndexOutOfRange { index: end, len: c });
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Ok(Self {
            shape: vec![r, end - start],
            data,
        })
    }

    /// Concatenates rank-2 tensors along `axis`.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self, NumError> {
        let first = parts.first().ok_or(NumError::EmptyIndex { op: "concat" })?;
        let (r0, c0) = first.dims2("concat")?;
        match axis {
            0 => {
                let mut rows = 0;
                let mut data = Vec::new();
                for p in parts {
                    let (r, c) = p.dims2("concat")?;
                    if c != c0 {
                        return Err(NumError::ShapeMismatch {
                            op: "concat",
                            left: first.shape.clone(),
                            right: p.shape.clone(),
                        });
                    }
                    rows += r;
                    data.extend_from_slice(&p.data);
                }
                Ok(Self {
                    shape: vec![rows, c0],
                    data,
                })
            }
            1 => {
                let mut cols = 0;
                for p in parts {
                    let (r, c) = p.dims2("concat")?;
                    if r != r0 {
                        return Err(NumError::ShapeMismatch {
                            op: "concat",
                            left: first.shape.clone(),
                            right: p.shape.clone(),
                        });
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for p in parts {
                        data.extend_from_slice(p.row(i));
                    }
                }
                Ok(Self {
                    shape: vec![r0, cols],
                    data,
                })
            }
            _ => Err(NumError::InvalidAxis { axis, rank: 2 }),
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T, NumError> {
        if self.numel() != other.numel() {
            return Err(NumError::ShapeMismatch {
                op: "dot",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    /// Cosine similarity of two tensors with equal element counts, read as flat vectors.
    pub fn cosine(&self, other: &Self) -> Result<T, NumError> {
        if self.numel() != other.numel() {
            return Err(NumError::ShapeMismatch {
                op: "cosine",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(cosine(&self.data, &other.data))
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Cosine similarity on slices with a guarded denominator.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    dot(a, b) / (na * nb).max(T::lit(COSINE_EPS))
}
