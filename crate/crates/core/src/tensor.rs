//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense tensor with a row-major value buffer.
///
/// Most of the workbench only needs rank-2 tensors (`[batch, features]`);
/// rank-0/1 shapes are accepted but the arithmetic helpers assume rank 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Rank-2 constructor.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![F::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// A `[1, 1]` tensor.
    pub fn scalar(value: F) -> Self {
        Self { shape: vec![1, 1], data: vec![value] }
    }

    /// A single row, shape `[1, n]`.
    pub fn row(values: &[F]) -> Self {
        Self { shape: vec![1, values.len()], data: values.to_vec() }
    }

    /// Stacks equally long rows into `[rows.len(), width]`.
    pub fn stack_rows<R: AsRef<[F]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::shape("Tensor::stack_rows", format!("row {i} has {} values, expected {width}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::from_rows(rows.len(), width, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[F] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { context: context.to_string() })
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn squared_norm(&self) -> F {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    /// `self · rhs` for rank-2 operands.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.cols() != rhs.rows() {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", self.shape, rhs.shape)));
        }
        let (n, k, m) = (self.rows(), self.cols(), rhs.cols());
        let mut out = vec![F::zero(); n * m];
        matmul_into(&self.data, &rhs.data, &mut out, n, k, m);
        Ok(Self { shape: vec![n, m], data: out })
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self { shape: vec![c, r], data: out }
    }
}

/// `out[n,m] += a[n,k] · b[k,m]`.
///
/// Full 2x8 output tiles are accumulated in registers; ragged edges fall
/// back to the plain i-k-j loop.
pub(crate) fn matmul_into<F: Scalar>(a: &[F], b: &[F], out: &mut [F], n: usize, k: usize, m: usize) {
    const R: usize = 2;
    const C: usize = 8;
    let (n_full, m_full) = (n - n % R, m - m % C);
    for i0 in (0..n_full).step_by(R) {
        let arows: [&[F]; R] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
        for j0 in (0..m_full).step_by(C) {
            let mut acc = [[F::zero(); C]; R];
            for (p, brow) in b.chunks_exact(m).enumerate() {
                let brow: &[F; C] = brow[j0..j0 + C].try_into().expect("tile width");
                for (acc_r, arow) in acc.iter_mut().zip(&arows) {
                    let av = arow[p];
                    for c in 0..C {
                        acc_r[c] += av * brow[c];
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate() {
                let orow = &mut out[(i0 + r) * m + j0..(i0 + r) * m + j0 + C];
                for c in 0..C {
                    orow[c] += acc_r[c];
                }
            }
        }
    }
    // right edge of the tiled rows, then the leftover rows
    let edge = |out: &mut [F], rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        if cols.is_empty() {
            return;
        }
        for i in rows {
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &b[p * m + cols.start..p * m + cols.end];
                for (o, &bv) in out[i * m + cols.start..i * m + cols.end].iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    };
    edge(out, 0..n_full, m_full..m);
    edge(out, n_full..n, 0..m);
}

/// Flattened parameter helpers used by TRPO and the checkpoint writer.
pub fn flatten<F: Scalar>(tensors: &[Tensor<F>]) -> Vec<F> {
    tensors.iter().flat_map(|t| t.values().iter().copied()).collect()
}

/// Writes `flat` back into tensors of the given shapes, in order.
pub fn unflatten_into<F: Scalar>(flat: &[F], tensors: &mut [Tensor<F>]) -> Result<()> {
    let total: usize = tensors.iter().map(Tensor::len).sum();
    if total != flat.len() {
        return Err(Error::shape("unflatten_into", format!("{} values for {total} slots", flat.len())));
    }
    let mut offset = 0;
    for t in tensors {
        let n = t.len();
        t.values_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(())
}
