//! Dense tensor storage and the basic structural operations: element access,
//! fibers, slices, mode-n matricization, outer/inner products and the
//! Kruskal (CP-form) representation.
//!
//! All multi-indices and mode numbers in the public API are **1-based**. Data
//! is stored in a single flat buffer with the first index varying fastest, so
//! element `(i_1, ..., i_N)` lives at offset `sum_k (i_k - 1) * prod_{m<k} I_m`.
//! With this layout the mode-1 unfolding of a tensor is a plain reinterpretation
//! of its buffer as a column-major `I_1 x (I_2 ... I_N)` matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Wraps a flat buffer (first index fastest) with the given extents.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return dim_err(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let len = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every 1-based multi-index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![1usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            advance_one_based(&mut idx, &shape);
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat buffer, first index fastest.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn offset(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.order() {
            return dim_err(format!(
                "index of length {} for an order-{} tensor",
                idx.len(),
                self.order()
            ));
        }
        let mut offset = 0;
        let mut stride = 1;
        for (k, (&i, &extent)) in idx.iter().zip(&self.shape).enumerate() {
            if i == 0 || i > extent {
                return dim_err(format!(
                    "index {} out of range 1..={} in mode {}",
                    i,
                    extent,
                    k + 1
                ));
            }
            offset += (i - 1) * stride;
            stride *= extent;
        }
        Ok(offset)
    }

    /// Scalar at a 1-based multi-index.
    pub fn element(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let off = self.offset(idx)?;
        self.data[off] = value;
        Ok(())
    }

    fn check_mode(&self, mode: usize) -> Result<usize> {
        if mode == 0 || mode > self.order() {
            return dim_err(format!(
                "mode {} out of range 1..={}",
                mode,
                self.order()
            ));
        }
        Ok(mode - 1)
    }

    /// Mode-`mode` fiber: all indices fixed except the one in `mode`.
    ///
    /// `fixed` lists the 1-based indices of the remaining modes in increasing
    /// mode order (length `N - 1`).
    pub fn fiber(&self, mode: usize, fixed: &[usize]) -> Result<DVector<f64>> {
        let m = self.check_mode(mode)?;
        if fixed.len() + 1 != self.order() {
            return dim_err(format!(
                "fiber of an order-{} tensor needs {} fixed indices, got {}",
                self.order(),
                self.order() - 1,
                fixed.len()
            ));
        }
        let mut idx: Vec<usize> = Vec::with_capacity(self.order());
        idx.extend_from_slice(&fixed[..m]);
        idx.push(1);
        idx.extend_from_slice(&fixed[m..]);
        let start = self.offset(&idx)?;
        let stride: usize = self.shape[..m].iter().product();
        Ok(DVector::from_fn(self.shape[m], |i, _| {
            self.data[start + i * stride]
        }))
    }

    /// Sub-tensor of order `N - 1` obtained by fixing `mode` at index `k`.
    ///
    /// For an order-3 tensor, mode 3 gives frontal slices, mode 2 lateral and
    /// mode 1 horizontal slices. Order-1 inputs are rejected since scalars are
    /// not representable.
    pub fn slice(&self, mode: usize, k: usize) -> Result<DenseTensor> {
        let m = self.check_mode(mode)?;
        if self.order() < 2 {
            return dim_err("cannot slice an order-1 tensor");
        }
        if k == 0 || k > self.shape[m] {
            return dim_err(format!(
                "slice index {} out of range 1..={}",
                k, self.shape[m]
            ));
        }
        let before: usize = self.shape[..m].iter().product();
        let after: usize = self.shape[m + 1..].iter().product();
        let extent = self.shape[m];
        let mut data = Vec::with_capacity(before * after);
        for a in 0..after {
            let base = before * ((k - 1) + extent * a);
            data.extend_from_slice(&self.data[base..base + before]);
        }
        let mut shape = self.shape.clone();
        shape.remove(m);
        DenseTensor::new(shape, data)
    }

    /// Mode-n matricization: the mode-n fibers become the columns of an
    /// `I_n x prod_{m != n} I_m` matrix, with column index
    /// `j = 1 + sum_{k != n} (i_k - 1) prod_{m < k, m != n} I_m`.
    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        let m = self.check_mode(mode)?;
        let before: usize = self.shape[..m].iter().product();
        let after: usize = self.shape[m + 1..].iter().product();
        let extent = self.shape[m];
        let mut out = DMatrix::zeros(extent, before * after);
        for a in 0..after {
            for i in 0..extent {
                let src = before * (i + extent * a);
                for b in 0..before {
                    out[(i, b + before * a)] = self.data[src + b];
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(matrix: &DMatrix<f64>, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
        check_shape(shape)?;
        if mode == 0 || mode > shape.len() {
            return dim_err(format!("mode {} out of range 1..={}", mode, shape.len()));
        }
        let m = mode - 1;
        let before: usize = shape[..m].iter().product();
        let after: usize = shape[m + 1..].iter().product();
        let extent = shape[m];
        if matrix.nrows() != extent || matrix.ncols() != before * after {
            return dim_err(format!(
                "cannot fold a {}x{} matrix along mode {} into shape {:?}",
                matrix.nrows(),
                matrix.ncols(),
                mode,
                shape
            ));
        }
        let mut data = vec![0.0; extent * before * after];
        for a in 0..after {
            for i in 0..extent {
                let dst = before * (i + extent * a);
                for b in 0..before {
                    data[dst + b] = matrix[(i, b + before * a)];
                }
            }
        }
        DenseTensor::new(shape.to_vec(), data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Entrywise inner product `<self, other>`.
    pub fn dot(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &DenseTensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// `‖self − other‖ / ‖self‖`, or the absolute error when `self` is zero.
    pub fn relative_error(&self, approx: &DenseTensor) -> Result<f64> {
        let diff = self.sub(approx)?.frobenius_norm();
        let norm = self.frobenius_norm();
        Ok(if norm > 0.0 { diff / norm } else { diff })
    }

    fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return dim_err(format!(
                "shape {:?} vs {:?}",
                self.shape, other.shape
            ));
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return dim_err("tensor order must be at least 1");
    }
    if shape.iter().any(|&e| e == 0) {
        return dim_err(format!("zero extent in shape {:?}", shape));
    }
    Ok(())
}

/// Odometer increment of a 1-based multi-index, first index fastest.
pub(crate) fn advance_one_based(idx: &mut [usize], shape: &[usize]) {
    for (i, &extent) in idx.iter_mut().zip(shape) {
        if *i < extent {
            *i += 1;
            return;
        }
        *i = 1;
    }
}

/// Stacks the columns of `m` top to bottom.
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Rank-1 tensor `v1 ∘ v2 ∘ ... ∘ vN`.
pub fn outer(vectors: &[DVector<f64>]) -> Result<DenseTensor> {
    if vectors.len() < 2 {
        return dim_err("outer product needs at least two vectors");
    }
    if vectors.iter().any(|v| v.is_empty()) {
        return dim_err("outer product of an empty vector");
    }
    let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    let mut data = vec![1.0];
    for v in vectors {
        // first index fastest: the new mode's index is the slowest so far
        let mut next = Vec::with_capacity(data.len() * v.len());
        for &x in v.iter() {
            next.extend(data.iter().map(|d| d * x));
        }
        data = next;
    }
    DenseTensor::new(shape, data)
}

pub fn inner(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return dim_err(format!("inner product of lengths {} and {}", a.len(), b.len()));
    }
    Ok(a.dot(b))
}

/// CP-form tensor `[[λ; A(1), ..., A(N)]] = Σ_r λ_r a_r(1) ∘ ... ∘ a_r(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalTensor {
    pub weights: DVector<f64>,
    pub factors: Vec<DMatrix<f64>>,
}

impl KruskalTensor {
    pub fn new(weights: DVector<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return dim_err("Kruskal tensor needs at least one factor matrix");
        }
        let rank = weights.len();
        if rank == 0 {
            return dim_err("Kruskal rank must be at least 1");
        }
        for (n, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return dim_err(format!(
                    "factor {} has {} columns, expected {}",
                    n + 1,
                    f.ncols(),
                    rank
                ));
            }
            if f.nrows() == 0 {
                return dim_err(format!("factor {} has no rows", n + 1));
            }
        }
        Ok(Self { weights, factors })
    }

    /// Unit weights.
    pub fn from_factors(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let rank = factors.first().map(|f| f.ncols()).unwrap_or(0);
        Self::new(DVector::from_element(rank, 1.0), factors)
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// Rescales every factor column to unit norm, pushing the norms into the
    /// weights. Zero columns are left alone and zero their weight.
    pub fn normalize(&mut self) {
        for r in 0..self.rank() {
            for f in &mut self.factors {
                let norm = f.column(r).norm();
                if norm > 0.0 {
                    f.column_mut(r).unscale_mut(norm);
                    self.weights[r] *= norm;
                } else {
                    self.weights[r] = 0.0;
                }
            }
        }
    }

    /// Gauge fix: flips column signs so each column's largest-magnitude entry
    /// is positive; the last flip of every component is absorbed into `λ`.
    pub fn fix_signs(&mut self) {
        for r in 0..self.rank() {
            for f in &mut self.factors {
                if largest_magnitude_entry(f.column(r).iter()) < 0.0 {
                    f.column_mut(r).neg_mut();
                    self.weights[r] = -self.weights[r];
                }
            }
        }
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        kruskal_to_dense(self)
    }
}

pub(crate) fn largest_magnitude_entry<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    values.fold(0.0f64, |best, &v| if v.abs() > best.abs() { v } else { best })
}

/// Materializes `Σ_r λ_r a_r(1) ∘ ... ∘ a_r(N)`.
pub fn kruskal_to_dense(k: &KruskalTensor) -> Result<DenseTensor> {
    let shape = k.shape();
    let mut out = DenseTensor::zeros(shape)?;
    for r in 0..k.rank() {
        let lambda = k.weights[r];
        if lambda == 0.0 {
            continue;
        }
        // build the rank-1 term in place, mode 1 fastest
        let mut term = vec![lambda];
        for f in &k.factors {
            let col = f.column(r);
            let mut next = Vec::with_capacity(term.len() * col.len());
            for &x in col.iter() {
                next.extend(term.iter().map(|t| t * x));
            }
            term = next;
        }
        for (o, t) in out.data.iter_mut().zip(term) {
            *o += t;
        }
    }
    Ok(out)
}

impl TryFrom<&DMatrix<f64>> for DenseTensor {
    type Error = Error;

    fn try_from(m: &DMatrix<f64>) -> Result<Self> {
        DenseTensor::new(vec![m.nrows(), m.ncols()], m.as_slice().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn worked_example() -> DenseTensor {
        DenseTensor::new(vec![3, 4, 2], (1..=24).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn element_lookup() {
        let t = worked_example();
        assert_eq!(t.element(&[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(t.element(&[3, 4, 2]).unwrap(), 24.0);
        assert_eq!(t.element(&[2, 3, 1]).unwrap(), 8.0);
        assert!(matches!(t.element(&[4, 1, 1]), Err(Error::Dimension(_))));
        assert!(matches!(t.element(&[0, 1, 1]), Err(Error::Dimension(_))));
        assert!(t.element(&[1, 1]).is_err());

        let z = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert_eq!(z.element(&[1, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseTensor::new(vec![], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn fibers() {
        let t = worked_example();
        let tube = t.fiber(3, &[1, 1]).unwrap();
        assert_eq!(tube.as_slice(), &[1.0, 13.0]);
        let row = t.fiber(2, &[2, 1]).unwrap();
        assert_eq!(row.as_slice(), &[2.0, 5.0, 8.0, 11.0]);
        assert!(t.fiber(4, &[1, 1]).is_err());
        assert!(t.fiber(1, &[5, 1]).is_err());

        let m = dmatrix![1.0, 3.0; 2.0, 4.0];
        let mt = DenseTensor::try_from(&m).unwrap();
        assert_eq!(mt.fiber(1, &[2]).unwrap(), m.column(1).into_owned());
    }

    #[test]
    fn frontal_slices() {
        let t = worked_example();
        let x2 = t.slice(3, 2).unwrap();
        assert_eq!(x2.shape(), &[3, 4]);
        assert_eq!(x2.data(), (13..=24).map(f64::from).collect::<Vec<_>>());
        let lateral = t.slice(2, 1).unwrap();
        assert_eq!(lateral.data(), &[1.0, 2.0, 3.0, 13.0, 14.0, 15.0]);
        let horizontal = t.slice(1, 3).unwrap();
        assert_eq!(
            horizontal.data(),
            &[3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0, 24.0]
        );
        assert!(t.slice(3, 3).is_err());
        assert!(t.slice(3, 0).is_err());

        let v = DenseTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(v.slice(1, 1).is_err());
    }

    #[test]
    fn vectorize_stacks_columns() {
        assert_eq!(
            vectorize(&dmatrix![1.0, 3.0; 2.0, 4.0]).as_slice(),
            &[1.0, 2.0, 3.0, 4.0]
        );
        let col = DMatrix::from_column_slice(3, 1, &[5.0, 6.0, 7.0]);
        assert_eq!(vectorize(&col).as_slice(), &[5.0, 6.0, 7.0]);
        let x1 = worked_example().unfold(1).unwrap().columns(0, 4).into_owned();
        assert_eq!(
            vectorize(&x1).as_slice(),
            (1..=12).map(f64::from).collect::<Vec<_>>()
        );
    }

    #[test]
    fn fold_of_row_matrix() {
        let m = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let t = DenseTensor::fold(&m, 1, &[1, 4]).unwrap();
        assert_eq!(t.unfold(1).unwrap(), m);
        assert!(DenseTensor::fold(&m, 1, &[2, 2]).is_err());
        assert!(DenseTensor::fold(&m, 3, &[1, 4]).is_err());
    }

    #[test]
    fn outer_and_inner() {
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let t = outer(&[a.clone(), b]).unwrap();
        assert_eq!(t.unfold(1).unwrap(), dmatrix![1.0, 1.0; 2.0, 2.0]);
        let z = outer(&[a.clone(), DVector::zeros(3)]).unwrap();
        assert_eq!(z.frobenius_norm(), 0.0);
        assert!(outer(&[a.clone()]).is_err());

        let ones = DVector::from_element(3, 1.0);
        assert_eq!(inner(&DVector::from_vec(vec![1.0, 2.0, 3.0]), &ones).unwrap(), 6.0);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert_eq!(inner(&e1, &e2).unwrap(), 0.0);
        assert!(inner(&e1, &a).is_err());
    }

    #[test]
    fn kruskal_construction() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, -1.0]);
        let c = DMatrix::from_column_slice(2, 1, &[3.0, 1.0]);
        let k = KruskalTensor::from_factors(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let expected = outer(&[
            a.column(0).into_owned(),
            b.column(0).into_owned(),
            c.column(0).into_owned(),
        ])
        .unwrap();
        assert_eq!(k.to_dense().unwrap(), expected);

        let zero = KruskalTensor::new(DVector::zeros(1), vec![a.clone(), b, c]).unwrap();
        assert_eq!(zero.to_dense().unwrap().frobenius_norm(), 0.0);

        let bad = KruskalTensor::from_factors(vec![a, DMatrix::zeros(2, 2)]);
        assert!(matches!(bad, Err(Error::Dimension(_))));
    }

    #[test]
    fn worked_example_norm_is_seventy() {
        let t = worked_example();
        assert_eq!(t.frobenius_norm(), 70.0);
        assert_eq!(DenseTensor::zeros(vec![3, 3]).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn normalize_keeps_the_tensor() {
        let a = dmatrix![1.0, 2.0; -3.0, 0.5];
        let b = dmatrix![2.0, -1.0; 0.0, 4.0; 1.0, 1.0];
        let mut k = KruskalTensor::from_factors(vec![a, b]).unwrap();
        let before = k.to_dense().unwrap();
        k.normalize();
        k.fix_signs();
        let after = k.to_dense().unwrap();
        assert!(before.relative_error(&after).unwrap() < 1e-14);
        for f in &k.factors {
            for c in f.column_iter() {
                assert!((c.norm() - 1.0).abs() < 1e-14);
                assert!(largest_magnitude_entry(c.iter()) > 0.0);
            }
        }
    }
}
