//! Kronecker, Khatri-Rao and Hadamard products, n-mode products and the
//! multilinear transformation `X(M_1, ..., M_N)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Result};
use crate::tensor::{DenseTensor, KruskalTensor};

/// `A ⊗ B`: block `(i, j)` is `a_ij B`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, l) = b.shape();
    DMatrix::from_fn(a.nrows() * k, a.ncols() * l, |row, col| {
        a[(row / k, col / l)] * b[(row % k, col % l)]
    })
}

/// Column-wise Kronecker product `A ⊙ B`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return dim_err(format!(
            "Khatri-Rao product of {} and {} columns",
            a.ncols(),
            b.ncols()
        ));
    }
    let j = b.nrows();
    Ok(DMatrix::from_fn(a.nrows() * j, a.ncols(), |row, col| {
        a[(row / j, col)] * b[(row % j, col)]
    }))
}

/// `A(N) ⊙ ... ⊙ A(1)` over the given matrices, skipping index `skip`
/// (0-based). The lowest-index factor varies fastest in the row index,
/// matching the mode-n unfolding column order.
pub fn khatri_rao_chain(factors: &[DMatrix<f64>], skip: usize) -> Result<DMatrix<f64>> {
    let mut iter = factors
        .iter()
        .enumerate()
        .rev()
        .filter(|(i, _)| *i != skip)
        .map(|(_, f)| f);
    let first = match iter.next() {
        Some(f) => f.clone(),
        None => return dim_err("Khatri-Rao chain over no factors"),
    };
    iter.try_fold(first, |acc, f| khatri_rao(&acc, f))
}

/// Entrywise product `A ∗ B`.
pub fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return dim_err(format!(
            "Hadamard product of {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(a.component_mul(b))
}

/// `X ×_n M` for `M` of shape `J x I_n`; satisfies `Y(n) = M X(n)`.
pub fn mode_n_matrix_product(
    t: &DenseTensor,
    m: &DMatrix<f64>,
    mode: usize,
) -> Result<DenseTensor> {
    let unfolded = t.unfold(mode)?;
    if m.ncols() != unfolded.nrows() {
        return dim_err(format!(
            "mode-{} product needs a matrix with {} columns, got {}x{}",
            mode,
            unfolded.nrows(),
            m.nrows(),
            m.ncols()
        ));
    }
    let mut shape = t.shape().to_vec();
    shape[mode - 1] = m.nrows();
    DenseTensor::fold(&(m * unfolded), mode, &shape)
}

/// `X ×_n v`: contracts mode `n` against `v`, dropping that mode.
pub fn mode_n_vector_product(
    t: &DenseTensor,
    v: &DVector<f64>,
    mode: usize,
) -> Result<DenseTensor> {
    if t.order() < 2 {
        return dim_err("vector mode product needs an order >= 2 tensor");
    }
    let unfolded = t.unfold(mode)?;
    if v.len() != unfolded.nrows() {
        return dim_err(format!(
            "mode-{} product needs a vector of length {}, got {}",
            mode,
            unfolded.nrows(),
            v.len()
        ));
    }
    let contracted = unfolded.tr_mul(v);
    let mut shape = t.shape().to_vec();
    shape.remove(mode - 1);
    DenseTensor::new(shape, contracted.as_slice().to_vec())
}

/// One argument of a multilinear transformation.
#[derive(Debug, Clone, Copy)]
pub enum ModeMap<'a> {
    /// Leave the mode untouched.
    Identity,
    /// `I_n x J` matrix, applied as `M^T a` to that mode.
    Matrix(&'a DMatrix<f64>),
    /// Contract the mode away against the vector.
    Vector(&'a DVector<f64>),
}

/// `X(M_1, ..., M_N)` on a dense tensor.
///
/// Matrix maps act as mode products with `M^T`; vector maps contract their
/// mode. When every mode is contracted the scalar comes back as a shape-`[1]`
/// tensor.
pub fn multilinear_transform(t: &DenseTensor, maps: &[ModeMap<'_>]) -> Result<DenseTensor> {
    if maps.len() != t.order() {
        return dim_err(format!(
            "{} maps for an order-{} tensor",
            maps.len(),
            t.order()
        ));
    }
    let mut out = t.clone();
    for (n, map) in maps.iter().enumerate() {
        if let ModeMap::Matrix(m) = map {
            out = mode_n_matrix_product(&out, &m.transpose(), n + 1)?;
        }
    }
    // contract from the last mode so earlier mode numbers stay valid
    for (n, map) in maps.iter().enumerate().rev() {
        if let ModeMap::Vector(v) = map {
            if out.order() == 1 {
                if v.len() != out.len() {
                    return dim_err(format!(
                        "mode-{} contraction needs length {}, got {}",
                        n + 1,
                        out.len(),
                        v.len()
                    ));
                }
                let s: f64 = out.data().iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                out = DenseTensor::new(vec![1], vec![s])?;
            } else {
                out = mode_n_vector_product(&out, v, n + 1)?;
            }
        }
    }
    Ok(out)
}

/// `X(M_1, ..., M_N)` on a Kruskal tensor, computed factor-wise as
/// `Σ_r λ_r (M_1^T a_r) ∘ ... ∘ (M_N^T z_r)`.
pub fn multilinear_transform_kruskal(
    k: &KruskalTensor,
    maps: &[ModeMap<'_>],
) -> Result<DenseTensor> {
    if maps.len() != k.order() {
        return dim_err(format!(
            "{} maps for an order-{} Kruskal tensor",
            maps.len(),
            k.order()
        ));
    }
    let mut weights = k.weights.clone();
    let mut factors = Vec::new();
    for (n, (map, f)) in maps.iter().zip(&k.factors).enumerate() {
        match map {
            ModeMap::Identity => factors.push(f.clone()),
            ModeMap::Matrix(m) => {
                if m.nrows() != f.nrows() {
                    return dim_err(format!(
                        "mode-{} map has {} rows, mode extent is {}",
                        n + 1,
                        m.nrows(),
                        f.nrows()
                    ));
                }
                factors.push(m.tr_mul(f));
            }
            ModeMap::Vector(v) => {
                if v.len() != f.nrows() {
                    return dim_err(format!(
                        "mode-{} vector has length {}, mode extent is {}",
                        n + 1,
                        v.len(),
                        f.nrows()
                    ));
                }
                let scales = f.tr_mul(*v);
                weights.component_mul_assign(&scales);
            }
        }
    }
    if factors.is_empty() {
        return DenseTensor::new(vec![1], vec![weights.sum()]);
    }
    if factors.len() == 1 {
        let v = &factors[0] * &weights;
        return DenseTensor::new(vec![v.len()], v.as_slice().to_vec());
    }
    KruskalTensor::new(weights, factors)?.to_dense()
}
