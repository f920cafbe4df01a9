//! Small dense linear-algebra helpers on top of nalgebra's factorizations.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::tensor::largest_magnitude_entry;

/// Default relative cutoff `max(rows, cols) * eps` applied to `σ_max`.
pub fn default_rank_tol(m: &DMatrix<f64>) -> f64 {
    m.nrows().max(m.ncols()) as f64 * f64::EPSILON
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    SVD::new(m.clone(), false, false).singular_values
}

/// Number of singular values above `rel_tol * σ_max` (and above zero).
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * smax).count()
}

/// Moore-Penrose pseudo-inverse with cutoff `max(dim) * eps * σ_max`.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = default_rank_tol(m) * smax;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (v_t.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        if largest_magnitude_entry(col.iter()) < 0.0 {
            col.neg_mut();
        }
    }
}

/// The `r` leading left singular vectors of `m` as an orthonormal
/// `rows x r` matrix with the largest-magnitude-positive sign gauge.
///
/// When `r` exceeds the number of singular vectors the SVD produces (wide
/// inputs have at most `cols` of them), the basis is completed with
/// Gram-Schmidt against the standard basis.
pub fn leading_left_singular_vectors(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let rows = m.nrows();
    assert!(r <= rows, "cannot take {r} singular vectors of a {rows}-row matrix");
    let mut out = DMatrix::zeros(rows, r);
    let mut filled = 0;
    if m.ncols() > 0 {
        let svd = SVD::new(m.clone(), true, false);
        let u = svd.u.expect("u requested");
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if filled == r {
                break;
            }
            // null-space directions are arbitrary; rebuild them deterministically
            if s <= default_rank_tol(m) * smax || s == 0.0 {
                break;
            }
            out.set_column(filled, &u.column(i));
            filled += 1;
        }
    }
    complete_basis(&mut out, filled);
    fix_column_signs(&mut out);
    out
}

/// Fills columns `filled..` of `q` with unit vectors orthogonal to the
/// previous columns, drawn from the standard basis in order.
fn complete_basis(q: &mut DMatrix<f64>, mut filled: usize) {
    let rows = q.nrows();
    let mut candidate = 0;
    while filled < q.ncols() && candidate < rows {
        let mut v = DVector::zeros(rows);
        v[candidate] = 1.0;
        // two passes of classical Gram-Schmidt
        for _ in 0..2 {
            for j in 0..filled {
                let proj = q.column(j).dot(&v);
                v -= q.column(j) * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            q.set_column(filled, &(v / norm));
            filled += 1;
        }
        candidate += 1;
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// and eigenvectors sign-fixed.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    (values, vectors)
}

/// Unit vector spanning the (numerical) null space of a square matrix: the
/// right singular vector of its smallest singular value.
pub fn null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = SVD::new(m.clone(), false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
    v_t.row(idx).transpose()
}

/// Largest entrywise deviation of `q^T q` from the identity.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let gram = q.tr_mul(q);
    (gram - DMatrix::identity(q.ncols(), q.ncols())).amax()
}
