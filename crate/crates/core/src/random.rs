//! Seeded random draws. Every randomized routine in the crate takes a `u64`
//! seed and expands it with ChaCha8, which is portable across platforms.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    // column-major fill keeps draws stable if the layout of callers changes
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)))
}

pub fn normal_vector(len: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
}

/// Uniform draw from the unit sphere in `R^len`.
pub fn unit_vector(len: usize, rng: &mut Rng) -> DVector<f64> {
    loop {
        let v = normal_vector(len, rng);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// `rows x cols` matrix with orthonormal columns (QR of a Gaussian draw).
pub fn orthonormal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    assert!(cols <= rows, "need cols <= rows for orthonormal columns");
    let g = normal_matrix(rows, cols, rng);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    // make the factorization unique: positive diagonal of R
    let mut out = q.columns(0, cols).into_owned();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    out
}
