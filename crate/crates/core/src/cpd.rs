//! CP (canonical polyadic) decomposition: alternating least squares,
//! Jennrich's simultaneous-diagonalization algorithm, fit diagnostics and
//! k-rank based uniqueness checks.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, leading_left_singular_vectors, numerical_rank, pinv};
use crate::products::{hadamard, khatri_rao, khatri_rao_chain, mode_n_vector_product};
use crate::random::{self, Rng};
use crate::tensor::{kruskal_to_dense, DenseTensor, KruskalTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpInit {
    /// i.i.d. standard normal entries.
    Random,
    /// Leading left singular vectors of each unfolding.
    HosvdLeadingVectors,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the relative error changes by less than this between sweeps.
    pub tol: f64,
    pub init: CpInit,
    pub seed: u64,
    pub normalize: bool,
}

impl CpConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_iters: 500,
            tol: 1e-8,
            init: CpInit::Random,
            seed: 0,
            normalize: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CpResult {
    pub model: KruskalTensor,
    /// Relative error `‖X − X̂‖ / ‖X‖` after every sweep.
    pub fit_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// CP decomposition of an order-N (N >= 3) tensor by alternating least squares.
pub fn cp_als(t: &DenseTensor, cfg: &CpConfig) -> Result<CpResult> {
    cfg.validate()?;
    if t.order() < 3 {
        return Err(Error::Config(format!(
            "CP-ALS needs an order >= 3 tensor, got order {} (use a matrix SVD)",
            t.order()
        )));
    }
    if !t.is_finite() {
        return Err(Error::Data("input tensor has non-finite entries".into()));
    }
    let total: usize = t.len();
    for (n, &extent) in t.shape().iter().enumerate() {
        let others = total / extent;
        if cfg.rank > others {
            return Err(Error::Config(format!(
                "rank {} exceeds the {} columns of the mode-{} unfolding",
                cfg.rank,
                others,
                n + 1
            )));
        }
    }

    let mut rng = random::rng(cfg.seed);
    let mut factors = initial_factors(t, cfg, &mut rng)?;
    let mut weights = DVector::from_element(cfg.rank, 1.0);
    let mut fit_history = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        weights.fill(1.0);
        for n in 1..=t.order() {
            factors[n - 1] = als_update(t, &factors, n)?;
        }
        let mut model = KruskalTensor::new(weights.clone(), factors)?;
        if cfg.normalize {
            model.normalize();
            model.fix_signs();
        }
        let err = t.relative_error(&kruskal_to_dense(&model)?)?;
        weights = model.weights;
        factors = model.factors;

        let change = fit_history.last().map(|prev: &f64| (prev - err).abs());
        fit_history.push(err);
        if err == 0.0 || change.is_some_and(|c| c < cfg.tol) {
            converged = true;
            break;
        }
    }

    // a component with an all-zero column contributes nothing
    for r in 0..cfg.rank {
        if factors.iter().any(|f| f.column(r).iter().all(|&v| v == 0.0)) {
            weights[r] = 0.0;
        }
    }
    Ok(CpResult {
        model: KruskalTensor::new(weights, factors)?,
        iterations: fit_history.len(),
        fit_history,
        converged,
    })
}

fn initial_factors(t: &DenseTensor, cfg: &CpConfig, rng: &mut Rng) -> Result<Vec<DMatrix<f64>>> {
    let mut factors = Vec::with_capacity(t.order());
    for (n, &extent) in t.shape().iter().enumerate() {
        let f = match cfg.init {
            CpInit::Random => random::normal_matrix(extent, cfg.rank, rng),
            CpInit::HosvdLeadingVectors => {
                let unfolded = t.unfold(n + 1)?;
                let take = cfg.rank.min(extent);
                let lead = leading_left_singular_vectors(&unfolded, take);
                let mut f = DMatrix::zeros(extent, cfg.rank);
                f.columns_mut(0, take).copy_from(&lead);
                if cfg.rank > take {
                    let extra = random::normal_matrix(extent, cfg.rank - take, rng);
                    f.columns_mut(take, cfg.rank - take).copy_from(&extra);
                }
                f
            }
        };
        factors.push(f);
    }
    Ok(factors)
}

/// One ALS step for mode `mode` (1-based): the least-squares minimizer of
/// `‖X(n) − A(n) (⊙_{m≠n} A(m))^T‖`, computed as
/// `X(n) (A(N) ⊙ ... ⊙ A(1) without n) (∗_{m≠n} A(m)^T A(m))^†`.
pub fn als_update(t: &DenseTensor, factors: &[DMatrix<f64>], mode: usize) -> Result<DMatrix<f64>> {
    if factors.len() != t.order() {
        return Err(Error::Dimension(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            t.order()
        )));
    }
    if mode == 0 || mode > t.order() {
        return Err(Error::Dimension(format!("mode {mode} out of range")));
    }
    let rank = factors[0].ncols();
    for (n, (f, &extent)) in factors.iter().zip(t.shape()).enumerate() {
        if f.nrows() != extent || f.ncols() != rank {
            return Err(Error::Dimension(format!(
                "factor {} is {}x{}, expected {}x{}",
                n + 1,
                f.nrows(),
                f.ncols(),
                extent,
                rank
            )));
        }
    }
    let skip = mode - 1;
    let mut gram = DMatrix::from_element(rank, rank, 1.0);
    for (n, f) in factors.iter().enumerate() {
        if n != skip {
            gram = hadamard(&gram, &f.tr_mul(f))?;
        }
    }
    let kr = khatri_rao_chain(factors, skip)?;
    Ok(t.unfold(mode)? * kr * pinv(&gram))
}

/// Relative reconstruction error `‖X − X̂‖ / ‖X‖` (absolute when `X = 0`).
pub fn fit(t: &DenseTensor, model: &KruskalTensor) -> Result<f64> {
    if model.shape() != t.shape() {
        return Err(Error::Dimension(format!(
            "model shape {:?} vs tensor shape {:?}",
            model.shape(),
            t.shape()
        )));
    }
    t.relative_error(&kruskal_to_dense(model)?)
}

/// Minimum relative separation between the slice-ratio eigenvalues.
const EIGEN_GAP: f64 = 1e-8;
/// Tolerated relative imaginary part before eigenvalues count as complex.
const IMAG_TOL: f64 = 1e-8;
/// Eigenvalue pairing tolerance `|d_r e_s − 1|`.
const PAIRING_TOL: f64 = 1e-6;
/// Projected slices with `σ_min / σ_max` below this are treated as singular.
const SLICE_COND: f64 = 1e-12;

/// Jennrich's algorithm for an order-3 tensor with linearly independent
/// factor columns.
///
/// Two random contractions `X(I, I, x)` and `X(I, I, y)` of the third mode are
/// projected onto the rank-`R` column spaces of the first two unfoldings.
/// `A` comes from the eigenvectors of `X_x X_y^†`, `B` from those of
/// `(X_x^† X_y)^T`, paired through their reciprocal eigenvalues, and `C`
/// from least squares on the mode-3 unfolding.
pub fn jennrich(t: &DenseTensor, rank: usize, seed: u64) -> Result<KruskalTensor> {
    if t.order() != 3 {
        return Err(Error::Config(format!(
            "Jennrich's algorithm needs an order-3 tensor, got order {}",
            t.order()
        )));
    }
    if rank == 0 {
        return Err(Error::Config("rank must be at least 1".into()));
    }
    if !t.is_finite() {
        return Err(Error::Data("input tensor has non-finite entries".into()));
    }
    let (i_dim, j_dim, k_dim) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if rank > i_dim || rank > j_dim {
        return Err(Error::Config(format!(
            "rank {} needs linearly independent columns in modes 1 and 2 of extents {} and {}",
            rank, i_dim, j_dim
        )));
    }
    let x1 = t.unfold(1)?;
    let x2 = t.unfold(2)?;
    for (mode, m) in [(1, &x1), (2, &x2)] {
        let r = numerical_rank(m, 1e-10);
        if r < rank {
            return Err(Error::Rank(format!(
                "mode-{mode} unfolding has numerical rank {r} < {rank}"
            )));
        }
    }
    let u = leading_left_singular_vectors(&x1, rank);
    let v = leading_left_singular_vectors(&x2, rank);

    let mut rng = random::rng(seed);
    let x = random::unit_vector(k_dim, &mut rng);
    let y = random::unit_vector(k_dim, &mut rng);
    let project = |w: &DVector<f64>| -> Result<DMatrix<f64>> {
        let slice = mode_n_vector_product(t, w, 3)?;
        let s = DMatrix::from_column_slice(i_dim, j_dim, slice.data());
        Ok(u.tr_mul(&s) * &v)
    };
    let px = project(&x)?;
    let py = project(&y)?;
    for (name, p) in [("x", &px), ("y", &py)] {
        let s = linalg::singular_values(p);
        let smax = s.max();
        if smax == 0.0 || s.min() / smax < SLICE_COND {
            return Err(Error::Rank(format!(
                "random slice X(I,I,{name}) is rank deficient in the rank-{rank} subspace"
            )));
        }
    }
    let px_inv = px.clone().try_inverse().ok_or_else(|| Error::Rank("slice not invertible".into()))?;
    let py_inv = py.clone().try_inverse().ok_or_else(|| Error::Rank("slice not invertible".into()))?;

    // X_x X_y^{-1} = Ã D_x D_y^{-1} Ã^{-1}
    let m_a = &px * &py_inv;
    // (X_x^{-1} X_y)^T = B̃ D_y D_x^{-1} B̃^{-1}
    let m_b = (&px_inv * &py).transpose();
    let (vals_a, vecs_a) = real_eigensystem(&m_a)?;
    let (vals_b, vecs_b) = real_eigensystem(&m_b)?;

    let mut a = DMatrix::zeros(i_dim, rank);
    let mut b = DMatrix::zeros(j_dim, rank);
    let mut used = vec![false; rank];
    for r in 0..rank {
        let (s, miss) = (0..rank)
            .filter(|&s| !used[s])
            .map(|s| (s, (vals_a[r] * vals_b[s] - 1.0).abs()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("unpaired eigenvalue remains");
        if miss > PAIRING_TOL {
            return Err(Error::IllConditioned(format!(
                "cannot pair eigenvalue {} with a reciprocal (closest product misses by {:.3e})",
                vals_a[r], miss
            )));
        }
        used[s] = true;
        let col_a = &u * vecs_a.column(r);
        let col_b = &v * vecs_b.column(s);
        a.set_column(r, &col_a.normalize());
        b.set_column(r, &col_b.normalize());
    }

    let kr = khatri_rao(&b, &a)?;
    let c = t.unfold(3)? * pinv(&kr.transpose());
    let mut model = KruskalTensor::from_factors(vec![a, b, c])?;
    model.normalize();
    model.fix_signs();
    Ok(model)
}

/// Eigenvalues and unit eigenvectors of a square matrix whose spectrum is
/// expected to be real and simple.
fn real_eigensystem(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let schur = Schur::new(m.clone());
    let complex = schur.complex_eigenvalues();
    let scale = complex.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::IllConditioned("all slice eigenvalues vanish".into()));
    }
    if let Some(z) = complex.iter().find(|z| z.im.abs() > IMAG_TOL * scale) {
        return Err(Error::IllConditioned(format!(
            "complex eigenvalue {} + {}i in simultaneous diagonalization",
            z.re, z.im
        )));
    }
    let values: Vec<f64> = complex.iter().map(|z| z.re).collect();
    for (p, q) in (0..n).tuple_combinations() {
        let gap = (values[p] - values[q]).abs() / scale;
        if gap < EIGEN_GAP {
            return Err(Error::IllConditioned(format!(
                "eigen-gap {:.3e} between {} and {} is below {:.0e}",
                gap, values[p], values[q], EIGEN_GAP
            )));
        }
    }
    let mut vectors = DMatrix::zeros(n, n);
    for (r, &lambda) in values.iter().enumerate() {
        let shifted = m - DMatrix::identity(n, n) * lambda;
        vectors.set_column(r, &linalg::null_vector(&shifted));
    }
    Ok((values, vectors))
}

/// Kruskal rank: the largest `k` such that every set of `k` columns has full
/// numerical rank (`σ > tol σ_max` on each subset).
///
/// Enumerates column subsets, so the cost is exponential in the column count.
pub fn k_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let max_k = m.nrows().min(m.ncols());
    for k in 1..=max_k {
        let all_independent = (0..m.ncols()).combinations(k).all(|cols| {
            let sub = m.select_columns(cols.iter());
            numerical_rank(&sub, tol) == k
        });
        if !all_independent {
            return k - 1;
        }
    }
    max_k
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub k_ranks: Vec<usize>,
    pub k_rank_sum: usize,
    /// `2R + (N − 1)`
    pub bound: usize,
    /// `Σ_n k_{A(n)} >= 2R + (N − 1)`.
    pub sufficient: bool,
    /// `min_n rank(⊙_{m≠n} A(m))`; must equal `R` for uniqueness.
    pub min_khatri_rao_rank: usize,
    /// `min_n Π_{m≠n} rank(A(m))`; must be at least `R` for uniqueness.
    pub min_rank_product: usize,
    pub necessary: bool,
}

/// Evaluates the k-rank sufficient condition and the two necessary
/// conditions for essential uniqueness of a CP model.
pub fn uniqueness_report(model: &KruskalTensor, tol: f64) -> Result<UniquenessReport> {
    let r = model.rank();
    let n = model.order();
    let k_ranks: Vec<usize> = model.factors.iter().map(|f| k_rank(f, tol)).collect();
    let k_rank_sum = k_ranks.iter().sum();
    let bound = 2 * r + (n - 1);
    let ranks: Vec<usize> = model.factors.iter().map(|f| numerical_rank(f, tol)).collect();
    let mut min_khatri_rao_rank = usize::MAX;
    let mut min_rank_product = usize::MAX;
    if n >= 2 {
        for skip in 0..n {
            let kr = khatri_rao_chain(&model.factors, skip)?;
            min_khatri_rao_rank = min_khatri_rao_rank.min(numerical_rank(&kr, tol));
            let prod = ranks
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != skip)
                .map(|(_, r)| *r)
                .product();
            min_rank_product = min_rank_product.min(prod);
        }
    } else {
        min_khatri_rao_rank = 0;
        min_rank_product = 0;
    }
    Ok(UniquenessReport {
        k_ranks,
        k_rank_sum,
        bound,
        sufficient: k_rank_sum >= bound,
        min_khatri_rao_rank,
        min_rank_product,
        necessary: min_khatri_rao_rank == r && min_rank_product >= r,
    })
}

/// Literal verdict of the k-rank sufficiency bound. Note that it rejects
/// every rank-1 model of order 3 even though those are trivially unique.
pub fn check_sufficient_uniqueness(model: &KruskalTensor, tol: f64) -> Result<bool> {
    Ok(uniqueness_report(model, tol)?.sufficient)
}
