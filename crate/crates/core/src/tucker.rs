//! Tucker decomposition: n-ranks, truncated HOSVD and HOOI.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{default_rank_tol, leading_left_singular_vectors, numerical_rank};
use crate::products::mode_n_matrix_product;
use crate::tensor::DenseTensor;

/// `[[G; A(1), ..., A(N)]] = G ×_1 A(1) ×_2 ... ×_N A(N)` with orthonormal
/// factor columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerTensor {
    pub core: DenseTensor,
    pub factors: Vec<DMatrix<f64>>,
}

impl TuckerTensor {
    pub fn new(core: DenseTensor, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if core.order() != factors.len() {
            return Err(Error::Dimension(format!(
                "order-{} core with {} factors",
                core.order(),
                factors.len()
            )));
        }
        for (n, (f, &r)) in factors.iter().zip(core.shape()).enumerate() {
            if f.ncols() != r {
                return Err(Error::Dimension(format!(
                    "factor {} has {} columns, core extent is {}",
                    n + 1,
                    f.ncols(),
                    r
                )));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.shape()
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        tucker_to_dense(self)
    }
}

pub fn tucker_to_dense(m: &TuckerTensor) -> Result<DenseTensor> {
    let mut out = m.core.clone();
    for (n, f) in m.factors.iter().enumerate() {
        out = mode_n_matrix_product(&out, f, n + 1)?;
    }
    Ok(out)
}

/// Numerical rank of the mode-`mode` unfolding: singular values above
/// `rel_tol * σ_max` are counted.
pub fn n_rank(t: &DenseTensor, mode: usize, rel_tol: f64) -> Result<usize> {
    Ok(numerical_rank(&t.unfold(mode)?, rel_tol))
}

/// [`n_rank`] with the default cutoff `max(dims) * eps`.
pub fn n_rank_default(t: &DenseTensor, mode: usize) -> Result<usize> {
    let unfolded = t.unfold(mode)?;
    Ok(numerical_rank(&unfolded, default_rank_tol(&unfolded)))
}

fn check_ranks(t: &DenseTensor, ranks: &[usize]) -> Result<()> {
    if ranks.len() != t.order() {
        return Err(Error::Config(format!(
            "{} ranks given for an order-{} tensor",
            ranks.len(),
            t.order()
        )));
    }
    for (n, (&r, &extent)) in ranks.iter().zip(t.shape()).enumerate() {
        if r == 0 || r > extent {
            return Err(Error::Config(format!(
                "mode-{} rank {} outside 1..={}",
                n + 1,
                r,
                extent
            )));
        }
    }
    if !t.is_finite() {
        return Err(Error::Data("input tensor has non-finite entries".into()));
    }
    Ok(())
}

/// Projects `t` onto the factor subspaces: `X ×_1 A(1)^T ... ×_N A(N)^T`,
/// skipping mode `skip` (0-based) when given.
fn project(t: &DenseTensor, factors: &[DMatrix<f64>], skip: Option<usize>) -> Result<DenseTensor> {
    let mut out = t.clone();
    for (n, f) in factors.iter().enumerate() {
        if Some(n) != skip {
            out = mode_n_matrix_product(&out, &f.transpose(), n + 1)?;
        }
    }
    Ok(out)
}

/// Truncated higher-order SVD: each factor holds the `R_n` leading left
/// singular vectors of the mode-n unfolding, and the core is the projection
/// of `t` onto them.
pub fn hosvd(t: &DenseTensor, ranks: &[usize]) -> Result<TuckerTensor> {
    check_ranks(t, ranks)?;
    let factors = ranks
        .iter()
        .enumerate()
        .map(|(n, &r)| Ok(leading_left_singular_vectors(&t.unfold(n + 1)?, r)))
        .collect::<Result<Vec<_>>>()?;
    let core = project(t, &factors, None)?;
    TuckerTensor::new(core, factors)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HooiConfig {
    pub max_iters: usize,
    /// Stop when the relative error changes by less than `tol` (relative).
    pub tol: f64,
}

impl Default for HooiConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HooiResult {
    pub model: TuckerTensor,
    /// Relative reconstruction error; entry 0 is the HOSVD starting point,
    /// then one entry per sweep.
    pub error_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Higher-order orthogonal iteration started from the truncated HOSVD.
pub fn hooi(t: &DenseTensor, ranks: &[usize], cfg: &HooiConfig) -> Result<HooiResult> {
    if cfg.max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::Config(format!("tol must be positive, got {}", cfg.tol)));
    }
    let start = hosvd(t, ranks)?;
    let mut best_err = t.relative_error(&start.to_dense()?)?;
    let mut best = start.clone();
    let mut factors = start.factors;
    let mut error_history = vec![best_err];
    let mut converged = best_err == 0.0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        for n in 0..t.order() {
            let y = project(t, &factors, Some(n))?;
            factors[n] = leading_left_singular_vectors(&y.unfold(n + 1)?, ranks[n]);
        }
        let core = project(t, &factors, None)?;
        let model = TuckerTensor::new(core, factors.clone())?;
        let err = t.relative_error(&model.to_dense()?)?;
        let prev = *error_history.last().expect("history starts non-empty");
        error_history.push(err);
        if err <= best_err {
            best_err = err;
            best = model;
        }
        if err == 0.0 || (prev - err).abs() < cfg.tol * prev {
            converged = true;
        }
    }
    Ok(HooiResult {
        model: best,
        error_history,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_defect;
    use crate::random;
    use crate::tensor::outer;
    use nalgebra::DVector;

    fn random_tensor(shape: Vec<usize>, seed: u64) -> DenseTensor {
        let mut rng = random::rng(seed);
        let len = shape.iter().product();
        DenseTensor::new(shape, random::normal_vector(len, &mut rng).as_slice().to_vec()).unwrap()
    }

    #[test]
    fn n_ranks() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let t = outer(&[a.clone(), b.clone(), a]).unwrap();
        for mode in 1..=3 {
            assert_eq!(n_rank_default(&t, mode).unwrap(), 1);
        }
        let z = DenseTensor::zeros(vec![2, 3, 2]).unwrap();
        assert_eq!(n_rank_default(&z, 2).unwrap(), 0);
        let example = DenseTensor::new(vec![3, 4, 2], (1..=24).map(f64::from).collect()).unwrap();
        assert!(n_rank_default(&example, 1).unwrap() <= 3);
        // the entries are affine in the index, so every unfolding has rank 2
        assert_eq!(n_rank_default(&example, 1).unwrap(), 2);
    }

    #[test]
    fn rank_validation() {
        let t = random_tensor(vec![3, 4, 2], 1);
        assert!(matches!(hosvd(&t, &[3, 4]), Err(Error::Config(_))));
        assert!(matches!(hosvd(&t, &[3, 5, 2]), Err(Error::Config(_))));
        assert!(matches!(hosvd(&t, &[0, 4, 2]), Err(Error::Config(_))));
    }

    #[test]
    fn full_rank_hosvd_is_exact() {
        let t = random_tensor(vec![3, 4, 2], 2);
        let m = hosvd(&t, &[3, 4, 2]).unwrap();
        assert!(t.relative_error(&m.to_dense().unwrap()).unwrap() <= 1e-10);
        for f in &m.factors {
            assert!(orthonormality_defect(f) <= 1e-10);
        }
    }

    #[test]
    fn rank_one_core_holds_the_scale() {
        let a = DVector::from_vec(vec![3.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let c = DVector::from_vec(vec![0.0, 2.0]);
        let t = outer(&[a, b, c]).unwrap();
        let m = hosvd(&t, &[1, 1, 1]).unwrap();
        assert!(t.relative_error(&m.to_dense().unwrap()).unwrap() < 1e-14);
        assert!((m.core.data()[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_core_gives_zero_tensor() {
        let core = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        let f = DMatrix::identity(3, 2);
        let m = TuckerTensor::new(core, vec![f.clone(), f.clone(), f]).unwrap();
        assert_eq!(m.to_dense().unwrap().frobenius_norm(), 0.0);
        assert!(TuckerTensor::new(
            DenseTensor::zeros(vec![2, 2]).unwrap(),
            vec![DMatrix::identity(3, 3)]
        )
        .is_err());
    }

    #[test]
    fn hooi_full_rank_and_dominance() {
        let t = random_tensor(vec![3, 4, 2], 3);
        let full = hooi(&t, &[3, 4, 2], &HooiConfig::default()).unwrap();
        assert!(full.error_history.last().unwrap() <= &1e-10);

        let t = random_tensor(vec![6, 6, 6], 4);
        let h = hosvd(&t, &[2, 2, 2]).unwrap();
        let h_err = t.relative_error(&h.to_dense().unwrap()).unwrap();
        let res = hooi(&t, &[2, 2, 2], &HooiConfig::default()).unwrap();
        let o_err = t.relative_error(&res.model.to_dense().unwrap()).unwrap();
        assert!(o_err <= h_err + 1e-12);
        for w in res.error_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(hooi(&t, &[2, 2, 2], &HooiConfig { max_iters: 0, tol: 1e-8 }).is_err());
    }
}
