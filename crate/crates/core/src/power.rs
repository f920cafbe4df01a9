//! Symmetric tensor power iteration with deflation, and the matrix power
//! method it generalizes.
//!
//! The iteration `v ← T(I, v, v) / ‖T(I, v, v)‖` only needs the contraction
//! `T(I, v, v)`, so it is written against [`SymmetricContraction`]. A dense
//! symmetric tensor implements it directly; the moment estimators implement
//! it straight from samples without ever forming the tensor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::fix_column_signs;
use crate::random::{self, Rng};
use crate::tensor::{outer, DenseTensor};

/// Contractions smaller than this count as zero and trigger a restart.
pub const ZERO_CONTRACTION: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerConfig {
    pub n_pairs: usize,
    pub max_iters: usize,
    /// Convergence threshold on `min(‖v' − v‖, ‖v' + v‖)`.
    pub tol: f64,
    /// Random initializations per pair; the converged run with the largest
    /// eigenvalue wins.
    pub restarts: usize,
    pub seed: u64,
}

impl PowerConfig {
    pub fn new(n_pairs: usize) -> Self {
        Self {
            n_pairs,
            max_iters: 100,
            tol: 1e-10,
            restarts: 5,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::Config(
                "n_pairs, max_iters and restarts must all be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Something that can evaluate `T(I, v, v)` for a symmetric order-3 `T`.
pub trait SymmetricContraction {
    fn dim(&self) -> usize;
    fn contract(&self, v: &DVector<f64>) -> DVector<f64>;
}

impl SymmetricContraction for DenseTensor {
    fn dim(&self) -> usize {
        self.shape()[0]
    }

    fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        let d = self.dim();
        let data = self.data();
        let mut out = DVector::zeros(d);
        for k in 0..d {
            for j in 0..d {
                let w = v[j] * v[k];
                if w == 0.0 {
                    continue;
                }
                let base = d * (j + d * k);
                for i in 0..d {
                    out[i] += data[base + i] * w;
                }
            }
        }
        out
    }
}

/// Per-pair bookkeeping from [`extract_eigenpairs_partial`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairDiagnostics {
    /// Iterations used by the winning restart.
    pub iterations: usize,
    pub restarts_converged: usize,
    /// `‖T_r(I, v, v) − λ v‖` on the tensor the pair was extracted from.
    pub residual: f64,
}

#[derive(Debug)]
pub struct Extraction {
    pub pairs: Vec<EigenPair>,
    pub diagnostics: Vec<PairDiagnostics>,
    /// Set when extraction stopped early; `pairs` holds what was found.
    pub failure: Option<Error>,
}

fn check_cubic(t: &DenseTensor) -> Result<usize> {
    let s = t.shape();
    if s.len() != 3 || s[0] != s[1] || s[1] != s[2] {
        return Err(Error::Dimension(format!(
            "expected a d x d x d tensor, got shape {:?}",
            s
        )));
    }
    Ok(s[0])
}

/// Largest deviation from permutation symmetry, `max |t_ijk − t_σ(ijk)|`.
pub fn symmetry_defect(t: &DenseTensor) -> Result<f64> {
    let d = check_cubic(t)?;
    let data = t.data();
    let at = |i: usize, j: usize, k: usize| data[i + d * (j + d * k)];
    let mut worst = 0.0f64;
    for k in 0..d {
        for j in 0..d {
            for i in 0..d {
                let x = at(i, j, k);
                // two transpositions generate all six permutations
                worst = worst.max((x - at(j, i, k)).abs()).max((x - at(i, k, j)).abs());
            }
        }
    }
    Ok(worst)
}

/// One power step: `(T(I, v, v) / ‖T(I, v, v)‖, ‖T(I, v, v)‖)`, or `None`
/// when the contraction vanishes and the caller should restart.
pub fn tensor_power_step(t: &DenseTensor, v: &DVector<f64>) -> Result<Option<(DVector<f64>, f64)>> {
    let d = check_cubic(t)?;
    if v.len() != d {
        return Err(Error::Dimension(format!(
            "vector of length {} for a {}-dimensional tensor",
            v.len(),
            d
        )));
    }
    if (v.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::Data(format!("power step needs a unit vector, norm is {}", v.norm())));
    }
    let u = t.contract(v);
    let norm = u.norm();
    if norm < ZERO_CONTRACTION {
        return Ok(None);
    }
    Ok(Some((u / norm, norm)))
}

/// `T(I, v, v) − Σ_l λ_l <v_l, v>^2 v_l`: the contraction of the tensor
/// deflated by the pairs found so far.
fn deflated_contraction<C: SymmetricContraction + ?Sized>(
    op: &C,
    found: &[EigenPair],
    v: &DVector<f64>,
) -> DVector<f64> {
    let mut u = op.contract(v);
    for p in found {
        let c = p.vector.dot(v);
        u.axpy(-p.value * c * c, &p.vector, 1.0);
    }
    u
}

/// Power iteration with restarts for the next eigenpair of `op` deflated by
/// `found`.
pub fn power_iterate<C: SymmetricContraction + ?Sized>(
    op: &C,
    found: &[EigenPair],
    cfg: &PowerConfig,
    rng: &mut Rng,
) -> Result<(EigenPair, PairDiagnostics)> {
    let d = op.dim();
    let mut best: Option<(EigenPair, usize)> = None;
    let mut restarts_converged = 0;
    for _ in 0..cfg.restarts {
        let mut v = random::unit_vector(d, rng);
        let mut outcome = None;
        for iter in 1..=cfg.max_iters {
            let u = deflated_contraction(op, found, &v);
            let norm = u.norm();
            if !(norm >= ZERO_CONTRACTION) {
                break;
            }
            let next = u / norm;
            let moved = (&next - &v).norm().min((&next + &v).norm());
            v = next;
            if moved < cfg.tol {
                outcome = Some(iter);
                break;
            }
        }
        let Some(iterations) = outcome else { continue };
        restarts_converged += 1;
        let value = deflated_contraction(op, found, &v).norm();
        if best.as_ref().is_none_or(|(b, _)| value > b.value) {
            best = Some((EigenPair { value, vector: v }, iterations));
        }
    }
    match best {
        Some((pair, iterations)) => {
            let residual = (deflated_contraction(op, found, &pair.vector)
                - &pair.vector * pair.value)
                .norm();
            Ok((
                pair,
                PairDiagnostics {
                    iterations,
                    restarts_converged,
                    residual,
                },
            ))
        }
        None => Err(Error::Convergence(format!(
            "power iteration for pair {} failed on all {} restarts ({} iterations each)",
            found.len() + 1,
            cfg.restarts,
            cfg.max_iters
        ))),
    }
}

/// Extracts `cfg.n_pairs` eigenpairs of a symmetric order-3 tensor, deflating
/// `T ← T − λ v∘v∘v` after each one. Stops at the first pair that fails to
/// converge and reports what it has.
pub fn extract_eigenpairs_partial(t: &DenseTensor, cfg: &PowerConfig) -> Result<Extraction> {
    cfg.validate()?;
    check_cubic(t)?;
    let defect = symmetry_defect(t)?;
    if defect > 1e-10 * t.frobenius_norm() {
        return Err(Error::Data(format!(
            "tensor is not symmetric (max permutation defect {:.3e})",
            defect
        )));
    }
    let mut rng = random::rng(cfg.seed);
    let mut current = t.clone();
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    let mut diagnostics = Vec::with_capacity(cfg.n_pairs);
    for _ in 0..cfg.n_pairs {
        match power_iterate(&current, &[], cfg, &mut rng) {
            Ok((pair, diag)) => {
                let v = &pair.vector;
                let rank1 = outer(&[v.clone(), v.clone(), v.clone()])?;
                current.axpy(-pair.value, &rank1)?;
                pairs.push(pair);
                diagnostics.push(diag);
            }
            Err(e) => {
                return Ok(Extraction {
                    pairs,
                    diagnostics,
                    failure: Some(e),
                })
            }
        }
    }
    Ok(Extraction {
        pairs,
        diagnostics,
        failure: None,
    })
}

pub fn extract_eigenpairs(t: &DenseTensor, cfg: &PowerConfig) -> Result<Vec<EigenPair>> {
    let ex = extract_eigenpairs_partial(t, cfg)?;
    match ex.failure {
        Some(e) => Err(e),
        None => Ok(ex.pairs),
    }
}

/// Dominant (largest magnitude) eigenpair of a symmetric matrix by
/// `v ← M v / ‖M v‖`, from one random start. The eigenvalue is `‖M v‖` with
/// the sign of the Rayleigh quotient.
pub fn matrix_power_method(m: &DMatrix<f64>, max_iters: usize, tol: f64, seed: u64) -> Result<EigenPair> {
    let d = m.nrows();
    if m.ncols() != d || d == 0 {
        return Err(Error::Dimension(format!("expected a square matrix, got {:?}", m.shape())));
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::Data("matrix is not symmetric".into()));
    }
    if max_iters == 0 || !(tol > 0.0) {
        return Err(Error::Config("max_iters >= 1 and tol > 0 required".into()));
    }
    let mut rng = random::rng(seed);
    let mut v = random::unit_vector(d, &mut rng);
    for _ in 0..max_iters {
        let u = m * &v;
        let norm = u.norm();
        if norm < ZERO_CONTRACTION {
            return Ok(EigenPair { value: 0.0, vector: v });
        }
        let next = u / norm;
        let moved = (&next - &v).norm().min((&next + &v).norm());
        v = next;
        if moved < tol {
            let mv = m * &v;
            let value = mv.norm().copysign(v.dot(&mv));
            let mut col = DMatrix::from_column_slice(d, 1, v.as_slice());
            fix_column_signs(&mut col);
            return Ok(EigenPair {
                value,
                vector: col.column(0).into_owned(),
            });
        }
    }
    Err(Error::Convergence(format!(
        "matrix power method did not converge in {max_iters} iterations"
    )))
}
