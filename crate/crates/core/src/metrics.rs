//! Recovery metrics: column matching up to permutation, cosines, total
//! variation. Decompositions only identify components up to order and scale,
//! so every comparison against ground truth goes through a matching first.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::tensor::KruskalTensor;

pub fn abs_cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        (a.dot(b) / denom).abs()
    }
}

/// Greedy assignment on a score matrix (`score[(t, e)]`, larger is better):
/// repeatedly takes the best remaining (truth, estimate) pair. Returns
/// `perm` with `perm[t]` the estimate matched to truth column `t`.
fn greedy_assign(score: &DMatrix<f64>) -> Vec<usize> {
    let (nt, ne) = score.shape();
    let mut perm = vec![usize::MAX; nt];
    let mut used_e = vec![false; ne];
    for _ in 0..nt.min(ne) {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for t in (0..nt).filter(|&t| perm[t] == usize::MAX) {
            for e in (0..ne).filter(|&e| !used_e[e]) {
                if score[(t, e)] > best.0 {
                    best = (score[(t, e)], t, e);
                }
            }
        }
        perm[best.1] = best.2;
        used_e[best.2] = true;
    }
    perm
}

/// Greedy maximum-|cosine| matching of the columns of `est` to those of
/// `truth`. `perm[t]` is the column of `est` assigned to truth column `t`.
pub fn match_columns(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<usize> {
    let score = DMatrix::from_fn(truth.ncols(), est.ncols(), |t, e| {
        abs_cosine(&truth.column(t).into_owned(), &est.column(e).into_owned())
    });
    greedy_assign(&score)
}

/// `est` with its columns reordered to line up with `truth`.
pub fn permute_columns(est: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(est.nrows(), perm.len(), |i, j| est[(i, perm[j])])
}

/// Euclidean error of each truth column against its matched estimate.
pub fn matched_column_errors(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<f64> {
    let perm = match_columns(est, truth);
    (0..truth.ncols())
        .map(|t| (est.column(perm[t]) - truth.column(t)).norm())
        .collect()
}

/// `½ Σ |p_i − q_i|`.
pub fn total_variation(p: &DVector<f64>, q: &DVector<f64>) -> f64 {
    0.5 * (p - q).abs().sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KruskalMatch {
    /// `perm[r]`: estimated component matched to planted component `r`.
    pub perm: Vec<usize>,
    /// Smallest per-mode |cosine| for each planted component.
    pub min_cosines: Vec<f64>,
    /// `|λ̂ Π‖â‖| / |λ Π‖a‖|` for each planted component.
    pub scale_ratios: Vec<f64>,
}

impl KruskalMatch {
    pub fn worst_cosine(&self) -> f64 {
        self.min_cosines.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn worst_scale_error(&self) -> f64 {
        self.scale_ratios
            .iter()
            .map(|r| (r - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn component_scale(k: &KruskalTensor, r: usize) -> f64 {
    k.weights[r].abs() * k.factors.iter().map(|f| f.column(r).norm()).product::<f64>()
}

/// Matches CP components by the product of per-mode |cosines|.
pub fn match_kruskal(est: &KruskalTensor, truth: &KruskalTensor) -> KruskalMatch {
    let score = DMatrix::from_fn(truth.rank(), est.rank(), |t, e| {
        truth
            .factors
            .iter()
            .zip(&est.factors)
            .map(|(ft, fe)| abs_cosine(&ft.column(t).into_owned(), &fe.column(e).into_owned()))
            .product::<f64>()
    });
    let perm = greedy_assign(&score);
    let min_cosines = (0..truth.rank())
        .map(|t| {
            truth
                .factors
                .iter()
                .zip(&est.factors)
                .map(|(ft, fe)| {
                    abs_cosine(&ft.column(t).into_owned(), &fe.column(perm[t]).into_owned())
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let scale_ratios = (0..truth.rank())
        .map(|t| component_scale(est, perm[t]) / component_scale(truth, t))
        .collect();
    KruskalMatch {
        perm,
        min_cosines,
        scale_ratios,
    }
}
