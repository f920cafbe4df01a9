//! Method-of-moments estimation for spherical Gaussian mixtures and the
//! single-topic model.
//!
//! Both models share the moment form
//!
//! ```text
//! M2 = Σ_i w_i a_i ∘ a_i,    M3 = Σ_i w_i a_i ∘ a_i ∘ a_i.
//! ```
//!
//! The pipeline whitens with `W` (`W^T M2 W = I`), so that
//! `M3(W, W, W) = Σ_i λ_i v_i∘v_i∘v_i` is orthogonally decomposable with
//! `λ_i = 1/√w_i`. It then extracts the eigenpairs with the tensor power
//! method and maps back with `A = (W^T)^+ V Diag(λ)`.
//!
//! The whitened third moment is either materialized or contracted straight
//! from the whitened samples. Both paths draw the same random starts, so they
//! agree to rounding.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv, symmetric_eigen_desc};
use crate::power::{power_iterate, EigenPair, PairDiagnostics, PowerConfig, SymmetricContraction};
use crate::products::{multilinear_transform, ModeMap};
use crate::random;
use crate::tensor::DenseTensor;

/// Samples rows `x_n`: real points for a GMM, word lists for topic data.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleMatrix {
    /// `n x d`, one sample per row.
    Points(DMatrix<f64>),
    /// Each document is a list of 0-based word ids below `vocab`.
    Documents { vocab: usize, docs: Vec<Vec<usize>> },
}

impl SampleMatrix {
    pub fn n_samples(&self) -> usize {
        match self {
            SampleMatrix::Points(x) => x.nrows(),
            SampleMatrix::Documents { docs, .. } => docs.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SampleMatrix::Points(x) => x.ncols(),
            SampleMatrix::Documents { vocab, .. } => *vocab,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gmm,
    Topic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
    /// `None` when the third moment is left implicit.
    pub third: Option<DenseTensor>,
    /// Spherical noise variance; GMM only.
    pub sigma2: Option<f64>,
}

/// Spherical GMM `x = a_h + z`, `z ~ N(0, σ² I)`, `P(h = i) = w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    /// `d x k`, one mean per column.
    pub means: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub sigma: f64,
}

/// Single-topic model: each document draws one topic `h` with probability
/// `w_h`, then `words_per_doc` i.i.d. words from column `a_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicSpec {
    /// `d x k`, one word distribution per column.
    pub topics: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub words_per_doc: usize,
}

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Config(format!("{what} must be finite and nonnegative")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Config(format!("{what} must sum to 1, sum is {sum}")));
    }
    Ok(())
}

fn check_weights(weights: &DVector<f64>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("need at least one component".into()));
    }
    if weights.len() != k {
        return Err(Error::Config(format!(
            "{} weights for {} components",
            weights.len(),
            k
        )));
    }
    check_simplex(weights.as_slice(), "weights")
}

impl GmmSpec {
    pub fn new(means: DMatrix<f64>, weights: DVector<f64>, sigma: f64) -> Result<Self> {
        let spec = Self { means, weights, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_weights(&self.weights, self.means.ncols())?;
        if self.means.nrows() == 0 || self.means.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("means must be finite with d >= 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.means.ncols()
    }

    pub fn d(&self) -> usize {
        self.means.nrows()
    }

    /// Orthonormal (unit-norm, mutually orthogonal) means drawn from `seed`.
    pub fn orthonormal_means(d: usize, weights: DVector<f64>, sigma: f64, seed: u64) -> Result<Self> {
        let k = weights.len();
        if k == 0 || k > d {
            return Err(Error::Config(format!(
                "orthonormal means need 1 <= k <= d, got k = {k}, d = {d}"
            )));
        }
        let mut rng = random::rng(seed);
        Self::new(random::orthonormal_matrix(d, k, &mut rng), weights, sigma)
    }
}

impl TopicSpec {
    pub fn new(topics: DMatrix<f64>, weights: DVector<f64>, words_per_doc: usize) -> Result<Self> {
        let spec = Self {
            topics,
            weights,
            words_per_doc,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_weights(&self.weights, self.topics.ncols())?;
        if self.topics.nrows() == 0 {
            return Err(Error::Config("vocabulary must be nonempty".into()));
        }
        for (i, col) in self.topics.column_iter().enumerate() {
            check_simplex(col.as_slice(), &format!("topic {}", i + 1))?;
        }
        if self.words_per_doc < 3 {
            return Err(Error::Config(format!(
                "third moments need at least 3 words per document, got {}",
                self.words_per_doc
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.topics.ncols()
    }

    pub fn d(&self) -> usize {
        self.topics.nrows()
    }

    /// Topics that each put most of their mass on their own block of the
    /// vocabulary: block words get weight 10, the rest weight 1, each times
    /// a uniform draw in `[0.5, 1.5)`, then columns are normalized.
    pub fn block_topics(d: usize, weights: DVector<f64>, words_per_doc: usize, seed: u64) -> Result<Self> {
        let k = weights.len();
        if k == 0 || k > d {
            return Err(Error::Config(format!(
                "block topics need 1 <= k <= d, got k = {k}, d = {d}"
            )));
        }
        let mut rng = random::rng(seed);
        let uniform = rand::distr::Uniform::new(0.5, 1.5).expect("valid range");
        let block = d / k;
        let mut topics = DMatrix::from_fn(d, k, |word, topic| {
            let own = word / block == topic || (topic == k - 1 && word >= block * k);
            let base = if own { 10.0 } else { 1.0 };
            base * uniform.sample(&mut rng)
        });
        for mut col in topics.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        Self::new(topics, weights, words_per_doc)
    }
}

fn sample_labels(weights: &DVector<f64>, n: usize, rng: &mut random::Rng) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights.iter().cloned())
        .map_err(|e| Error::Config(format!("weights: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// `n` i.i.d. draws from the mixture with their 0-based component labels.
pub fn gmm_generate(spec: &GmmSpec, n: usize, seed: u64) -> Result<(SampleMatrix, Vec<usize>)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let mut rng = random::rng(seed);
    let labels = sample_labels(&spec.weights, n, &mut rng)?;
    let d = spec.d();
    let mut x = DMatrix::zeros(n, d);
    for (row, &h) in labels.iter().enumerate() {
        let z = random::normal_vector(d, &mut rng);
        for j in 0..d {
            x[(row, j)] = spec.means[(j, h)] + spec.sigma * z[j];
        }
    }
    Ok((SampleMatrix::Points(x), labels))
}

/// `n_docs` documents with their 0-based topic labels.
pub fn topic_generate(spec: &TopicSpec, n_docs: usize, seed: u64) -> Result<(SampleMatrix, Vec<usize>)> {
    spec.validate()?;
    if n_docs == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let mut rng = random::rng(seed);
    let labels = sample_labels(&spec.weights, n_docs, &mut rng)?;
    let word_dists = spec
        .topics
        .column_iter()
        .map(|c| WeightedIndex::new(c.iter().cloned()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Config(format!("topic columns: {e}")))?;
    let docs = labels
        .iter()
        .map(|&h| {
            (0..spec.words_per_doc)
                .map(|_| word_dists[h].sample(&mut rng))
                .collect()
        })
        .collect();
    Ok((
        SampleMatrix::Documents {
            vocab: spec.d(),
            docs,
        },
        labels,
    ))
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > d {
        return Err(Error::Config(format!(
            "k = {k} exceeds the dimension d = {d}; whitening needs k <= d"
        )));
    }
    Ok(())
}

fn points(samples: &SampleMatrix) -> Result<&DMatrix<f64>> {
    match samples {
        SampleMatrix::Points(x) => {
            if x.nrows() == 0 || x.ncols() == 0 {
                return Err(Error::Data("empty sample matrix".into()));
            }
            if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite value in sample row {}",
                    pos % x.nrows() + 1
                )));
            }
            if x.nrows() <= x.ncols() {
                return Err(Error::Data(format!(
                    "need more samples than dimensions, got n = {} and d = {}",
                    x.nrows(),
                    x.ncols()
                )));
            }
            Ok(x)
        }
        SampleMatrix::Documents { .. } => Err(Error::Config("GMM estimation needs real-valued points".into())),
    }
}

fn documents(samples: &SampleMatrix) -> Result<(usize, &[Vec<usize>])> {
    match samples {
        SampleMatrix::Documents { vocab, docs } => {
            if *vocab == 0 || docs.is_empty() {
                return Err(Error::Data("empty document collection".into()));
            }
            for (row, doc) in docs.iter().enumerate() {
                if doc.len() < 3 {
                    return Err(Error::Data(format!(
                        "document {} has {} words; third moments need at least 3",
                        row + 1,
                        doc.len()
                    )));
                }
                if let Some(&w) = doc.iter().find(|&&w| w >= *vocab) {
                    return Err(Error::Data(format!(
                        "document {} uses word {} outside the vocabulary of {}",
                        row + 1,
                        w + 1,
                        vocab
                    )));
                }
            }
            Ok((*vocab, docs))
        }
        SampleMatrix::Points(_) => Err(Error::Config("topic estimation needs documents".into())),
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `(E[x], E[x x^T])` with `1/n` averaging.
fn raw_first_second(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_sum().transpose() / n;
    let second = symmetrize(&(x.tr_mul(x) / n));
    (mean, second)
}

/// `E[x ∘ x ∘ x]`, accumulated as the mode-1 unfolding `X^T Z / n` where row
/// `i` of `Z` is `x_i ⊗ x_i` (first index fastest).
fn raw_third(x: &DMatrix<f64>) -> Result<DenseTensor> {
    const BLOCK: usize = 4096;
    let (n, d) = x.shape();
    let mut acc = DMatrix::zeros(d, d * d);
    let mut start = 0;
    while start < n {
        let rows = BLOCK.min(n - start);
        let xb = x.rows(start, rows);
        let z = DMatrix::from_fn(rows, d * d, |i, col| xb[(i, col % d)] * xb[(i, col / d)]);
        acc.gemm_tr(1.0, &xb, &z, 1.0);
        start += rows;
    }
    DenseTensor::fold(&(acc / n as f64), 1, &[d, d, d])
}

/// `Σ_j (μ∘e_j∘e_j + e_j∘μ∘e_j + e_j∘e_j∘μ)`.
pub fn gmm_correction_tensor(mean: &DVector<f64>) -> Result<DenseTensor> {
    let d = mean.len();
    DenseTensor::from_fn(vec![d, d, d], |idx| {
        let (i, j, k) = (idx[0] - 1, idx[1] - 1, idx[2] - 1);
        let mut v = 0.0;
        if j == k {
            v += mean[i];
        }
        if i == k {
            v += mean[j];
        }
        if i == j {
            v += mean[k];
        }
        v
    })
}

/// Turns raw moments `E[x]`, `E[x x^T]`, `E[x∘x∘x]` of a spherical GMM into
/// the shared moment form. `σ²` is the smallest eigenvalue of the covariance
/// `E[x x^T] − μ μ^T`; the second moment itself stays uncentered.
pub fn gmm_moments_from_raw(
    mean: &DVector<f64>,
    second_raw: &DMatrix<f64>,
    third_raw: Option<&DenseTensor>,
) -> Result<MomentSet> {
    let d = mean.len();
    if second_raw.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "second moment is {:?}, mean has length {d}",
            second_raw.shape()
        )));
    }
    let cov = second_raw - mean * mean.transpose();
    let (evals, _) = symmetric_eigen_desc(&cov);
    // round-off can push a zero variance slightly negative
    let sigma2 = evals[d - 1].max(0.0);
    let second = symmetrize(&(second_raw - DMatrix::identity(d, d) * sigma2));
    let third = match third_raw {
        Some(t) => {
            if t.shape() != [d, d, d] {
                return Err(Error::Dimension(format!(
                    "third moment has shape {:?}, expected {d}^3",
                    t.shape()
                )));
            }
            let mut m3 = t.clone();
            m3.axpy(-sigma2, &gmm_correction_tensor(mean)?)?;
            Some(m3)
        }
        None => None,
    };
    Ok(MomentSet {
        mean: mean.clone(),
        second,
        third,
        sigma2: Some(sigma2),
    })
}

/// Empirical GMM moments with the third moment materialized.
pub fn gmm_moments(samples: &SampleMatrix, k: usize) -> Result<MomentSet> {
    gmm_moments_with(samples, k, true)
}

fn gmm_moments_with(samples: &SampleMatrix, k: usize, materialize: bool) -> Result<MomentSet> {
    let x = points(samples)?;
    check_k(k, x.ncols())?;
    let (mean, second) = raw_first_second(x);
    let third = if materialize { Some(raw_third(x)?) } else { None };
    gmm_moments_from_raw(&mean, &second, third.as_ref())
}

/// Distinct words of a document with their counts, sorted by word id.
fn word_counts(doc: &[usize]) -> Vec<(usize, f64)> {
    let mut sorted = doc.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in sorted {
        match out.last_mut() {
            Some((last, c)) if *last == w => *c += 1.0,
            _ => out.push((w, 1.0)),
        }
    }
    out
}

/// Empirical topic moments from ordered pairs and triples of distinct word
/// positions, averaged within each document and then across documents.
pub fn topic_moments(samples: &SampleMatrix, k: usize) -> Result<MomentSet> {
    topic_moments_with(samples, k, true)
}

fn topic_moments_with(samples: &SampleMatrix, k: usize, materialize: bool) -> Result<MomentSet> {
    let (d, docs) = documents(samples)?;
    check_k(k, d)?;
    let n = docs.len() as f64;
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    let mut third = if materialize { Some(vec![0.0; d * d * d]) } else { None };
    for doc in docs {
        let l = doc.len() as f64;
        let counts = word_counts(doc);
        let pair_scale = 1.0 / (l * (l - 1.0));
        for &(p, cp) in &counts {
            mean[p] += cp / l;
            for &(q, cq) in &counts {
                let same = if p == q { cp } else { 0.0 };
                second[(p, q)] += (cp * cq - same) * pair_scale;
            }
        }
        if let Some(t) = third.as_mut() {
            let triple_scale = pair_scale / (l - 2.0);
            for &(r, cr) in &counts {
                for &(q, cq) in &counts {
                    for &(p, cp) in &counts {
                        let mut v = cp * cq * cr;
                        if p == q {
                            v -= cp * cr;
                        }
                        if p == r {
                            v -= cp * cq;
                        }
                        if q == r {
                            v -= cp * cq;
                        }
                        if p == q && q == r {
                            v += 2.0 * cp;
                        }
                        t[p + d * (q + d * r)] += v * triple_scale;
                    }
                }
            }
        }
    }
    let third = match third {
        Some(mut t) => {
            t.iter_mut().for_each(|v| *v /= n);
            Some(DenseTensor::new(vec![d, d, d], t)?)
        }
        None => None,
    };
    Ok(MomentSet {
        mean: mean / n,
        second: symmetrize(&(second / n)),
        third,
        sigma2: None,
    })
}

/// `Σ_i w_i a_i^{∘order}` for `order` 2 (as a matrix) and 3.
fn weighted_powers(a: &DMatrix<f64>, w: &DVector<f64>) -> Result<(DMatrix<f64>, DenseTensor)> {
    let d = a.nrows();
    let second = a * DMatrix::from_diagonal(w) * a.transpose();
    let third = DenseTensor::from_fn(vec![d, d, d], |idx| {
        (0..a.ncols())
            .map(|i| w[i] * a[(idx[0] - 1, i)] * a[(idx[1] - 1, i)] * a[(idx[2] - 1, i)])
            .sum()
    })?;
    Ok((symmetrize(&second), third))
}

/// Exact raw moments `(E[x], E[x x^T], E[x∘x∘x])` of a spherical GMM.
pub fn gmm_population_raw(spec: &GmmSpec) -> Result<(DVector<f64>, DMatrix<f64>, DenseTensor)> {
    spec.validate()?;
    let d = spec.d();
    let s2 = spec.sigma * spec.sigma;
    let mean = &spec.means * &spec.weights;
    let (m2, mut m3) = weighted_powers(&spec.means, &spec.weights)?;
    let second = m2 + DMatrix::identity(d, d) * s2;
    m3.axpy(s2, &gmm_correction_tensor(&mean)?)?;
    Ok((mean, second, m3))
}

/// Exact GMM moments, run through the same `σ²` extraction and correction as
/// empirical data.
pub fn gmm_population_moments(spec: &GmmSpec) -> Result<MomentSet> {
    let (mean, second, third) = gmm_population_raw(spec)?;
    gmm_moments_from_raw(&mean, &second, Some(&third))
}

/// Exact topic moments: word marginal, pair and triple co-occurrences.
pub fn topic_population_moments(spec: &TopicSpec) -> Result<MomentSet> {
    spec.validate()?;
    let (second, third) = weighted_powers(&spec.topics, &spec.weights)?;
    Ok(MomentSet {
        mean: &spec.topics * &spec.weights,
        second,
        third: Some(third),
        sigma2: None,
    })
}

/// `W = U_k Diag(λ_k^{-1/2})` from the top `k` eigenpairs of `M2`, so that
/// `W^T M2 W = I_k`. Eigenvalues at or below `1e-10 λ_max` count as zero.
pub fn whitening_matrix(m2: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let d = m2.nrows();
    if m2.ncols() != d {
        return Err(Error::Dimension(format!("M2 must be square, got {:?}", m2.shape())));
    }
    check_k(k, d)?;
    let (evals, evecs) = symmetric_eigen_desc(m2);
    let cutoff = 1e-10 * evals[0].max(0.0);
    let usable = evals.iter().take_while(|&&e| e > cutoff && e > 0.0).count();
    if usable < k {
        return Err(Error::Rank(format!(
            "second moment has {usable} eigenvalues above {cutoff:.3e}, need k = {k}"
        )));
    }
    let mut w = evecs.columns(0, k).into_owned();
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col /= evals[j].sqrt();
    }
    Ok(w)
}

/// Largest entrywise deviation of `W^T M2 W` from `I_k`.
pub fn whitening_defect(m2: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    (w.tr_mul(m2) * w - DMatrix::identity(w.ncols(), w.ncols())).amax()
}

/// Whitened GMM third moment, contracted from samples:
/// `(1/n) Σ_i y_i (y_i·v)² − σ² (m ‖W v‖² + 2 (m·v) W^T W v)` with
/// `y_i = W^T x_i` and `m = W^T μ`.
pub struct GmmWhitened {
    y: DMatrix<f64>,
    w: DMatrix<f64>,
    m: DVector<f64>,
    sigma2: f64,
}

impl GmmWhitened {
    pub fn new(x: &DMatrix<f64>, w: &DMatrix<f64>, mean: &DVector<f64>, sigma2: f64) -> Result<Self> {
        if x.ncols() != w.nrows() || mean.len() != w.nrows() {
            return Err(Error::Dimension(format!(
                "samples {:?}, whitening {:?}, mean length {}",
                x.shape(),
                w.shape(),
                mean.len()
            )));
        }
        Ok(Self {
            y: x * w,
            w: w.clone(),
            m: w.tr_mul(mean),
            sigma2,
        })
    }
}

impl SymmetricContraction for GmmWhitened {
    fn dim(&self) -> usize {
        self.w.ncols()
    }

    fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.y.nrows() as f64;
        let proj = (&self.y * v).map(|s| s * s);
        let mut out = self.y.tr_mul(&proj) / n;
        let wv = &self.w * v;
        let wtwv = self.w.tr_mul(&wv);
        out.axpy(-self.sigma2 * wv.norm_squared(), &self.m, 1.0);
        out.axpy(-2.0 * self.sigma2 * self.m.dot(v), &wtwv, 1.0);
        out
    }
}

/// Whitened topic third moment, contracted document by document. For one
/// document with whitened word rows `ω_p` and `α_p = ω_p·v`, the sum over
/// ordered distinct position triples is `u A² − 2 T A − u B + 2 Q` with
/// `u = Σ ω_p`, `A = Σ α_p`, `B = Σ α_p²`, `T = Σ ω_p α_p`, `Q = Σ ω_p α_p²`.
pub struct TopicWhitened {
    docs: Vec<Vec<usize>>,
    /// `d x k` whitening matrix; row `p` is the whitened indicator of word `p`.
    w: DMatrix<f64>,
}

impl TopicWhitened {
    pub fn new(docs: &[Vec<usize>], w: &DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = docs.iter().position(|doc| doc.iter().any(|&p| p >= w.nrows())) {
            return Err(Error::Dimension(format!(
                "document {} uses a word outside the {} whitened rows",
                bad + 1,
                w.nrows()
            )));
        }
        Ok(Self {
            docs: docs.to_vec(),
            w: w.clone(),
        })
    }
}

impl SymmetricContraction for TopicWhitened {
    fn dim(&self) -> usize {
        self.w.ncols()
    }

    fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        let k = self.w.ncols();
        let alpha_all = &self.w * v;
        let mut out = DVector::zeros(k);
        let mut u = DVector::zeros(k);
        let mut t = DVector::zeros(k);
        let mut q = DVector::zeros(k);
        for doc in &self.docs {
            let l = doc.len() as f64;
            u.fill(0.0);
            t.fill(0.0);
            q.fill(0.0);
            let (mut a, mut b) = (0.0, 0.0);
            for &p in doc {
                let alpha = alpha_all[p];
                a += alpha;
                b += alpha * alpha;
                for c in 0..k {
                    let omega = self.w[(p, c)];
                    u[c] += omega;
                    t[c] += omega * alpha;
                    q[c] += omega * alpha * alpha;
                }
            }
            let scale = 1.0 / (l * (l - 1.0) * (l - 2.0));
            for c in 0..k {
                out[c] += (u[c] * (a * a - b) - 2.0 * t[c] * a + 2.0 * q[c]) * scale;
            }
        }
        out / self.docs.len() as f64
    }
}

/// How the whitened third moment is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThirdMomentPath {
    /// Contract against whitened samples; the `k^3` tensor is never formed.
    Implicit,
    /// Form `M3` and `M3(W, W, W)` explicitly.
    Materialized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub path: ThirdMomentPath,
    /// Rescale the estimated weights onto the simplex.
    pub renormalize_weights: bool,
}

impl EstimateConfig {
    pub fn new(k: usize) -> Self {
        let p = PowerConfig::new(k);
        Self {
            k,
            max_iters: p.max_iters,
            tol: p.tol,
            restarts: p.restarts,
            seed: p.seed,
            path: ThirdMomentPath::Implicit,
            renormalize_weights: false,
        }
    }

    pub fn power_config(&self) -> PowerConfig {
        PowerConfig {
            n_pairs: self.k,
            max_iters: self.max_iters,
            tol: self.tol,
            restarts: self.restarts,
            seed: self.seed,
        }
    }
}

/// Eigenpairs of a whitened third moment, stopped at the first failure.
#[derive(Debug)]
pub struct WhitenedExtraction {
    /// `k x found`, eigenvectors as columns.
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
    pub diagnostics: Vec<PairDiagnostics>,
    pub failure: Option<Error>,
}

/// Power iteration with deflation applied inside each contraction,
/// `T(I, v, v) − Σ_l λ_l <v_l, v>² v_l`. All pairs share one random stream
/// seeded from `cfg.seed`.
pub fn whitened_power_estimate<C: SymmetricContraction + ?Sized>(
    op: &C,
    cfg: &PowerConfig,
) -> Result<WhitenedExtraction> {
    let k = op.dim();
    if cfg.n_pairs == 0 || cfg.n_pairs > k {
        return Err(Error::Config(format!(
            "cannot extract {} pairs from a {k}-dimensional whitened moment",
            cfg.n_pairs
        )));
    }
    if cfg.max_iters == 0 || cfg.restarts == 0 || !(cfg.tol > 0.0) {
        return Err(Error::Config(
            "max_iters and restarts must be at least 1 and tol positive".into(),
        ));
    }
    let mut rng = random::rng(cfg.seed);
    let mut found: Vec<EigenPair> = Vec::with_capacity(cfg.n_pairs);
    let mut diagnostics = Vec::with_capacity(cfg.n_pairs);
    let mut failure = None;
    for _ in 0..cfg.n_pairs {
        match power_iterate(op, &found, cfg, &mut rng) {
            Ok((pair, diag)) => {
                found.push(pair);
                diagnostics.push(diag);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let mut vectors = DMatrix::zeros(k, found.len());
    for (j, p) in found.iter().enumerate() {
        vectors.set_column(j, &p.vector);
    }
    Ok(WhitenedExtraction {
        vectors,
        values: DVector::from_iterator(found.len(), found.iter().map(|p| p.value)),
        diagnostics,
        failure,
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MixtureDiagnostics {
    /// `max |W^T M2 W − I|`.
    pub whitening_defect: f64,
    /// Whitened eigenvalues `λ_i = 1/√w_i`.
    pub eigenvalues: Vec<f64>,
    pub pairs: Vec<PairDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct MixtureEstimate {
    /// `d x k`, estimated means or topic-word distributions.
    pub components: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub sigma2: Option<f64>,
    pub diagnostics: MixtureDiagnostics,
}

/// `A = (W^T)^+ V Diag(λ)` and `w_i = 1/λ_i²`.
pub fn unwhiten(v: &DMatrix<f64>, lambda: &DVector<f64>, w: &DMatrix<f64>) -> Result<MixtureEstimate> {
    if v.nrows() != w.ncols() || v.ncols() != lambda.len() {
        return Err(Error::Dimension(format!(
            "V is {:?}, λ has length {}, W is {:?}",
            v.shape(),
            lambda.len(),
            w.shape()
        )));
    }
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Data("whitened eigenvalues must be positive".into()));
    }
    let components = pinv(&w.transpose()) * v * DMatrix::from_diagonal(lambda);
    let weights = lambda.map(|l| 1.0 / (l * l));
    Ok(MixtureEstimate {
        components,
        weights,
        sigma2: None,
        diagnostics: MixtureDiagnostics {
            eigenvalues: lambda.iter().cloned().collect(),
            ..Default::default()
        },
    })
}

/// Clips negative entries and rescales each column to sum to 1. A column
/// with no positive mass becomes uniform.
pub fn project_columns_to_simplex(a: &mut DMatrix<f64>) {
    let d = a.nrows() as f64;
    for mut col in a.column_iter_mut() {
        col.apply(|x| *x = x.max(0.0));
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        } else {
            col.fill(1.0 / d);
        }
    }
}

/// A pipeline run: the estimate when every stage succeeded, otherwise the
/// failure and whatever diagnostics were collected before it.
#[derive(Debug)]
pub struct MixtureRun {
    pub estimate: Option<MixtureEstimate>,
    pub diagnostics: MixtureDiagnostics,
    pub sigma2: Option<f64>,
    pub failure: Option<Error>,
}

impl MixtureRun {
    pub fn into_result(self) -> Result<MixtureEstimate> {
        match (self.estimate, self.failure) {
            (_, Some(e)) => Err(e),
            (Some(est), None) => Ok(est),
            (None, None) => Err(Error::Convergence("pipeline produced no estimate".into())),
        }
    }
}

fn finish(
    kind: ModelKind,
    m2: &DMatrix<f64>,
    w: &DMatrix<f64>,
    sigma2: Option<f64>,
    extraction: WhitenedExtraction,
    cfg: &EstimateConfig,
) -> Result<MixtureRun> {
    let mut diagnostics = MixtureDiagnostics {
        whitening_defect: whitening_defect(m2, w),
        eigenvalues: extraction.values.iter().cloned().collect(),
        pairs: extraction.diagnostics,
    };
    if let Some(e) = extraction.failure {
        return Ok(MixtureRun {
            estimate: None,
            diagnostics,
            sigma2,
            failure: Some(e.at_stage("power iteration")),
        });
    }
    let mut est = unwhiten(&extraction.vectors, &extraction.values, w).map_err(|e| e.at_stage("un-whitening"))?;
    if kind == ModelKind::Topic {
        project_columns_to_simplex(&mut est.components);
    }
    if cfg.renormalize_weights {
        let s = est.weights.sum();
        est.weights /= s;
    }
    est.sigma2 = sigma2;
    diagnostics.eigenvalues = est.diagnostics.eigenvalues.clone();
    est.diagnostics = diagnostics.clone();
    Ok(MixtureRun {
        estimate: Some(est),
        diagnostics,
        sigma2,
        failure: None,
    })
}

fn whiten_stage(m2: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    whitening_matrix(m2, k).map_err(|e| e.at_stage("whitening"))
}

fn materialized_whitened(m3: &DenseTensor, w: &DMatrix<f64>) -> Result<DenseTensor> {
    multilinear_transform(m3, &[ModeMap::Matrix(w), ModeMap::Matrix(w), ModeMap::Matrix(w)])
}

/// Full pipeline from samples, keeping partial diagnostics when the power
/// iteration fails. Errors from other stages are returned directly, labelled
/// with the stage.
pub fn estimate_mixture_run(samples: &SampleMatrix, kind: ModelKind, cfg: &EstimateConfig) -> Result<MixtureRun> {
    let materialize = cfg.path == ThirdMomentPath::Materialized;
    let moments = match kind {
        ModelKind::Gmm => gmm_moments_with(samples, cfg.k, materialize),
        ModelKind::Topic => topic_moments_with(samples, cfg.k, materialize),
    }
    .map_err(|e| e.at_stage("moments"))?;
    let w = whiten_stage(&moments.second, cfg.k)?;
    let power = cfg.power_config();
    let extraction = match (&moments.third, samples) {
        (Some(m3), _) => whitened_power_estimate(&materialized_whitened(m3, &w)?, &power),
        (None, SampleMatrix::Points(x)) => {
            let op = GmmWhitened::new(x, &w, &moments.mean, moments.sigma2.unwrap_or(0.0))?;
            whitened_power_estimate(&op, &power)
        }
        (None, SampleMatrix::Documents { docs, .. }) => whitened_power_estimate(&TopicWhitened::new(docs, &w)?, &power),
    }
    .map_err(|e| e.at_stage("power iteration"))?;
    finish(kind, &moments.second, &w, moments.sigma2, extraction, cfg)
}

/// Moments → whitening → power iteration with deflation → un-whitening.
pub fn estimate_mixture(samples: &SampleMatrix, kind: ModelKind, cfg: &EstimateConfig) -> Result<MixtureEstimate> {
    estimate_mixture_run(samples, kind, cfg)?.into_result()
}

/// The same pipeline started from a moment set with a materialized third
/// moment, such as the exact population moments.
pub fn estimate_from_moments(moments: &MomentSet, kind: ModelKind, cfg: &EstimateConfig) -> Result<MixtureEstimate> {
    let m3 = moments
        .third
        .as_ref()
        .ok_or_else(|| Error::Config("moment set has no materialized third moment".into()))?;
    check_k(cfg.k, moments.second.nrows())?;
    let w = whiten_stage(&moments.second, cfg.k)?;
    let extraction = whitened_power_estimate(&materialized_whitened(m3, &w)?, &cfg.power_config())
        .map_err(|e| e.at_stage("power iteration"))?;
    finish(kind, &moments.second, &w, moments.sigma2, extraction, cfg)?.into_result()
}
