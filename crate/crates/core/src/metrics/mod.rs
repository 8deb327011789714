//! Corpus-level generative metrics over feature embeddings: FID, KID and
//! k-NN-manifold precision/recall.

pub mod features;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use features::{extract_features, pixelstat, EmbeddingCache, FeatureExtractor, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl MetricResult {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            dispersion: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }
}

/// Sample mean and unbiased covariance of a feature corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl CorpusStats {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, n: usize) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::invalid("covariance shape does not match the mean"));
        }
        if n < 2 {
            return Err(Error::invalid("corpus stats need n >= 2"));
        }
        Ok(Self {
            mean,
            covariance,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.covariance.iter()).all(|v| v.is_finite())
    }
}

fn uniform_dim(features: &[FeatureVector]) -> Result<usize> {
    let dim = features.first().map_or(0, FeatureVector::dim);
    if dim == 0 || features.iter().any(|f| f.dim() != dim) {
        return Err(Error::invalid("features must share a non-zero dimension"));
    }
    Ok(dim)
}

pub fn corpus_stats(features: &[FeatureVector]) -> Result<CorpusStats> {
    if features.len() < 2 {
        return Err(Error::invalid("corpus_stats needs at least 2 feature vectors"));
    }
    let dim = uniform_dim(features)?;
    let n = features.len();
    let mut mean = DVector::zeros(dim);
    for f in features {
        mean += DVector::from_column_slice(&f.values);
    }
    mean /= n as f64;
    let mut centered = DMatrix::zeros(dim, n);
    for (j, f) in features.iter().enumerate() {
        for i in 0..dim {
            centered[(i, j)] = f.values[i] - mean[i];
        }
    }
    let mut cov = &centered * centered.transpose() / (n - 1) as f64;
    symmetrize(&mut cov);
    CorpusStats::new(mean, cov, n)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Relative eigenvalue floor: smaller eigenvalues are rounding noise of a
/// rank-deficient matrix and are treated as exact zeros.
const EIGEN_RTOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric PSD matrix restricted to the indices
/// with a non-zero diagonal (rows outside are exactly zero).
fn support_eigen(m: &DMatrix<f64>) -> Result<(Vec<usize>, SymmetricEigen<f64, nalgebra::Dyn>)> {
    let support: Vec<usize> = (0..m.nrows()).filter(|&i| m[(i, i)] != 0.0).collect();
    let block = DMatrix::from_fn(support.len(), support.len(), |i, j| m[(support[i], support[j])]);
    let eig = SymmetricEigen::new(block);
    if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("eigendecomposition did not converge".into()));
    }
    Ok((support, eig))
}

/// `tr((S_a^1/2 S_b S_a^1/2)^1/2)`, evaluated in the span of the numerically
/// non-zero eigenvectors of `S_a` so null modes contribute exactly zero.
fn trace_sqrt_product(sa: &DMatrix<f64>, sb: &DMatrix<f64>) -> Result<f64> {
    let (support, eig) = support_eigen(sa)?;
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    let floor = top * EIGEN_RTOL * sa.nrows() as f64;
    let kept: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&k| eig.eigenvalues[k] > floor).collect();
    if kept.is_empty() {
        return Ok(0.0);
    }
    // columns: sqrt(lambda_k) * v_k embedded in the full space
    let mut basis = DMatrix::zeros(sa.nrows(), kept.len());
    for (c, &k) in kept.iter().enumerate() {
        let root = eig.eigenvalues[k].sqrt();
        for (r, &si) in support.iter().enumerate() {
            basis[(si, c)] = root * eig.eigenvectors[(r, k)];
        }
    }
    let mut inner = basis.transpose() * sb * &basis;
    symmetrize(&mut inner);
    let values = SymmetricEigen::new(inner).eigenvalues;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("eigendecomposition did not converge".into()));
    }
    Ok(values.iter().map(|v| v.max(0.0).sqrt()).sum())
}

/// Frechet distance between the Gaussians `(mu_a, S_a)` and `(mu_b, S_b)`:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn fid(a: &CorpusStats, b: &CorpusStats) -> Result<MetricResult> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("fid: dimension mismatch ({} vs {})", a.dim(), b.dim())));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid("fid: non-finite statistics"));
    }
    let diff = &a.mean - &b.mean;
    let trace_sqrt = trace_sqrt_product(&a.covariance, &b.covariance)?;
    let value = diff.dot(&diff) + a.covariance.trace() + b.covariance.trace() - 2.0 * trace_sqrt;
    Ok(MetricResult::new("fid", value.max(0.0))
        .with_meta("n_a", a.n)
        .with_meta("n_b", b.n)
        .with_meta("dim", a.dim()))
}

/// `((x . y) / F + 1)^3`
#[inline]
pub fn polynomial_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / x.len() as f64 + 1.0).powi(3)
}

/// Unbiased MMD^2 between two sample sets under [`polynomial_kernel`].
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut kxx = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                kxx += polynomial_kernel(x[i], x[j]);
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                kyy += polynomial_kernel(y[i], y[j]);
            }
        }
    }
    let mut kxy = 0.0;
    for xi in x {
        for yj in y {
            kxy += polynomial_kernel(xi, yj);
        }
    }
    kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
}

/// KID: both sets are shuffled with one seeded stream (`a` first), split into
/// `blocks` disjoint equal-size subsets (remainders dropped), and the unbiased
/// MMD^2 is averaged over blocks. Dispersion is the population std across blocks.
pub fn kid(a: &[FeatureVector], b: &[FeatureVector], blocks: usize, seed: u64) -> Result<MetricResult> {
    if blocks == 0 {
        return Err(Error::invalid("kid: blocks must be >= 1"));
    }
    let (da, db) = (uniform_dim(a)?, uniform_dim(b)?);
    if da != db {
        return Err(Error::invalid("kid: dimension mismatch"));
    }
    let (ma, mb) = (a.len() / blocks, b.len() / blocks);
    if ma < 2 || mb < 2 {
        return Err(Error::invalid(format!(
            "kid: {blocks} blocks leave fewer than 2 samples per block ({} and {} samples)",
            a.len(),
            b.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pa: Vec<usize> = (0..a.len()).collect();
    let mut pb: Vec<usize> = (0..b.len()).collect();
    pa.shuffle(&mut rng);
    pb.shuffle(&mut rng);
    let estimates: Vec<f64> = (0..blocks)
        .map(|k| {
            let xs: Vec<&[f64]> = pa[k * ma..(k + 1) * ma].iter().map(|&i| a[i].values.as_slice()).collect();
            let ys: Vec<&[f64]> = pb[k * mb..(k + 1) * mb].iter().map(|&i| b[i].values.as_slice()).collect();
            mmd2_unbiased(&xs, &ys)
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / blocks as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / blocks as f64;
    let mut r = MetricResult::new("kid", mean)
        .with_meta("blocks", blocks)
        .with_meta("block_size_a", ma)
        .with_meta("block_size_b", mb);
    r.dispersion = Some(var.sqrt());
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from every point to its k-th nearest other point.
fn knn_radii_sq(set: &[FeatureVector], k: usize) -> Vec<f64> {
    set.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = set
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| sq_dist(&p.values, &q.values))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

/// Fraction of `probes` that lie within the k-NN ball of at least one
/// `manifold` point.
fn coverage(manifold: &[FeatureVector], radii_sq: &[f64], probes: &[FeatureVector]) -> f64 {
    let inside = probes
        .iter()
        .filter(|p| {
            manifold
                .iter()
                .zip(radii_sq)
                .any(|(m, r)| sq_dist(&p.values, &m.values) <= *r)
        })
        .count();
    inside as f64 / probes.len() as f64
}

pub fn precision_recall(real: &[FeatureVector], fake: &[FeatureVector], k: usize) -> Result<PrecisionRecall> {
    if k == 0 {
        return Err(Error::invalid("precision_recall: k must be >= 1"));
    }
    if real.len() <= k || fake.len() <= k {
        return Err(Error::invalid(format!(
            "precision_recall: k = {k} needs more than k points in each set ({} real, {} fake)",
            real.len(),
            fake.len()
        )));
    }
    if uniform_dim(real)? != uniform_dim(fake)? {
        return Err(Error::invalid("precision_recall: dimension mismatch"));
    }
    let real_r = knn_radii_sq(real, k);
    let fake_r = knn_radii_sq(fake, k);
    Ok(PrecisionRecall {
        precision: coverage(real, &real_r, fake),
        recall: coverage(fake, &fake_r, real),
    })
}
