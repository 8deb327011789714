use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::read_jsonl;
use crate::texture::Texture;

pub const ANOMALY_GRID: usize = 8;
const RIDGE: f64 = 1e-9;

/// Downsampled RGB feature (8x8 blocks, values in [0,1]) used by the built-in scorer.
pub fn anomaly_features(tex: &Texture) -> Result<Vec<f64>> {
    Ok(tex
        .block_means(ANOMALY_GRID, ANOMALY_GRID)?
        .into_iter()
        .flat_map(|rgb| rgb.map(|v| v / 255.0))
        .collect())
}

#[derive(Debug, Clone)]
struct FittedGaussian {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

/// Mahalanobis distance to a reference Gaussian with shrinkage toward a
/// scaled identity: `S = (1 - a) C + a (tr C / F) I`.
#[derive(Debug, Clone)]
pub struct MahalanobisScorer {
    shrinkage: f64,
    fitted: Option<FittedGaussian>,
}

impl MahalanobisScorer {
    pub fn new(shrinkage: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&shrinkage) {
            return Err(Error::invalid("shrinkage outside [0,1]"));
        }
        Ok(Self {
            shrinkage,
            fitted: None,
        })
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn fit_features(&mut self, features: &[Vec<f64>]) -> Result<()> {
        if features.len() < 2 {
            return Err(Error::invalid("anomaly reference needs at least 2 samples"));
        }
        let dim = features[0].len();
        if dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(Error::invalid("anomaly reference features differ in dimension"));
        }
        let n = features.len();
        let mut mean = DVector::zeros(dim);
        for f in features {
            mean += DVector::from_column_slice(f);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(dim, dim);
        for f in features {
            let d = DVector::from_column_slice(f) - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= (n - 1) as f64;
        let avg_var = cov.trace() / dim as f64;
        let mut shrunk = cov * (1.0 - self.shrinkage);
        for i in 0..dim {
            shrunk[(i, i)] += self.shrinkage * avg_var + RIDGE;
        }
        let precision = shrunk
            .cholesky()
            .ok_or_else(|| Error::DegenerateData("reference covariance is not positive definite".into()))?
            .inverse();
        self.fitted = Some(FittedGaussian { mean, precision });
        Ok(())
    }

    pub fn fit(&mut self, textures: &[Texture]) -> Result<()> {
        let feats = textures.iter().map(anomaly_features).collect::<Result<Vec<_>>>()?;
        self.fit_features(&feats)
    }

    pub fn score_features(&self, features: &[f64]) -> Result<f64> {
        let fitted = self
            .fitted
            .as_ref()
            .ok_or_else(|| Error::State("anomaly scorer has not been fitted".into()))?;
        if features.len() != fitted.mean.len() {
            return Err(Error::invalid("feature dimension differs from the fitted reference"));
        }
        let d = DVector::from_column_slice(features) - &fitted.mean;
        let q = (&fitted.precision * &d).dot(&d);
        Ok(q.max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScoreRecord {
    sample_id: String,
    score: f64,
}

/// Scores produced by an outside model, keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct ExternalScores {
    scores: HashMap<String, f64>,
}

impl ExternalScores {
    pub fn new(scores: HashMap<String, f64>) -> Self {
        Self { scores }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            scores: read_jsonl::<ScoreRecord>(path)?
                .into_iter()
                .map(|r| (r.sample_id, r.score))
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum AnomalyScorer {
    Mahalanobis(MahalanobisScorer),
    External(ExternalScores),
}

pub fn anomaly_score(tex: &Texture, sample_id: &str, scorer: &AnomalyScorer) -> Result<f64> {
    match scorer {
        AnomalyScorer::Mahalanobis(m) => m.score_features(&anomaly_features(tex)?),
        AnomalyScorer::External(e) => e
            .scores
            .get(sample_id)
            .copied()
            .ok_or_else(|| Error::LookupMiss(format!("no external anomaly score for {sample_id}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn unfitted_is_state_error() {
        let s = AnomalyScorer::Mahalanobis(MahalanobisScorer::new(0.1).unwrap());
        let t = Texture::filled(64, 64, [1, 2, 3]);
        assert!(matches!(anomaly_score(&t, "x", &s), Err(Error::State(_))));
    }

    #[test]
    fn mean_feature_scores_zero() {
        let refs: Vec<Texture> = (0..7u8).map(|i| Texture::filled(64, 64, [100 + i * 5, 90, 80 - i])).collect();
        let mut m = MahalanobisScorer::new(0.2).unwrap();
        m.fit(&refs).unwrap();
        // i = 3 is the exact reference mean
        let s = anomaly_score(&refs[3], "m", &AnomalyScorer::Mahalanobis(m.clone())).unwrap();
        assert!(s.abs() < 1e-6, "{s}");
        assert!(m.score_features(&anomaly_features(&refs[0]).unwrap()).unwrap() > 1.0);
    }

    #[test]
    fn one_sigma_along_principal_axis() {
        // anisotropic Gaussian in 3-D with axis-aligned std (2, 1, 0.5)
        let stds = [2.0, 1.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let feats: Vec<Vec<f64>> = (0..20_000)
            .map(|_| stds.iter().map(|&s| Normal::new(0.0, s).unwrap().sample(&mut rng)).collect())
            .collect();
        let mut m = MahalanobisScorer::new(0.0).unwrap();
        m.fit_features(&feats).unwrap();
        for (axis, &s) in stds.iter().enumerate() {
            let mut x = vec![0.0; 3];
            x[axis] = s;
            let score = m.score_features(&x).unwrap();
            assert!((score - 1.0).abs() < 0.03, "axis {axis}: {score}");
        }
    }

    #[test]
    fn external_scores_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.jsonl");
        std::fs::write(&p, "{\"sample_id\":\"a\",\"score\":1.5}\n").unwrap();
        let s = AnomalyScorer::External(ExternalScores::load(&p).unwrap());
        let t = Texture::filled(8, 8, [0, 0, 0]);
        assert_eq!(anomaly_score(&t, "a", &s).unwrap(), 1.5);
        assert!(matches!(anomaly_score(&t, "b", &s), Err(Error::LookupMiss(_))));
    }
}
