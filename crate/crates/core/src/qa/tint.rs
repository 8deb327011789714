use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qa::image_ops::region_pixels;
use crate::qa::RegionMask;
use crate::texture::Texture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TintClass {
    Normal,
    BlueTint,
    RedTint,
}

impl TintClass {
    const ALL: [TintClass; 3] = [TintClass::Normal, TintClass::BlueTint, TintClass::RedTint];
}

/// Mean R, G, B, R-B and R-G over the region, each scaled to [0,1] (or [-1,1]).
pub fn tint_features(tex: &Texture, face_region: &RegionMask) -> Result<Vec<f64>> {
    let (x0, x1, y0, y1) = region_pixels(face_region, tex.width(), tex.height())?;
    let mut sums = [0u64; 3];
    for y in y0..y1 {
        for x in x0..x1 {
            let p = tex.get(x, y);
            for c in 0..3 {
                sums[c] += p[c] as u64;
            }
        }
    }
    let n = ((x1 - x0) * (y1 - y0)) as f64 * 255.0;
    let [r, g, b] = sums.map(|s| s as f64 / n);
    Ok(vec![r, g, b, r - b, r - g])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TintSample {
    pub features: Vec<f64>,
    pub label: TintClass,
}

/// k-nearest-neighbour tint classifier over [`tint_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TintModel {
    pub k: usize,
    pub face_region: RegionMask,
    pub samples: Vec<TintSample>,
}

impl TintModel {
    pub fn new(samples: Vec<TintSample>, k: usize, face_region: RegionMask) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if k > samples.len() {
            return Err(Error::invalid(format!(
                "k = {k} exceeds the {} training samples",
                samples.len()
            )));
        }
        if samples.iter().any(|s| s.features.len() != 5) {
            return Err(Error::invalid("tint features must have 5 entries"));
        }
        Ok(Self {
            k,
            face_region,
            samples,
        })
    }

    pub fn fit(textures: &[(Texture, TintClass)], k: usize, face_region: RegionMask) -> Result<Self> {
        let samples = textures
            .iter()
            .map(|(t, label)| {
                Ok(TintSample {
                    features: tint_features(t, &face_region)?,
                    label: *label,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(samples, k, face_region)
    }

    /// Curation set of flat textures: jittered `base` colours as `Normal`,
    /// plus copies offset by +40 on blue or red, in roughly equal thirds.
    pub fn synthetic_curation(base: [u8; 3], n: usize, k: usize, seed: u64, face_region: RegionMask) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = Vec::with_capacity(n);
        for i in 0..n {
            let shade: i32 = rng.random_range(-20..=20);
            let warm: i32 = rng.random_range(-6..=6);
            let jitter = |c: usize| -> i32 {
                base[c] as i32 + shade + if c == 0 { warm } else if c == 2 { -warm } else { 0 }
            };
            let mut rgb = [jitter(0), jitter(1), jitter(2)];
            let label = TintClass::ALL[i % 3];
            match label {
                TintClass::BlueTint => rgb[2] += 40,
                TintClass::RedTint => rgb[0] += 40,
                TintClass::Normal => {}
            }
            let rgb = rgb.map(|v| v.clamp(0, 255) as u8);
            set.push((Texture::filled(16, 16, rgb), label));
        }
        Self::fit(&set, k, face_region)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: TintModel = serde_json::from_str(&text)?;
        Self::new(m.samples, m.k, m.face_region)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Majority vote among the k nearest samples (Euclidean). Vote ties go to the
    /// class with the smaller summed neighbour distance, then to enum order.
    pub fn classify_features(&self, features: &[f64]) -> Result<(TintClass, f64)> {
        if self.k > self.samples.len() || self.k == 0 {
            return Err(Error::invalid("k exceeds training set size"));
        }
        let mut dists: Vec<(f64, usize)> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let d2: f64 = s.features.iter().zip(features).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = [0usize; 3];
        let mut dist_sum = [0.0f64; 3];
        for &(d, i) in &dists[..self.k] {
            let c = self.samples[i].label as usize;
            votes[c] += 1;
            dist_sum[c] += d;
        }
        let best = (0..3)
            .filter(|&c| votes[c] > 0)
            .min_by(|&a, &b| {
                votes[b]
                    .cmp(&votes[a])
                    .then(dist_sum[a].total_cmp(&dist_sum[b]))
                    .then(a.cmp(&b))
            })
            .expect("k >= 1");
        let tinted_share = (votes[1] + votes[2]) as f64 / self.k as f64;
        Ok((TintClass::ALL[best], tinted_share))
    }
}

pub fn classify_tint(tex: &Texture, model: &TintModel) -> Result<TintClass> {
    Ok(classify_tint_scored(tex, model)?.0)
}

/// Class plus the fraction of the k neighbours that carry a tint label.
pub fn classify_tint_scored(tex: &Texture, model: &TintModel) -> Result<(TintClass, f64)> {
    model.classify_features(&tint_features(tex, &model.face_region)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> RegionMask {
        RegionMask::new("face", [0.0, 0.0, 1.0, 1.0]).unwrap()
    }

    fn gray_model(k: usize) -> TintModel {
        TintModel::synthetic_curation([128, 128, 128], 30, k, 1, full()).unwrap()
    }

    // exhaustive nearest-neighbour oracle: distances to every sample, majority of k smallest
    fn oracle(model: &TintModel, f: &[f64]) -> TintClass {
        let mut all: Vec<(f64, TintClass)> = model
            .samples
            .iter()
            .map(|s| (s.features.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), s.label))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut counts = std::collections::BTreeMap::new();
        for (_, l) in &all[..model.k] {
            *counts.entry(*l).or_insert(0) += 1;
        }
        *counts.iter().max_by_key(|(_, c)| **c).unwrap().0
    }

    #[test]
    fn gray_is_normal_and_shifted_is_tinted() {
        let m = gray_model(3);
        let gray = Texture::filled(32, 32, [128, 128, 128]);
        let blue = Texture::filled(32, 32, [128, 128, 168]);
        let red = Texture::filled(32, 32, [168, 128, 128]);
        assert_eq!(classify_tint(&gray, &m).unwrap(), TintClass::Normal);
        assert_eq!(classify_tint(&blue, &m).unwrap(), TintClass::BlueTint);
        assert_eq!(classify_tint(&red, &m).unwrap(), TintClass::RedTint);
        for t in [&gray, &blue, &red] {
            let f = tint_features(t, &m.face_region).unwrap();
            assert_eq!(classify_tint(t, &m).unwrap(), oracle(&m, &f));
        }
    }

    #[test]
    fn k_larger_than_train_is_rejected() {
        let m = gray_model(3);
        assert!(TintModel::new(m.samples.clone(), m.samples.len() + 1, full()).is_err());
        assert!(TintModel::new(m.samples.clone(), 0, full()).is_err());
    }

    #[test]
    fn vote_tie_prefers_closer_class() {
        let s = |f: f64, label| TintSample { features: vec![f, 0.0, 0.0, 0.0, 0.0], label };
        let m = TintModel::new(vec![s(0.1, TintClass::RedTint), s(-0.2, TintClass::Normal)], 2, full()).unwrap();
        assert_eq!(m.classify_features(&[0.0; 5]).unwrap().0, TintClass::RedTint);
        let m = TintModel::new(vec![s(0.1, TintClass::RedTint), s(-0.1, TintClass::BlueTint)], 2, full()).unwrap();
        assert_eq!(m.classify_features(&[0.0; 5]).unwrap().0, TintClass::BlueTint);
    }

    #[test]
    fn model_json_roundtrip() {
        let m = gray_model(5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tint.json");
        m.save(&p).unwrap();
        assert_eq!(TintModel::load(&p).unwrap(), m);
    }
}
