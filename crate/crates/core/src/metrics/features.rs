use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texture::Texture;

pub const PIXELSTAT_GRID: usize = 16;
pub const PIXELSTAT_DIM: usize = PIXELSTAT_GRID * PIXELSTAT_GRID * 3 + 6;

const FEMB_MAGIC: &[u8; 4] = b"FEMB";
const FEMB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub extractor_id: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, extractor_id: impl Into<String>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature vector has non-finite entries"));
        }
        Ok(Self {
            values,
            extractor_id: extractor_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Embedding source for a list of (sample id, texture) pairs.
#[derive(Debug, Clone)]
pub enum FeatureExtractor {
    /// 16x16 box-downsampled channels in [0,1] followed by per-channel mean
    /// and variance over the full image (774 values).
    PixelStat,
    /// Embeddings computed elsewhere and looked up by sample id.
    Precomputed(EmbeddingCache),
}

impl FeatureExtractor {
    pub fn id(&self) -> &str {
        match self {
            FeatureExtractor::PixelStat => "pixelstat",
            FeatureExtractor::Precomputed(_) => "precomputed",
        }
    }
}

pub fn pixelstat(tex: &Texture) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(PIXELSTAT_DIM);
    for rgb in tex.block_means(PIXELSTAT_GRID, PIXELSTAT_GRID)? {
        values.extend(rgb.iter().map(|v| v / 255.0));
    }
    let n = (tex.width() * tex.height()) as f64;
    let mut sum = [0u64; 3];
    let mut sum_sq = [0u64; 3];
    for p in tex.pixels().chunks_exact(3) {
        for c in 0..3 {
            sum[c] += p[c] as u64;
            sum_sq[c] += (p[c] as u64) * (p[c] as u64);
        }
    }
    let means: [f64; 3] = std::array::from_fn(|c| sum[c] as f64 / n);
    // exact integer form of n*sum_sq - sum^2 avoids cancellation
    let vars: [f64; 3] = std::array::from_fn(|c| {
        let num = (n as u128) * sum_sq[c] as u128 - (sum[c] as u128) * (sum[c] as u128);
        num as f64 / (n * n) / (255.0 * 255.0)
    });
    values.extend(means.iter().map(|m| m / 255.0));
    values.extend(vars);
    FeatureVector::new(values, "pixelstat")
}

pub fn extract_features(textures: &[(&str, &Texture)], extractor: &FeatureExtractor) -> Result<Vec<FeatureVector>> {
    if textures.is_empty() {
        return Err(Error::invalid("extract_features needs at least one texture"));
    }
    textures
        .iter()
        .map(|(id, tex)| match extractor {
            FeatureExtractor::PixelStat => pixelstat(tex),
            FeatureExtractor::Precomputed(cache) => cache.get(id),
        })
        .collect()
}

/// Rows of embeddings with their sample ids; the FEMB file format.
///
/// Layout: `"FEMB"`, u32 version, u32 count, u32 dim, `count * dim` f32 (all
/// little-endian), then a UTF-8 JSON array whose entry `i` is the sample id
/// of row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    pub sample_ids: Vec<String>,
    pub extractor_id: String,
    index: HashMap<String, usize>,
}

impl EmbeddingCache {
    pub fn new(rows: Vec<Vec<f64>>, sample_ids: Vec<String>, extractor_id: impl Into<String>) -> Result<Self> {
        if rows.len() != sample_ids.len() {
            return Err(Error::invalid("rows and sample ids differ in length"));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("embedding rows differ in dimension"));
        }
        let mut index = HashMap::with_capacity(sample_ids.len());
        for (i, id) in sample_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate sample id {id} in embedding cache")));
            }
        }
        Ok(Self {
            dim,
            rows,
            sample_ids,
            extractor_id: extractor_id.into(),
            index,
        })
    }

    pub fn from_features(ids: Vec<String>, feats: &[FeatureVector]) -> Result<Self> {
        let extractor = feats.first().map_or("precomputed".to_string(), |f| f.extractor_id.clone());
        Self::new(feats.iter().map(|f| f.values.clone()).collect(), ids, extractor)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Result<FeatureVector> {
        let i = *self
            .index
            .get(sample_id)
            .ok_or_else(|| Error::LookupMiss(format!("no embedding for {sample_id}")))?;
        FeatureVector::new(self.rows[i].clone(), self.extractor_id.clone())
    }

    pub fn features(&self) -> Result<Vec<FeatureVector>> {
        self.rows
            .iter()
            .map(|r| FeatureVector::new(r.clone(), self.extractor_id.clone()))
            .collect()
    }

    pub fn write_femb<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<femb>", e);
        out.write_all(FEMB_MAGIC).map_err(io)?;
        out.write_all(&FEMB_VERSION.to_le_bytes()).map_err(io)?;
        out.write_all(&(self.rows.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        for r in &self.rows {
            for v in r {
                out.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        out.write_all(serde_json::to_string(&self.sample_ids)?.as_bytes()).map_err(io)?;
        Ok(())
    }

    pub fn read_femb<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| Error::io("<femb>", e))?;
        if bytes.len() < 16 || &bytes[..4] != FEMB_MAGIC {
            return Err(Error::Format("bad FEMB header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        if word(4) != FEMB_VERSION as usize {
            return Err(Error::Format(format!("unsupported FEMB version {}", word(4))));
        }
        let (count, dim) = (word(8), word(12));
        let body_end = 16 + count * dim * 4;
        if bytes.len() < body_end {
            return Err(Error::Format("truncated FEMB body".into()));
        }
        let rows = (0..count)
            .map(|r| {
                (0..dim)
                    .map(|c| {
                        let o = 16 + (r * dim + c) * 4;
                        f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64
                    })
                    .collect()
            })
            .collect();
        let ids: Vec<String> = serde_json::from_slice(&bytes[body_end..])?;
        Self::new(rows, ids, "precomputed")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_femb(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_femb(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}
