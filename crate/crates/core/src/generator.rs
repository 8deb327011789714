//! Texture generators: a deterministic toy stand-in and an adapter over
//! precomputed `(z, w, texture)` exports.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::latent::{LatentMap, LatentVec, Space};
use crate::texture::Texture;

const BASIS_COUNT: usize = 8;

/// Names of the toy synthesis axes, in basis order.
pub const TOY_ATTRIBUTES: [&str; BASIS_COUNT] =
    ["brightness", "warmth", "tan", "gradient", "eyes", "mouth", "jaw", "brows"];
const BASE_SKIN: [f32; 3] = [204.0, 160.0, 134.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Toy {
        #[serde(default = "default_dim")]
        latent_dim: usize,
        #[serde(default = "default_size")]
        texture_size: [usize; 2],
        seed: u64,
    },
    Corpus {
        manifest: PathBuf,
        #[serde(default = "default_size")]
        texture_size: [usize; 2],
    },
}

fn default_dim() -> usize {
    crate::latent::DEFAULT_LATENT_DIM
}

fn default_size() -> [usize; 2] {
    [256, 256]
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Toy {
            latent_dim: default_dim(),
            texture_size: default_size(),
            seed: 0,
        }
    }
}

fn check_texture_size(size: [usize; 2]) -> Result<()> {
    for s in size {
        if !s.is_power_of_two() || !(64..=1024).contains(&s) {
            return Err(Error::invalid(format!(
                "texture side {s} must be a power of two in [64, 1024]"
            )));
        }
    }
    Ok(())
}

/// An immutable generator. Construct once and share.
#[derive(Debug, Clone)]
pub enum Generator {
    Toy(ToyGenerator),
    Corpus(CorpusGenerator),
}

impl Generator {
    pub fn from_config(cfg: &GeneratorConfig) -> Result<Self> {
        match cfg {
            GeneratorConfig::Toy {
                latent_dim,
                texture_size,
                seed,
            } => Ok(Generator::Toy(ToyGenerator::new(*latent_dim, *texture_size, *seed)?)),
            GeneratorConfig::Corpus {
                manifest,
                texture_size,
            } => Ok(Generator::Corpus(CorpusGenerator::open(manifest, *texture_size)?)),
        }
    }

    pub fn texture_size(&self) -> [usize; 2] {
        match self {
            Generator::Toy(g) => g.texture_size,
            Generator::Corpus(g) => g.texture_size,
        }
    }

    pub fn map_latent(&self, z: &LatentVec) -> Result<LatentVec> {
        z.expect_space(Space::Z, "map_latent")?;
        z.expect_dim(self.latent_dim(), "map_latent")?;
        match self {
            Generator::Toy(g) => Ok(g.map(z)),
            Generator::Corpus(g) => g.lookup_w(z),
        }
    }

    pub fn synthesize(&self, w: &LatentVec) -> Result<Texture> {
        w.expect_space(Space::W, "synthesize")?;
        w.expect_dim(self.latent_dim(), "synthesize")?;
        match self {
            Generator::Toy(g) => Ok(g.synthesize(w)),
            Generator::Corpus(g) => g.lookup_texture(w),
        }
    }

    /// Latents only, without synthesis.
    ///
    /// Toy draws use one ChaCha8 stream per sample index so any index range can
    /// be produced independently; the corpus kind takes a seeded permutation.
    pub fn sample_latents(&self, n: usize, seed: u64) -> Result<Vec<LatentSample>> {
        match self {
            Generator::Toy(g) => (0..n)
                .map(|i| {
                    let z = toy_z(g.latent_dim, seed, i as u64);
                    Ok(LatentSample {
                        sample_id: format!("s{i:06}"),
                        w: g.map(&z),
                        z,
                    })
                })
                .collect(),
            Generator::Corpus(g) => {
                if n > g.entries.len() {
                    return Err(Error::Capacity {
                        source_name: "corpus".into(),
                        requested: n,
                        available: g.entries.len(),
                    });
                }
                let mut order: Vec<usize> = (0..g.entries.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                Ok(order[..n]
                    .iter()
                    .map(|&i| {
                        let e = &g.entries[i];
                        LatentSample {
                            sample_id: e.sample_id.clone(),
                            z: e.z.clone(),
                            w: e.w.clone(),
                        }
                    })
                    .collect())
            }
        }
    }

    pub fn sample_batch(&self, n: usize, seed: u64) -> Result<Vec<SampleRecord>> {
        self.sample_latents(n, seed)?
            .into_iter()
            .map(|s| {
                let texture = self.synthesize(&s.w)?;
                Ok(SampleRecord {
                    sample_id: s.sample_id,
                    z: s.z,
                    w: s.w,
                    texture,
                })
            })
            .collect()
    }
}

impl LatentMap for Generator {
    fn latent_dim(&self) -> usize {
        match self {
            Generator::Toy(g) => g.latent_dim,
            Generator::Corpus(g) => g.latent_dim,
        }
    }

    fn map(&self, z: &LatentVec) -> Result<LatentVec> {
        self.map_latent(z)
    }
}

fn toy_z(dim: usize, seed: u64, index: u64) -> LatentVec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    LatentVec::sample_normal(dim, Space::Z, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub sample_id: String,
    pub z: LatentVec,
    pub w: LatentVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub z: LatentVec,
    pub w: LatentVec,
    pub texture: Texture,
}

/// Seeded `w = A tanh(z) + b` mapping (A orthogonal) and a synthesis that mixes a fixed bank
/// of smooth, left-right symmetric basis images by `tanh` of projections of `w`.
#[derive(Debug, Clone)]
pub struct ToyGenerator {
    latent_dim: usize,
    texture_size: [usize; 2],
    seed: u64,
    weights: Vec<f64>,
    bias: Vec<f64>,
    projections: Vec<Vec<f64>>,
    bases: Vec<Vec<[f32; 3]>>,
}

impl ToyGenerator {
    pub fn new(latent_dim: usize, texture_size: [usize; 2], seed: u64) -> Result<Self> {
        if latent_dim < 2 {
            return Err(Error::invalid("latent_dim must be >= 2"));
        }
        check_texture_size(texture_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_70_u64);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let gaussian = DMatrix::from_fn(latent_dim, latent_dim, |_, _| normal());
        let weights = haar_orthogonal(gaussian).transpose().as_slice().to_vec();
        let bias = (0..latent_dim).map(|_| 0.5 * normal()).collect();
        let projections = (0..BASIS_COUNT)
            .map(|_| {
                let p: Vec<f64> = (0..latent_dim).map(|_| normal()).collect();
                let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                p.into_iter().map(|v| v / n).collect()
            })
            .collect();
        Ok(Self {
            latent_dim,
            texture_size,
            seed,
            weights,
            bias,
            projections,
            bases: basis_bank(texture_size),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row-major `latent_dim x latent_dim` matrix and offset of the mapping.
    pub fn affine_params(&self) -> (&[f64], &[f64]) {
        (&self.weights, &self.bias)
    }

    fn map(&self, z: &LatentVec) -> LatentVec {
        let d = self.latent_dim;
        let squashed: Vec<f64> = z.values().iter().map(|v| v.tanh()).collect();
        let values = (0..d)
            .map(|r| {
                let row = &self.weights[r * d..(r + 1) * d];
                self.bias[r] + row.iter().zip(&squashed).map(|(a, t)| a * t).sum::<f64>()
            })
            .collect();
        LatentVec::new(values, Space::W).expect("finite by construction")
    }

    /// Unit latent axis whose projection drives the named synthesis basis.
    pub fn attribute_axis(&self, name: &str) -> Option<&[f64]> {
        let k = TOY_ATTRIBUTES.iter().position(|a| *a == name)?;
        Some(&self.projections[k])
    }

    /// Basis mixing coefficients in (-1, 1).
    pub fn coefficients(&self, w: &LatentVec) -> [f64; BASIS_COUNT] {
        let mut c = [0.0; BASIS_COUNT];
        for (ck, p) in c.iter_mut().zip(&self.projections) {
            *ck = (1.5 * w.dot(p)).tanh();
        }
        c
    }

    fn synthesize(&self, w: &LatentVec) -> Texture {
        let c = self.coefficients(w);
        let c32: Vec<f32> = c.iter().map(|&v| v as f32).collect();
        let [width, height] = self.texture_size;
        let mut pixels = Vec::with_capacity(width * height * 3);
        for px in 0..width * height {
            let mut rgb = BASE_SKIN;
            for (basis, &ck) in self.bases.iter().zip(&c32) {
                let b = basis[px];
                rgb[0] += ck * b[0];
                rgb[1] += ck * b[1];
                rgb[2] += ck * b[2];
            }
            pixels.extend(rgb.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
        let mut t = Texture::new(width, height, pixels).expect("sized by construction");
        t.uv_layout_id = format!("toy-{}", crate::texture::DEFAULT_UV_LAYOUT);
        t
    }
}

/// Orthogonal factor of a Gaussian matrix with the sign convention that
/// makes it Haar distributed.
fn haar_orthogonal(gaussian: DMatrix<f64>) -> DMatrix<f64> {
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

fn blob(u: f32, v: f32, cu: f32, cv: f32, su: f32, sv: f32) -> f32 {
    let du = (u - cu) / su;
    let dv = (v - cv) / sv;
    (-0.5 * (du * du + dv * dv)).exp()
}

fn basis_bank(size: [usize; 2]) -> Vec<Vec<[f32; 3]>> {
    let [width, height] = size;
    let mut bank = vec![Vec::with_capacity(width * height); BASIS_COUNT];
    for y in 0..height {
        for x in 0..width {
            let u = (x as f32 + 0.5) / width as f32;
            let v = (y as f32 + 0.5) / height as f32;
            // symmetric about u = 0.5
            let m = 0.5 - (u - 0.5).abs();
            let um = 0.5 - m;
            let eyes = blob(um, v, 0.15, 0.33, 0.04, 0.03);
            let brows = blob(um, v, 0.15, 0.27, 0.05, 0.012);
            let mouth = blob(u, v, 0.5, 0.64, 0.06, 0.025);
            let jaw = blob(0.0, v, 0.0, 0.72, 1.0, 0.05) * blob(u, 0.0, 0.5, 0.0, 0.22, 1.0);
            let grad = v - 0.5;
            let entries: [[f32; 3]; BASIS_COUNT] = [
                [22.0, 22.0, 22.0],
                [12.0, 0.0, -12.0],
                [6.0, -8.0, -10.0],
                [10.0 * grad, 10.0 * grad, 9.0 * grad],
                [-40.0 * eyes, -40.0 * eyes, -35.0 * eyes],
                [-10.0 * mouth, -30.0 * mouth, -25.0 * mouth],
                [-16.0 * jaw, -16.0 * jaw, -13.0 * jaw],
                [-30.0 * brows, -30.0 * brows, -28.0 * brows],
            ];
            for (b, e) in bank.iter_mut().zip(entries) {
                b.push(e);
            }
        }
    }
    bank
}

/// One line of a corpus manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub sample_id: String,
    pub z_path: String,
    pub w_path: String,
    pub texture_path: String,
}

#[derive(Debug, Clone)]
struct LoadedEntry {
    sample_id: String,
    z: LatentVec,
    w: LatentVec,
    texture_path: PathBuf,
}

fn latent_key(v: &LatentVec) -> Vec<u32> {
    v.values().iter().map(|x| (*x as f32).to_bits()).collect()
}

/// Looks up precomputed exports by exact (f32) latent match.
#[derive(Debug, Clone)]
pub struct CorpusGenerator {
    latent_dim: usize,
    texture_size: [usize; 2],
    entries: Vec<LoadedEntry>,
    by_z: HashMap<Vec<u32>, usize>,
    by_w: HashMap<Vec<u32>, usize>,
}

impl CorpusGenerator {
    pub fn open(manifest: &Path, texture_size: [usize; 2]) -> Result<Self> {
        check_texture_size(texture_size)?;
        let root = manifest.parent().unwrap_or(Path::new("."));
        let records = read_corpus_manifest(manifest)?;
        let mut entries = Vec::with_capacity(records.len());
        let mut by_z = HashMap::new();
        let mut by_w = HashMap::new();
        let mut ids = std::collections::HashSet::new();
        let mut latent_dim = None;
        for rec in records {
            if !ids.insert(rec.sample_id.clone()) {
                return Err(Error::Format(format!("duplicate sample_id {}", rec.sample_id)));
            }
            let z = LatentVec::load(&root.join(&rec.z_path))?;
            let w = LatentVec::load(&root.join(&rec.w_path))?;
            z.expect_space(Space::Z, &rec.z_path)?;
            w.expect_space(Space::W, &rec.w_path)?;
            let dim = *latent_dim.get_or_insert(z.dim());
            z.expect_dim(dim, &rec.z_path)?;
            w.expect_dim(dim, &rec.w_path)?;
            by_z.insert(latent_key(&z), entries.len());
            by_w.insert(latent_key(&w), entries.len());
            entries.push(LoadedEntry {
                sample_id: rec.sample_id,
                z,
                w,
                texture_path: root.join(&rec.texture_path),
            });
        }
        let latent_dim = latent_dim.ok_or_else(|| Error::Format("empty corpus manifest".into()))?;
        if latent_dim < 2 {
            return Err(Error::invalid("latent_dim must be >= 2"));
        }
        Ok(Self {
            latent_dim,
            texture_size,
            entries,
            by_z,
            by_w,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup_w(&self, z: &LatentVec) -> Result<LatentVec> {
        self.by_z
            .get(&latent_key(z))
            .map(|&i| self.entries[i].w.clone())
            .ok_or_else(|| Error::LookupMiss("z not present in corpus".into()))
    }

    fn lookup_texture(&self, w: &LatentVec) -> Result<Texture> {
        let i = *self
            .by_w
            .get(&latent_key(w))
            .ok_or_else(|| Error::LookupMiss("w not present in corpus".into()))?;
        let t = Texture::load_png(&self.entries[i].texture_path)?;
        if [t.width(), t.height()] != self.texture_size {
            return Err(Error::Format(format!(
                "{} is {}x{}, expected {:?}",
                self.entries[i].texture_path.display(),
                t.width(),
                t.height(),
                self.texture_size
            )));
        }
        Ok(t)
    }
}

pub fn read_corpus_manifest(path: &Path) -> Result<Vec<CorpusEntry>> {
    read_jsonl(path)
}

/// Writes samples as `<dir>/<id>.z.lvec`, `<id>.w.lvec`, `<id>.png` and a
/// `corpus.jsonl` manifest; returns the manifest path.
pub fn write_corpus(dir: &Path, records: &[SampleRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::with_capacity(records.len());
    for r in records {
        let entry = CorpusEntry {
            sample_id: r.sample_id.clone(),
            z_path: format!("{}.z.lvec", r.sample_id),
            w_path: format!("{}.w.lvec", r.sample_id),
            texture_path: format!("{}.png", r.sample_id),
        };
        r.z.save(&dir.join(&entry.z_path))?;
        r.w.save(&dir.join(&entry.w_path))?;
        r.texture.save_png(&dir.join(&entry.texture_path))?;
        manifest.push(entry);
    }
    let path = dir.join("corpus.jsonl");
    write_jsonl(&path, &manifest)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicTarget {
    pub bins: Vec<(String, f64)>,
    pub tolerance: f64,
}

impl DemographicTarget {
    pub fn new(bins: Vec<(String, f64)>, tolerance: f64) -> Result<Self> {
        let t = Self { bins, tolerance };
        t.validate()?;
        Ok(t)
    }

    /// Target proportional to raw counts.
    pub fn from_counts(counts: &[(&str, u64)], tolerance: f64) -> Result<Self> {
        let total: u64 = counts.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return Err(Error::invalid("counts sum to zero"));
        }
        Self::new(
            counts
                .iter()
                .map(|(g, c)| (g.to_string(), *c as f64 / total as f64))
                .collect(),
            tolerance,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::invalid("demographic target has no bins"));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::invalid("tolerance must lie in (0,1)"));
        }
        let mut seen = std::collections::HashSet::new();
        for (g, f) in &self.bins {
            if !seen.insert(g) {
                return Err(Error::invalid(format!("duplicate group {g}")));
            }
            if !(f.is_finite() && *f >= 0.0) {
                return Err(Error::invalid(format!("bad fraction for {g}")));
            }
        }
        let sum: f64 = self.bins.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` over non-negative real `shares`
/// (which must sum to `total`). Ties on remainder go to the earlier index.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shares.iter().map(|s| s.max(0.0).floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Per-group generation quotas that move `current` toward `target` at a final
/// corpus size of `n_total`.
///
/// Groups already at or above their ideal final count receive nothing; the
/// remaining budget is apportioned to the others in proportion to their
/// deficit, with largest-remainder rounding.
pub fn plan_demographic_batch(
    current: &BTreeMap<String, usize>,
    target: &DemographicTarget,
    n_total: usize,
) -> Result<BTreeMap<String, usize>> {
    target.validate()?;
    for g in current.keys() {
        if !target.bins.iter().any(|(name, _)| name == g) {
            return Err(Error::invalid(format!("group {g} is not in the target")));
        }
    }
    let have: Vec<usize> = target
        .bins
        .iter()
        .map(|(g, _)| current.get(g).copied().unwrap_or(0))
        .collect();
    let existing: usize = have.iter().sum();
    if existing > n_total {
        return Err(Error::invalid(format!(
            "current counts ({existing}) exceed n_total ({n_total})"
        )));
    }
    let remaining = n_total - existing;
    let deficits: Vec<f64> = target
        .bins
        .iter()
        .zip(&have)
        .map(|((_, f), &c)| (f * n_total as f64 - c as f64).max(0.0))
        .collect();
    let deficit_sum: f64 = deficits.iter().sum();
    let quotas = if remaining == 0 {
        vec![0; deficits.len()]
    } else if deficit_sum <= 0.0 {
        return Err(Error::Infeasible {
            groups: target.bins.iter().map(|(g, _)| g.clone()).collect(),
        });
    } else {
        let shares: Vec<f64> = deficits
            .iter()
            .map(|d| d / deficit_sum * remaining as f64)
            .collect();
        largest_remainder(&shares, remaining)
    };
    if n_total > 0 {
        let offending: Vec<String> = target
            .bins
            .iter()
            .zip(have.iter().zip(&quotas))
            .filter(|((_, f), (&c, &q))| {
                ((c + q) as f64 / n_total as f64 - f).abs() > target.tolerance
            })
            .map(|((g, _), _)| g.clone())
            .collect();
        if !offending.is_empty() {
            return Err(Error::Infeasible { groups: offending });
        }
    }
    Ok(target
        .bins
        .iter()
        .zip(quotas)
        .map(|((g, _), q)| (g.clone(), q))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Generator {
        Generator::from_config(&GeneratorConfig::Toy {
            latent_dim: 32,
            texture_size: [64, 64],
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn map_is_deterministic_and_zero_maps_to_bias() {
        let g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = LatentVec::sample_normal(32, Space::Z, &mut rng);
        assert_eq!(g.map_latent(&z).unwrap(), g.map_latent(&z).unwrap());
        let Generator::Toy(t) = &g else { unreachable!() };
        let w0 = g.map_latent(&LatentVec::zeros(32, Space::Z)).unwrap();
        assert_eq!(w0.values(), t.affine_params().1);
    }

    #[test]
    fn map_rejects_w_and_wrong_dim() {
        let g = toy();
        assert!(g.map_latent(&LatentVec::zeros(32, Space::W)).is_err());
        assert!(g.map_latent(&LatentVec::zeros(31, Space::Z)).is_err());
        assert!(g.synthesize(&LatentVec::zeros(32, Space::Z)).is_err());
    }

    #[test]
    fn synthesis_is_deterministic_sized_and_smooth() {
        let g = toy();
        let s = &g.sample_batch(1, 3).unwrap()[0];
        let a = g.synthesize(&s.w).unwrap();
        assert_eq!(a, g.synthesize(&s.w).unwrap());
        assert_eq!((a.width(), a.height()), (64, 64));
        let mut bumped = s.w.values().to_vec();
        bumped[0] += 1e-6;
        let b = g.synthesize(&LatentVec::new(bumped, Space::W).unwrap()).unwrap();
        let mad: f64 = a
            .pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (*x as f64 - *y as f64).abs())
            .sum::<f64>()
            / a.pixels().len() as f64;
        assert!(mad <= 1.0);
    }

    #[test]
    fn toy_textures_vary_with_w() {
        let g = toy();
        let batch = g.sample_batch(4, 11).unwrap();
        assert_ne!(batch[0].texture, batch[1].texture);
    }

    #[test]
    fn sample_batch_ids_and_determinism() {
        let g = toy();
        assert!(g.sample_batch(0, 1).unwrap().is_empty());
        let a = g.sample_batch(5, 7).unwrap();
        assert_eq!(a, g.sample_batch(5, 7).unwrap());
        assert_eq!(a[3].sample_id, "s000003");
        // prefix stability: per-index streams
        assert_eq!(g.sample_latents(3, 7).unwrap()[2].z, a[2].z);
    }

    #[test]
    fn sample_batch_z_mean_is_centered() {
        let g = toy();
        let batch = g.sample_latents(100, 99).unwrap();
        for j in 0..32 {
            let m: f64 = batch.iter().map(|s| s.z.values()[j]).sum::<f64>() / 100.0;
            assert!(m.abs() < 4.0 / 10.0, "coord {j} mean {m}");
        }
    }

    #[test]
    fn corpus_roundtrip_and_lookup_miss() {
        let g = toy();
        let recs = g.sample_batch(6, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(dir.path(), &recs).unwrap();
        let c = Generator::from_config(&GeneratorConfig::Corpus {
            manifest,
            texture_size: [64, 64],
        })
        .unwrap();
        let stored_w = LatentVec::read_lvec(recs[2].w.to_lvec_bytes().as_slice()).unwrap();
        assert_eq!(c.map_latent(&recs[2].z).unwrap(), stored_w);
        assert_eq!(c.synthesize(&recs[4].w).unwrap().pixels(), recs[4].texture.pixels());
        let miss = LatentVec::zeros(32, Space::Z);
        assert!(matches!(c.map_latent(&miss), Err(Error::LookupMiss(_))));
        let picked = c.sample_batch(4, 1).unwrap();
        assert_eq!(picked, c.sample_batch(4, 1).unwrap());
        assert!(matches!(c.sample_latents(7, 1), Err(Error::Capacity { .. })));
    }

    #[test]
    fn rejects_bad_texture_sizes() {
        assert!(ToyGenerator::new(8, [100, 64], 0).is_err());
        assert!(ToyGenerator::new(8, [32, 32], 0).is_err());
        assert!(ToyGenerator::new(1, [64, 64], 0).is_err());
    }

    #[test]
    fn demographic_even_split() {
        let t = DemographicTarget::new(vec![("a".into(), 0.5), ("b".into(), 0.5)], 0.05).unwrap();
        let q = plan_demographic_batch(&BTreeMap::new(), &t, 10).unwrap();
        assert_eq!(q["a"], 5);
        assert_eq!(q["b"], 5);
    }

    #[test]
    fn demographic_already_on_target() {
        let t = DemographicTarget::new(vec![("a".into(), 0.25), ("b".into(), 0.75)], 0.05).unwrap();
        let cur = BTreeMap::from([("a".to_string(), 25), ("b".to_string(), 75)]);
        let q = plan_demographic_batch(&cur, &t, 100).unwrap();
        assert!(q.values().all(|&v| v == 0));
    }

    #[test]
    fn demographic_overfull_group_redistributes() {
        let t = DemographicTarget::new(vec![("a".into(), 0.5), ("b".into(), 0.5)], 0.1).unwrap();
        let cur = BTreeMap::from([("a".to_string(), 55)]);
        let q = plan_demographic_batch(&cur, &t, 100).unwrap();
        assert_eq!(q["a"], 0);
        assert_eq!(q["b"], 45);
    }

    #[test]
    fn demographic_infeasible_reports_groups() {
        let t = DemographicTarget::new(vec![("a".into(), 0.5), ("b".into(), 0.5)], 0.05).unwrap();
        let cur = BTreeMap::from([("a".to_string(), 90)]);
        match plan_demographic_batch(&cur, &t, 100) {
            Err(Error::Infeasible { groups }) => assert_eq!(groups, vec!["a".to_string(), "b".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    proptest::proptest! {
        #[test]
        fn quotas_fill_remaining(c in proptest::collection::vec(0usize..30, 3), extra in 0usize..200) {
            let t = DemographicTarget::new(vec![("x".into(), 0.2), ("y".into(), 0.3), ("z".into(), 0.5)], 0.99).unwrap();
            let cur: BTreeMap<String, usize> = ["x", "y", "z"].iter().zip(&c).map(|(g, &n)| (g.to_string(), n)).collect();
            let n_total = c.iter().sum::<usize>() + extra;
            if let Ok(q) = plan_demographic_batch(&cur, &t, n_total) {
                proptest::prop_assert_eq!(q.values().sum::<usize>(), extra);
            }
        }
    }
}
