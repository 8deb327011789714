//! Latent vectors, attribute directions and the edit arithmetic.
//!
//! An edit moves an intermediate latent `w` along a unit attribute normal by a
//! step that shrinks as `w` approaches (or crosses) the attribute's decision
//! boundary, then pulls the result toward the mean latent with truncation:
//!
//! ```text
//! s      = normal . w + bias
//! alpha  = alpha_max * clamp((s_cap - s) / (s_cap - s_floor), 0, 1)
//! w'     = w_mean + psi * ((w + alpha * normal) - w_mean)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LATENT_DIM: usize = 512;

const LVEC_MAGIC: &[u8; 4] = b"LVEC";
const LVEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    Z,
    W,
}

impl Space {
    fn tag(self) -> u8 {
        match self {
            Space::Z => 0,
            Space::W => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Space::Z),
            1 => Ok(Space::W),
            t => Err(Error::Format(format!("unknown LVEC space tag {t}"))),
        }
    }
}

/// A point in the generator's input (`Z`) or intermediate (`W`) latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVec {
    values: Vec<f64>,
    space: Space,
}

impl LatentVec {
    pub fn new(values: Vec<f64>, space: Space) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("latent vector must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("latent entry {i} is not finite")));
        }
        Ok(Self { values, space })
    }

    pub fn zeros(dim: usize, space: Space) -> Self {
        Self {
            values: vec![0.0; dim],
            space,
        }
    }

    /// Standard normal draw in the given space.
    pub fn sample_normal<R: rand::Rng + ?Sized>(dim: usize, space: Space, rng: &mut R) -> Self {
        let values = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        Self { values, space }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.values).sqrt()
    }

    pub fn distance(&self, other: &LatentVec) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            space: self.space,
        }
    }

    pub(crate) fn expect_dim(&self, dim: usize, what: &str) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::invalid(format!(
                "{what}: dimension mismatch ({} vs {dim})",
                self.dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_space(&self, space: Space, what: &str) -> Result<()> {
        if self.space != space {
            return Err(Error::invalid(format!(
                "{what}: expected a {space:?}-space latent, got {:?}",
                self.space
            )));
        }
        Ok(())
    }

    /// Encodes as LVEC. Values are stored as little-endian f32.
    pub fn write_lvec<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(LVEC_MAGIC)?;
        out.write_all(&LVEC_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim() as u32).to_le_bytes())?;
        out.write_all(&[self.space.tag()])?;
        for v in &self.values {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_lvec_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(13 + 4 * self.dim());
        self.write_lvec(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_lvec<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; 13];
        input
            .read_exact(&mut header)
            .map_err(|e| Error::Format(format!("truncated LVEC header: {e}")))?;
        if &header[0..4] != LVEC_MAGIC {
            return Err(Error::Format("bad LVEC magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != LVEC_VERSION {
            return Err(Error::Format(format!("unsupported LVEC version {version}")));
        }
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let space = Space::from_tag(header[12])?;
        let mut body = vec![0u8; dim * 4];
        input
            .read_exact(&mut body)
            .map_err(|e| Error::Format(format!("truncated LVEC body: {e}")))?;
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        LatentVec::new(values, space)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_lvec(bytes.as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_lvec_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub n_samples: usize,
    pub accuracy: f64,
    /// Norm of the raw SVM weight vector before normalization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_norm: Option<f64>,
}

/// Unit hyperplane normal plus offset; the axis along which an attribute is edited.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDirection {
    normal: Vec<f64>,
    bias: f64,
    pub attribute_name: String,
    pub train_meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct DirectionFile {
    attribute_name: String,
    dim: usize,
    normal: Vec<f64>,
    bias: f64,
    train_meta: TrainMeta,
}

impl AttributeDirection {
    /// Builds a direction from an arbitrary (non-zero) weight vector; both the
    /// weight and the bias are divided by the weight norm.
    pub fn from_weights(
        weights: &[f64],
        bias: f64,
        attribute_name: impl Into<String>,
        train_meta: TrainMeta,
    ) -> Result<Self> {
        let norm = weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) || !bias.is_finite() {
            return Err(Error::DegenerateData(
                "direction weights have zero or non-finite norm".into(),
            ));
        }
        if !(0.0..=1.0).contains(&train_meta.accuracy) {
            return Err(Error::invalid("train accuracy outside [0,1]"));
        }
        Ok(Self {
            normal: weights.iter().map(|v| v / norm).collect(),
            bias: bias / norm,
            attribute_name: attribute_name.into(),
            train_meta,
        })
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn flipped(&self) -> Self {
        Self {
            normal: self.normal.iter().map(|v| -v).collect(),
            bias: -self.bias,
            attribute_name: self.attribute_name.clone(),
            train_meta: self.train_meta.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DirectionFile {
            attribute_name: self.attribute_name.clone(),
            dim: self.dim(),
            normal: self.normal.clone(),
            bias: self.bias,
            train_meta: self.train_meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DirectionFile = serde_json::from_str(text)?;
        if file.normal.len() != file.dim {
            return Err(Error::Format(format!(
                "direction dim {} does not match normal length {}",
                file.dim,
                file.normal.len()
            )));
        }
        let norm = file.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Format(format!("direction normal is not unit (norm {norm})")));
        }
        // re-normalize so the stored unit invariant holds to machine precision
        Self::from_weights(&file.normal, file.bias * norm, file.attribute_name, file.train_meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationConfig {
    psi: f64,
    w_mean: LatentVec,
}

impl TruncationConfig {
    pub fn new(psi: f64, w_mean: LatentVec) -> Result<Self> {
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::invalid(format!("psi {psi} outside [0,1]")));
        }
        w_mean.expect_space(Space::W, "w_mean")?;
        Ok(Self { psi, w_mean })
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn w_mean(&self) -> &LatentVec {
        &self.w_mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub alpha_max: f64,
    pub s_floor: f64,
    pub s_cap: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            alpha_max: 3.0,
            s_floor: -3.0,
            s_cap: 1.0,
        }
    }
}

impl StepPolicy {
    pub fn new(alpha_max: f64, s_floor: f64, s_cap: f64) -> Result<Self> {
        let p = Self {
            alpha_max,
            s_floor,
            s_cap,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_max.is_finite() && self.alpha_max > 0.0) {
            return Err(Error::invalid("alpha_max must be finite and > 0"));
        }
        if !(self.s_floor.is_finite() && self.s_cap.is_finite() && self.s_cap > self.s_floor) {
            return Err(Error::invalid("step policy requires finite s_floor < s_cap"));
        }
        Ok(())
    }
}

/// Anything that maps `Z` latents to `W` latents.
pub trait LatentMap {
    fn latent_dim(&self) -> usize;
    fn map(&self, z: &LatentVec) -> Result<LatentVec>;
}

/// Adapts a closure into a [`LatentMap`].
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F> FnMap<F>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LatentMap for FnMap<F>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn map(&self, z: &LatentVec) -> Result<LatentVec> {
        z.expect_dim(self.dim, "map")?;
        LatentVec::new((self.f)(z.values()), Space::W)
    }
}

/// Mean of `n` mapped standard-normal draws from a ChaCha8 stream seeded with `seed`.
pub fn estimate_w_mean<M: LatentMap + ?Sized>(generator: &M, n: usize, seed: u64) -> Result<LatentVec> {
    if n == 0 {
        return Err(Error::invalid("estimate_w_mean needs n >= 1"));
    }
    let dim = generator.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; dim];
    for _ in 0..n {
        let z = LatentVec::sample_normal(dim, Space::Z, &mut rng);
        let w = generator.map(&z)?;
        w.expect_dim(dim, "estimate_w_mean")?;
        for (a, v) in acc.iter_mut().zip(w.values()) {
            *a += v;
        }
    }
    let inv = 1.0 / n as f64;
    LatentVec::new(acc.into_iter().map(|v| v * inv).collect(), Space::W)
}

pub fn manipulate(w: &LatentVec, d: &AttributeDirection, alpha: f64) -> Result<LatentVec> {
    w.expect_space(Space::W, "manipulate")?;
    w.expect_dim(d.dim(), "manipulate")?;
    if !alpha.is_finite() {
        return Err(Error::invalid("alpha must be finite"));
    }
    let values = w
        .values()
        .iter()
        .zip(d.normal())
        .map(|(x, n)| x + alpha * n)
        .collect();
    Ok(w.with_values(values))
}

pub fn truncate(w: &LatentVec, cfg: &TruncationConfig) -> Result<LatentVec> {
    w.expect_space(Space::W, "truncate")?;
    w.expect_dim(cfg.w_mean.dim(), "truncate")?;
    let psi = cfg.psi;
    let values = w
        .values()
        .iter()
        .zip(cfg.w_mean.values())
        .map(|(x, m)| m + psi * (x - m))
        .collect();
    Ok(w.with_values(values))
}

pub fn signed_distance(w: &LatentVec, d: &AttributeDirection) -> Result<f64> {
    w.expect_dim(d.dim(), "signed_distance")?;
    Ok(w.dot(d.normal()) + d.bias())
}

pub fn adaptive_step(s: f64, policy: &StepPolicy) -> f64 {
    let ramp = (policy.s_cap - s) / (policy.s_cap - policy.s_floor);
    policy.alpha_max * ramp.clamp(0.0, 1.0)
}

/// Distance-scaled step along `d` followed by truncation.
pub fn edit(
    w: &LatentVec,
    d: &AttributeDirection,
    policy: &StepPolicy,
    cfg: &TruncationConfig,
) -> Result<LatentVec> {
    Ok(edit_with_step(w, d, policy, cfg)?.0)
}

/// Like [`edit`] but also returns the effective step that was applied.
pub fn edit_with_step(
    w: &LatentVec,
    d: &AttributeDirection,
    policy: &StepPolicy,
    cfg: &TruncationConfig,
) -> Result<(LatentVec, f64)> {
    policy.validate()?;
    let s = signed_distance(w, d)?;
    let alpha = adaptive_step(s, policy);
    let moved = manipulate(w, d, alpha)?;
    Ok((truncate(&moved, cfg)?, alpha))
}
