//! Per-texture validation gate.
//!
//! Stages run in a fixed order: tint classification, brightness symmetry,
//! luminance consistency across facial regions, face-vs-neck colour, anomaly
//! score. Region rectangles are normalized UV coordinates with the origin at
//! the top-left of the texture image.

pub mod anomaly;
pub mod image_ops;
pub mod tint;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texture::Texture;
use image_ops::{channel_planes, gaussian_blur, luma_milli, luma_plane, region_mean, region_pixels};

pub use anomaly::{anomaly_score, AnomalyScorer, ExternalScores, MahalanobisScorer};
pub use tint::{classify_tint, TintClass, TintModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub name: String,
    /// `[u0, v0, u1, v1]`
    pub rect: [f64; 4],
}

impl RegionMask {
    pub fn new(name: impl Into<String>, rect: [f64; 4]) -> Result<Self> {
        let m = Self {
            name: name.into(),
            rect,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let [u0, v0, u1, v1] = self.rect;
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(in_unit(u0) && in_unit(v0) && in_unit(u1) && in_unit(v1)) || u0 >= u1 || v0 >= v1 {
            return Err(Error::invalid(format!("region {} has invalid rect {:?}", self.name, self.rect)));
        }
        Ok(())
    }
}

pub fn default_face_regions() -> Vec<RegionMask> {
    [
        ("forehead", [0.35, 0.10, 0.65, 0.25]),
        ("left_cheek", [0.20, 0.40, 0.35, 0.60]),
        ("right_cheek", [0.65, 0.40, 0.80, 0.60]),
        ("nose", [0.45, 0.40, 0.55, 0.55]),
        ("chin", [0.42, 0.70, 0.58, 0.82]),
    ]
    .into_iter()
    .map(|(n, r)| RegionMask::new(n, r).expect("valid default"))
    .collect()
}

pub fn default_neck_region() -> RegionMask {
    RegionMask::new("neck", [0.40, 0.88, 0.60, 0.98]).expect("valid default")
}

/// Left-right symmetric bounding region of the face used for tint features and
/// brightness symmetry.
pub fn default_face_bounds() -> RegionMask {
    RegionMask::new("face", [0.15, 0.05, 0.85, 0.85]).expect("valid default")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaThresholds {
    pub brightness_sym_max: f64,
    pub luminance_l1_max: f64,
    pub neck_color_l1_max: f64,
    pub anomaly_score_max: f64,
    pub blur_sigma: f64,
}

impl Default for QaThresholds {
    fn default() -> Self {
        Self {
            brightness_sym_max: 0.05,
            luminance_l1_max: 0.10,
            neck_color_l1_max: 0.10,
            anomaly_score_max: 4.0,
            blur_sigma: 3.0,
        }
    }
}

impl QaThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.brightness_sym_max,
            self.luminance_l1_max,
            self.neck_color_l1_max,
            self.anomaly_score_max,
            self.blur_sigma,
        ];
        if all.iter().any(|v| v.is_nan() || *v < 0.0) || !self.blur_sigma.is_finite() {
            return Err(Error::invalid("QA thresholds must be non-negative"));
        }
        Ok(())
    }
}

/// `|mean Y(left) - mean Y(right)| / 255` inside `face_region`, split at the
/// vertical midline `u = 0.5`. Exact integer sums keep the value invariant
/// under mirroring.
pub fn brightness_symmetry_error(tex: &Texture, face_region: &RegionMask) -> Result<f64> {
    let (x0, x1, y0, y1) = region_pixels(face_region, tex.width(), tex.height())?;
    let w = tex.width();
    let (mut left, mut right) = ((0u64, 0u64), (0u64, 0u64));
    for x in x0..x1 {
        // twice the pixel-centre coordinate compared to the image width
        let side = (2 * x + 1).cmp(&w);
        for y in y0..y1 {
            let yv = luma_milli(tex.get(x, y));
            match side {
                std::cmp::Ordering::Less => {
                    left.0 += yv;
                    left.1 += 1;
                }
                std::cmp::Ordering::Greater => {
                    right.0 += yv;
                    right.1 += 1;
                }
                std::cmp::Ordering::Equal => {}
            }
        }
    }
    if left.1 == 0 || right.1 == 0 {
        return Err(Error::invalid("face region does not straddle the midline"));
    }
    let ml = left.0 as f64 / (left.1 as f64 * 1000.0);
    let mr = right.0 as f64 / (right.1 as f64 * 1000.0);
    Ok((ml - mr).abs() / 255.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyResult {
    pub value: f64,
    pub passed: bool,
}

/// Largest pairwise difference of blurred mean luma across the regions, / 255.
pub fn luminance_consistency(
    tex: &Texture,
    regions: &[RegionMask],
    thresholds: &QaThresholds,
) -> Result<ConsistencyResult> {
    if regions.len() < 2 {
        return Err(Error::invalid("luminance consistency needs at least two regions"));
    }
    let blurred = gaussian_blur(&luma_plane(tex), thresholds.blur_sigma);
    let means = regions
        .iter()
        .map(|r| region_mean(&blurred, r))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            worst = worst.max((means[i] - means[j]).abs());
        }
    }
    let value = worst / 255.0;
    Ok(ConsistencyResult {
        value,
        passed: value <= thresholds.luminance_l1_max,
    })
}

/// Largest mean-absolute RGB difference between a blurred face region and the
/// blurred neck region, / 255.
pub fn neck_color_consistency(
    tex: &Texture,
    face_regions: &[RegionMask],
    neck: &RegionMask,
    thresholds: &QaThresholds,
) -> Result<ConsistencyResult> {
    if face_regions.is_empty() {
        return Err(Error::invalid("neck colour check needs at least one face region"));
    }
    let planes = channel_planes(tex).map(|p| gaussian_blur(&p, thresholds.blur_sigma));
    let mean_rgb = |r: &RegionMask| -> Result<[f64; 3]> {
        Ok([
            region_mean(&planes[0], r)?,
            region_mean(&planes[1], r)?,
            region_mean(&planes[2], r)?,
        ])
    };
    let neck_rgb = mean_rgb(neck)?;
    let mut worst = 0.0f64;
    for r in face_regions {
        let f = mean_rgb(r)?;
        let l1 = (0..3).map(|c| (f[c] - neck_rgb[c]).abs()).sum::<f64>() / 3.0;
        worst = worst.max(l1);
    }
    let value = worst / 255.0;
    Ok(ConsistencyResult {
        value,
        passed: value <= thresholds.neck_color_l1_max,
    })
}

pub const STAGE_NAMES: [&str; 5] = [
    "tint",
    "brightness_symmetry",
    "luminance_consistency",
    "neck_color",
    "anomaly",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage_name: String,
    /// `None` for skipped stages and stages that errored.
    pub score: Option<f64>,
    pub passed: bool,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub sample_id: String,
    pub stages: Vec<StageResult>,
    pub overall_pass: bool,
}

impl QaReport {
    pub fn executed(&self) -> usize {
        self.stages.iter().filter(|s| !s.skipped).count()
    }
}

/// Everything `validate_texture` needs, fully built.
#[derive(Debug, Clone)]
pub struct QaPipeline {
    pub tint_model: TintModel,
    pub regions: Vec<RegionMask>,
    pub neck: RegionMask,
    pub face_bounds: RegionMask,
    pub thresholds: QaThresholds,
    pub scorer: AnomalyScorer,
    pub short_circuit: bool,
}

type StageOutcome = Result<(f64, bool, Option<String>)>;

pub fn validate_texture(tex: &Texture, sample_id: &str, cfg: &QaPipeline) -> QaReport {
    let th = &cfg.thresholds;
    let stages: [&dyn Fn() -> StageOutcome; 5] = [
        &|| {
            let (class, share) = tint::classify_tint_scored(tex, &cfg.tint_model)?;
            Ok((share, class == TintClass::Normal, Some(format!("{class:?}"))))
        },
        &|| {
            let v = brightness_symmetry_error(tex, &cfg.face_bounds)?;
            Ok((v, v <= th.brightness_sym_max, None))
        },
        &|| {
            let r = luminance_consistency(tex, &cfg.regions, th)?;
            Ok((r.value, r.passed, None))
        },
        &|| {
            let r = neck_color_consistency(tex, &cfg.regions, &cfg.neck, th)?;
            Ok((r.value, r.passed, None))
        },
        &|| {
            let v = anomaly_score(tex, sample_id, &cfg.scorer)?;
            Ok((v, v <= th.anomaly_score_max, None))
        },
    ];
    let mut results = Vec::with_capacity(stages.len());
    let mut failed = false;
    for (name, stage) in STAGE_NAMES.iter().zip(stages) {
        if failed && cfg.short_circuit {
            results.push(StageResult {
                stage_name: name.to_string(),
                score: None,
                passed: false,
                skipped: true,
                detail: None,
            });
            continue;
        }
        let r = match stage() {
            Ok((score, passed, detail)) => StageResult {
                stage_name: name.to_string(),
                score: Some(score),
                passed,
                skipped: false,
                detail,
            },
            Err(e) => StageResult {
                stage_name: name.to_string(),
                score: None,
                passed: false,
                skipped: false,
                detail: Some(format!("error: {e}")),
            },
        };
        failed |= !r.passed;
        results.push(r);
    }
    QaReport {
        sample_id: sample_id.to_string(),
        overall_pass: results.iter().filter(|s| !s.skipped).all(|s| s.passed),
        stages: results,
    }
}

/// Serializable QA configuration section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaConfig {
    pub regions: Vec<RegionMask>,
    pub neck: RegionMask,
    pub face_bounds: RegionMask,
    pub thresholds: QaThresholds,
    pub short_circuit: bool,
    pub tint: TintConfig,
    pub anomaly: AnomalyConfig,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            regions: default_face_regions(),
            neck: default_neck_region(),
            face_bounds: default_face_bounds(),
            thresholds: QaThresholds::default(),
            short_circuit: true,
            tint: TintConfig::default(),
            anomaly: AnomalyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TintConfig {
    /// Curation set stored as a [`TintModel`] JSON file.
    File { path: String },
    /// Flat-colour curation set around a base skin tone.
    Synthetic {
        base: [u8; 3],
        n: usize,
        k: usize,
        seed: u64,
    },
}

impl Default for TintConfig {
    fn default() -> Self {
        TintConfig::Synthetic {
            base: [200, 160, 135],
            n: 80,
            k: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnomalyConfig {
    /// Fit on reference textures supplied by the caller.
    Mahalanobis { shrinkage: f64 },
    /// JSON-lines `{sample_id, score}` file.
    External { path: String },
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig::Mahalanobis { shrinkage: 0.1 }
    }
}

impl QaConfig {
    /// Builds the pipeline. Relative paths resolve against `base_dir`; the
    /// Mahalanobis scorer is fitted on `reference`.
    pub fn build(&self, base_dir: &Path, reference: &[Texture]) -> Result<QaPipeline> {
        self.thresholds.validate()?;
        for r in self.regions.iter().chain([&self.neck, &self.face_bounds]) {
            r.validate()?;
        }
        let tint_model = match &self.tint {
            TintConfig::File { path } => TintModel::load(&base_dir.join(path))?,
            TintConfig::Synthetic { base, n, k, seed } => {
                TintModel::synthetic_curation(*base, *n, *k, *seed, self.face_bounds.clone())?
            }
        };
        let scorer = match &self.anomaly {
            AnomalyConfig::Mahalanobis { shrinkage } => {
                let mut m = MahalanobisScorer::new(*shrinkage)?;
                m.fit(reference)?;
                AnomalyScorer::Mahalanobis(m)
            }
            AnomalyConfig::External { path } => AnomalyScorer::External(ExternalScores::load(&base_dir.join(path))?),
        };
        Ok(QaPipeline {
            tint_model,
            regions: self.regions.clone(),
            neck: self.neck.clone(),
            face_bounds: self.face_bounds.clone(),
            thresholds: self.thresholds,
            scorer,
            short_circuit: self.short_circuit,
        })
    }
}
