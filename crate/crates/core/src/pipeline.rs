//! End-to-end orchestration: generate, edit, validate, score and assemble
//! pedestrian instance manifests. Stages exchange data through files only.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::direction::{learn_direction_pipeline, PlantedLabels, SvmConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig, LatentSample};
use crate::jsonl::write_jsonl;
use crate::latent::{
    adaptive_step, estimate_w_mean, manipulate, signed_distance, truncate, AttributeDirection, LatentVec, StepPolicy,
    TruncationConfig,
};
use crate::metrics::{
    corpus_stats, extract_features, fid, kid, precision_recall, EmbeddingCache, FeatureExtractor, MetricResult,
};
use crate::qa::{validate_texture, AnomalyConfig, QaConfig, QaPipeline, QaReport};
use crate::render::ViewSpec;
use crate::texture::Texture;

pub const QA_REPORTS_FILE: &str = "qa_reports.jsonl";
pub const MANIFEST_FILE: &str = "instance_manifest.json";
pub const SUMMARY_FILE: &str = "run_summary.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionSource {
    /// Direction JSON file.
    File { path: PathBuf },
    /// Learned from generator samples labeled by the side of a toy synthesis axis.
    ToyAxis {
        axis: String,
        n: usize,
        #[serde(default)]
        flip_rate: f64,
        label_seed: u64,
        svm: SvmConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    pub attribute: String,
    pub direction: DirectionSource,
    #[serde(default)]
    pub policy: StepPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WMeanSource {
    /// Mean of `n` mapped standard-normal draws.
    Estimate { n: usize, seed: u64 },
    /// LVEC file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationSection {
    pub psi: f64,
    pub w_mean: WMeanSource,
}

/// Unedited textures drawn from the generator to fit the QA anomaly scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaReferenceConfig {
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KidConfig {
    pub blocks: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    /// FEMB file holding pixelstat features of the reference corpus.
    pub reference: PathBuf,
    #[serde(default)]
    pub fid: bool,
    #[serde(default)]
    pub kid: Option<KidConfig>,
    /// `k` for k-NN precision/recall.
    #[serde(default)]
    pub precision_recall_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub generator: GeneratorConfig,
    /// Seed for candidate latents.
    pub sample_seed: u64,
    pub base_model_id: String,
    pub truncation: TruncationSection,
    #[serde(default)]
    pub edits: Vec<EditConfig>,
    #[serde(default)]
    pub qa: QaConfig,
    pub qa_reference: QaReferenceConfig,
    #[serde(default)]
    pub metrics: Option<MetricsSection>,
    /// Viewpoint schedule for the render stage.
    #[serde(default)]
    pub render: ViewSpec,
}

impl PipelineConfig {
    /// Parses a config and checks that every referenced file exists relative
    /// to `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check(base_dir)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text, &base)?, base))
    }

    /// The configured generator, with corpus paths resolved against `base_dir`.
    pub fn build_generator(&self, base_dir: &Path) -> Result<Generator> {
        Generator::from_config(&resolve_generator(&self.generator, base_dir))
    }

    fn check(&self, base_dir: &Path) -> Result<()> {
        let mut files: Vec<PathBuf> = Vec::new();
        if let GeneratorConfig::Corpus { manifest, .. } = &self.generator {
            files.push(manifest.clone());
        }
        if let WMeanSource::File { path } = &self.truncation.w_mean {
            files.push(path.clone());
        }
        for e in &self.edits {
            if let DirectionSource::File { path } = &e.direction {
                files.push(path.clone());
            }
        }
        if let Some(m) = &self.metrics {
            files.push(m.reference.clone());
        }
        for f in files {
            let p = base_dir.join(&f);
            if !p.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        self.render.validate().map_err(|e| Error::Config(format!("render: {e}")))?;
        if !(0.0..=1.0).contains(&self.truncation.psi) {
            return Err(Error::Config(format!("psi {} outside [0,1]", self.truncation.psi)));
        }
        for e in &self.edits {
            e.policy.validate().map_err(|err| Error::Config(format!("edit {}: {err}", e.attribute)))?;
        }
        let mut seen = HashSet::new();
        for e in &self.edits {
            if !seen.insert(e.attribute.as_str()) {
                return Err(Error::Config(format!("attribute {} edited twice", e.attribute)));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of configuration bytes.
pub fn config_fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEdit {
    pub attribute: String,
    pub alpha_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub texture_path: String,
    pub qa_report_ref: String,
    pub attribute_edits: Vec<AttributeEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub texture_path: String,
    pub sample_id: String,
    pub failed_stages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub base_model_id: String,
    pub instances: Vec<Instance>,
    pub excluded: Vec<Exclusion>,
}

impl InstanceManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A texture offered for assembly with its QA report and the edits that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub texture_path: String,
    pub report: QaReport,
    pub attribute_edits: Vec<AttributeEdit>,
}

/// One instance per passing texture on `base_model_id`; failing textures are
/// recorded as exclusions. `report_file` names the QA report file that
/// `qa_report_ref` entries point into.
pub fn assemble_candidates(base_model_id: &str, candidates: Vec<Candidate>, report_file: &str) -> Result<InstanceManifest> {
    let mut paths = HashSet::new();
    let mut ids = HashSet::new();
    let mut instances = Vec::new();
    let mut excluded = Vec::new();
    for c in candidates {
        if !paths.insert(c.texture_path.clone()) {
            return Err(Error::invalid(format!("duplicate texture path {}", c.texture_path)));
        }
        if c.report.overall_pass {
            let instance_id = format!("{base_model_id}/{}", c.report.sample_id);
            if !ids.insert(instance_id.clone()) {
                return Err(Error::invalid(format!("duplicate instance id {instance_id}")));
            }
            instances.push(Instance {
                instance_id,
                qa_report_ref: format!("{report_file}#{}", c.report.sample_id),
                texture_path: c.texture_path,
                attribute_edits: c.attribute_edits,
            });
        } else {
            excluded.push(Exclusion {
                failed_stages: c
                    .report
                    .stages
                    .iter()
                    .filter(|s| !s.passed && !s.skipped)
                    .map(|s| s.stage_name.clone())
                    .collect(),
                sample_id: c.report.sample_id.clone(),
                texture_path: c.texture_path,
            });
        }
    }
    Ok(InstanceManifest {
        base_model_id: base_model_id.to_string(),
        instances,
        excluded,
    })
}

pub fn assemble_instances(base_model_id: &str, textures: &[(String, QaReport)], report_file: &str) -> Result<InstanceManifest> {
    let candidates = textures
        .iter()
        .map(|(path, report)| Candidate {
            texture_path: path.clone(),
            report: report.clone(),
            attribute_edits: Vec::new(),
        })
        .collect();
    assemble_candidates(base_model_id, candidates, report_file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSummary {
    pub total: usize,
    pub passed: usize,
    /// `None` when no candidates were generated.
    pub pass_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_sha256: String,
    pub qa: QaSummary,
    pub metrics: Vec<MetricResult>,
    /// Set when no candidate passed QA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub manifest: InstanceManifest,
    pub summary: RunSummary,
}

/// Loaded generator, truncation and directions for one config.
pub struct PreparedEdits {
    pub generator: Generator,
    pub truncation: TruncationConfig,
    pub edits: Vec<(AttributeDirection, StepPolicy)>,
}

pub fn prepare_edits(cfg: &PipelineConfig, base_dir: &Path) -> Result<PreparedEdits> {
    let generator = cfg.build_generator(base_dir)?;
    let w_mean = match &cfg.truncation.w_mean {
        WMeanSource::Estimate { n, seed } => estimate_w_mean(&generator, *n, *seed)?,
        WMeanSource::File { path } => LatentVec::load(&base_dir.join(path))?,
    };
    let truncation = TruncationConfig::new(cfg.truncation.psi, w_mean)?;
    let mut edits = Vec::with_capacity(cfg.edits.len());
    for e in &cfg.edits {
        let direction = match &e.direction {
            DirectionSource::File { path } => AttributeDirection::load(&base_dir.join(path))?,
            DirectionSource::ToyAxis {
                axis,
                n,
                flip_rate,
                label_seed,
                svm,
            } => {
                let Generator::Toy(toy) = &generator else {
                    return Err(Error::Config("toy_axis directions need the toy generator".into()));
                };
                let normal = toy
                    .attribute_axis(axis)
                    .ok_or_else(|| Error::Config(format!("unknown toy axis {axis}")))?
                    .to_vec();
                let mut labels = PlantedLabels::new(normal, 0.0, *flip_rate, *label_seed)?;
                learn_direction_pipeline(&generator, &mut labels, *n, &e.attribute, svm)?
            }
        };
        edits.push((direction, e.policy));
    }
    Ok(PreparedEdits {
        generator,
        truncation,
        edits,
    })
}

fn resolve_generator(cfg: &GeneratorConfig, base_dir: &Path) -> GeneratorConfig {
    match cfg {
        GeneratorConfig::Corpus { manifest, texture_size } => GeneratorConfig::Corpus {
            manifest: base_dir.join(manifest),
            texture_size: *texture_size,
        },
        other => other.clone(),
    }
}

impl PreparedEdits {
    /// Applies every configured edit in order, each with its own
    /// distance-scaled step, then truncates once.
    pub fn apply(&self, w: &LatentVec) -> Result<(LatentVec, Vec<AttributeEdit>)> {
        let mut current = w.clone();
        let mut applied = Vec::with_capacity(self.edits.len());
        for (d, policy) in &self.edits {
            let alpha = adaptive_step(signed_distance(&current, d)?, policy);
            current = manipulate(&current, d, alpha)?;
            applied.push(AttributeEdit {
                attribute: d.attribute_name.clone(),
                alpha_eff: alpha,
            });
        }
        Ok((truncate(&current, &self.truncation)?, applied))
    }
}

/// QA pipeline for a config, with the anomaly scorer fitted on freshly drawn
/// reference textures.
pub fn build_qa(cfg: &PipelineConfig, base_dir: &Path, generator: &Generator) -> Result<QaPipeline> {
    let reference: Vec<Texture> = match cfg.qa.anomaly {
        AnomalyConfig::Mahalanobis { .. } => generator
            .sample_batch(cfg.qa_reference.n, cfg.qa_reference.seed)?
            .into_iter()
            .map(|r| r.texture)
            .collect(),
        AnomalyConfig::External { .. } => Vec::new(),
    };
    cfg.qa.build(base_dir, &reference)
}

/// Metrics of `features` against the reference embeddings configured in `section`.
pub fn corpus_metrics(section: &MetricsSection, base_dir: &Path, textures: &[(&str, &Texture)]) -> Result<Vec<MetricResult>> {
    let reference = EmbeddingCache::load(&base_dir.join(&section.reference))?.features()?;
    let fake = extract_features(textures, &FeatureExtractor::PixelStat)?;
    let mut out = Vec::new();
    if section.fid {
        out.push(fid(&corpus_stats(&reference)?, &corpus_stats(&fake)?)?);
    }
    if let Some(k) = &section.kid {
        out.push(kid(&reference, &fake, k.blocks, k.seed)?);
    }
    if let Some(k) = section.precision_recall_k {
        let pr = precision_recall(&reference, &fake, k)?;
        out.push(MetricResult::new("precision", pr.precision).with_meta("k", k));
        out.push(MetricResult::new("recall", pr.recall).with_meta("k", k));
    }
    Ok(out)
}

/// Runs the full pipeline for `n` candidates and writes, under `out_dir`:
/// `textures/<id>.png`, `latents/<id>.w.lvec`, `qa_reports.jsonl`,
/// `instance_manifest.json`, `metrics.json` (when configured) and
/// `run_summary.json`. All manifest paths are relative to `out_dir`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    base_dir: &Path,
    n: usize,
    out_dir: &Path,
    config_sha256: &str,
) -> Result<PipelineOutcome> {
    let prepared = prepare_edits(cfg, base_dir)?;
    let candidates: Vec<LatentSample> = if n == 0 {
        Vec::new()
    } else {
        prepared.generator.sample_latents(n, cfg.sample_seed)?
    };
    let qa = build_qa(cfg, base_dir, &prepared.generator)?;

    let tex_dir = out_dir.join("textures");
    let lat_dir = out_dir.join("latents");
    for d in [out_dir, &tex_dir, &lat_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut edited = Vec::with_capacity(candidates.len());
    for s in &candidates {
        let (w, applied) = prepared.apply(&s.w)?;
        let texture = prepared.generator.synthesize(&w)?;
        w.save(&lat_dir.join(format!("{}.w.lvec", s.sample_id)))?;
        let rel = format!("textures/{}.png", s.sample_id);
        texture.save_png(&out_dir.join(&rel))?;
        edited.push((s.sample_id.clone(), rel, texture, applied));
    }

    let reports: Vec<QaReport> = edited
        .iter()
        .map(|(id, _, tex, _)| validate_texture(tex, id, &qa))
        .collect();
    write_jsonl(&out_dir.join(QA_REPORTS_FILE), &reports)?;

    let passed = reports.iter().filter(|r| r.overall_pass).count();
    let metrics = match &cfg.metrics {
        Some(section) if passed >= 2 => {
            let kept: Vec<(&str, &Texture)> = edited
                .iter()
                .zip(&reports)
                .filter(|(_, r)| r.overall_pass)
                .map(|((id, _, tex, _), _)| (id.as_str(), tex))
                .collect();
            let m = corpus_metrics(section, base_dir, &kept)?;
            let mut text = serde_json::to_string_pretty(&m)?;
            text.push('\n');
            let p = out_dir.join(METRICS_FILE);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            m
        }
        _ => Vec::new(),
    };

    let candidates: Vec<Candidate> = edited
        .into_iter()
        .zip(reports)
        .map(|((_, rel, _, applied), report)| Candidate {
            texture_path: rel,
            report,
            attribute_edits: applied,
        })
        .collect();
    let manifest = assemble_candidates(&cfg.base_model_id, candidates, QA_REPORTS_FILE)?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;

    let summary = RunSummary {
        config_sha256: config_sha256.to_string(),
        qa: QaSummary {
            total: n,
            passed,
            pass_rate: (n > 0).then(|| passed as f64 / n as f64),
        },
        metrics,
        warning: (passed == 0).then(|| "no candidate passed QA; manifest is empty".to_string()),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    let p = out_dir.join(SUMMARY_FILE);
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(PipelineOutcome { manifest, summary })
}
