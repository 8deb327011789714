use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use uvforge::detection::{build_mix, load_kitti_dir, map_at, read_boxes, Class, DatasetManifest, FrameBoxes, MixSpec, Source};
use uvforge::direction::{load_labeled_set, train_linear_svm, SvmConfig};
use uvforge::generator::{read_corpus_manifest, write_corpus, SampleRecord};
use uvforge::jsonl::{read_jsonl, write_jsonl};
use uvforge::latent::LatentVec;
use uvforge::metrics::{
    corpus_stats, extract_features, fid, kid, precision_recall, EmbeddingCache, FeatureExtractor, FeatureVector,
    MetricResult,
};
use uvforge::pipeline::{
    assemble_instances, build_qa, config_fingerprint, prepare_edits, run_pipeline, AttributeEdit, PipelineConfig,
};
use uvforge::qa::{validate_texture, QaReport};
use uvforge::render::{head_mesh, load_mesh, render_corpus, three_d_fid, three_d_kid, write_renders, ViewSpec};
use uvforge::texture::{load_texture_dir, Texture};
use uvforge::{Error, Result};

#[derive(Parser)]
#[command(name = "uvforge", about = "UV facial texture generation, QA and evaluation toolkit", disable_version_flag = true)]
struct Cli {
    #[command(flatten)]
    common: Common,

    /// Print the version and the SHA-256 of the --config file.
    #[arg(long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the verb's primary seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true, alias = "out-dir")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample textures and latents into a corpus directory.
    Generate {
        #[arg(long)]
        n: usize,
    },
    /// Train an attribute direction from a labels file.
    LearnDirection {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, alias = "attr")]
        attribute: String,
        #[arg(long, alias = "n")]
        limit: Option<usize>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Apply the configured edits to every latent of a corpus.
    Edit {
        /// corpus.jsonl of the input corpus.
        #[arg(long)]
        latents: PathBuf,
    },
    /// Run the QA gate over a directory of textures.
    Validate {
        #[arg(long)]
        textures: PathBuf,
    },
    /// FID / KID / precision-recall between two corpora (FEMB files or PNG directories).
    Metrics {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        #[arg(long)]
        fid: bool,
        #[arg(long)]
        kid: bool,
        #[arg(long)]
        pr: bool,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        blocks: usize,
        /// Write pixelstat features of --fake to this FEMB file.
        #[arg(long)]
        save_fake: Option<PathBuf>,
    },
    /// Render textures on a head mesh from seeded viewpoints.
    Render {
        /// OBJ file; the built-in head is used when absent.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        textures: PathBuf,
        /// Reference texture directory for 3D-FID / 3D-KID.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        blocks: usize,
    },
    /// Build a training-set mixing manifest.
    Mixbuild {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Named 2D composition: 1, 2, 3, 3+, 3++, 4, 4++.
        #[arg(long)]
        preset: Option<String>,
        /// Source manifests as SOURCE=path (Synthetic, KITTI, BDD100K, A2D2).
        #[arg(long = "source")]
        sources: Vec<String>,
    },
    /// mAP over detections and ground truth (JSONL files or KITTI label directories).
    Evalmap {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        det: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
    /// Build an instance manifest from QA reports.
    Assemble {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        textures: PathBuf,
        #[arg(long)]
        base_model_id: String,
    },
    /// Full pipeline: generate, edit, validate, score, assemble.
    Run {
        #[arg(long)]
        n: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let common = cli.common;
    if cli.version {
        let hash = match &common.config {
            Some(p) => config_fingerprint(&read_config_bytes(p)?),
            None => "none".into(),
        };
        println!("uvforge {} config-sha256:{hash}", env!("CARGO_PKG_VERSION"));
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no command given; see --help".into()));
    };
    match command {
        Command::Generate { n } => generate(&common, n),
        Command::LearnDirection {
            labels,
            attribute,
            limit,
            c,
            epochs,
            learning_rate,
        } => {
            let mut svm = SvmConfig::default();
            svm.regularization_c = c.unwrap_or(svm.regularization_c);
            svm.epochs = epochs.unwrap_or(svm.epochs);
            svm.learning_rate = learning_rate.unwrap_or(svm.learning_rate);
            svm.seed = common.seed.unwrap_or(svm.seed);
            let set = load_labeled_set(&labels, &attribute, limit)?;
            let direction = train_linear_svm(&set, &svm)?;
            direction.save(&require_out(&common)?)?;
            eprintln!(
                "{attribute}: accuracy {:.4} on {} samples",
                direction.train_meta.accuracy, direction.train_meta.n_samples
            );
            Ok(())
        }
        Command::Edit { latents } => edit(&common, &latents),
        Command::Validate { textures } => {
            let (cfg, base) = load_config(&common)?;
            let generator = cfg.build_generator(&base)?;
            let qa = build_qa(&cfg, &base, &generator)?;
            let reports: Vec<QaReport> = load_texture_dir(&textures)?
                .iter()
                .map(|(id, tex)| validate_texture(tex, id, &qa))
                .collect();
            let passed = reports.iter().filter(|r| r.overall_pass).count();
            write_jsonl(&require_out(&common)?, &reports)?;
            eprintln!("{passed}/{} textures passed", reports.len());
            Ok(())
        }
        Command::Metrics {
            real,
            fake,
            fid: want_fid,
            kid: want_kid,
            pr,
            k,
            blocks,
            save_fake,
        } => {
            let (_, real_f) = load_features(&real)?;
            let (fake_ids, fake_f) = load_features(&fake)?;
            if let Some(p) = save_fake {
                EmbeddingCache::from_features(fake_ids, &fake_f)?.save(&p)?;
            }
            let mut results = Vec::new();
            if want_fid {
                results.push(fid(&corpus_stats(&real_f)?, &corpus_stats(&fake_f)?)?);
            }
            if want_kid {
                results.push(kid(&real_f, &fake_f, blocks, common.seed.unwrap_or(0))?);
            }
            if pr {
                let r = precision_recall(&real_f, &fake_f, k)?;
                results.push(MetricResult::new("precision", r.precision).with_meta("k", k));
                results.push(MetricResult::new("recall", r.recall).with_meta("k", k));
            }
            emit_json(&common, &results)
        }
        Command::Render {
            mesh,
            textures,
            reference,
            blocks,
        } => render(&common, mesh.as_deref(), &textures, reference.as_deref(), blocks),
        Command::Mixbuild { spec, preset, sources } => mixbuild(&common, spec.as_deref(), preset.as_deref(), &sources),
        Command::Evalmap { gt, det, iou } => {
            let result = map_at(&load_boxes(&det)?, &load_boxes(&gt)?, &Class::ALL, iou)?;
            emit_json(&common, &result)
        }
        Command::Assemble {
            reports,
            textures,
            base_model_id,
        } => {
            let report_file = reports.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let reports: Vec<QaReport> = read_jsonl(&reports)?;
            let entries: Vec<(String, QaReport)> = reports
                .into_iter()
                .map(|r| (textures.join(format!("{}.png", r.sample_id)).display().to_string(), r))
                .collect();
            let manifest = assemble_instances(&base_model_id, &entries, &report_file)?;
            manifest.save(&require_out(&common)?)?;
            eprintln!("{} instances, {} excluded", manifest.instances.len(), manifest.excluded.len());
            Ok(())
        }
        Command::Run { n } => {
            let (mut cfg, base) = load_config(&common)?;
            if let Some(seed) = common.seed {
                cfg.sample_seed = seed;
            }
            let bytes = read_config_bytes(common.config.as_ref().expect("checked by load_config"))?;
            let out = require_out(&common)?;
            let outcome = run_pipeline(&cfg, &base, n, &out, &config_fingerprint(&bytes))?;
            if let Some(w) = &outcome.summary.warning {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "{} of {} candidates passed QA; manifest at {}",
                outcome.summary.qa.passed,
                outcome.summary.qa.total,
                out.join(uvforge::pipeline::MANIFEST_FILE).display()
            );
            Ok(())
        }
    }
}

fn read_config_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_config(common: &Common) -> Result<(PipelineConfig, PathBuf)> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    PipelineConfig::load(path)
}

fn require_out(common: &Common) -> Result<PathBuf> {
    common
        .out
        .clone()
        .ok_or_else(|| Error::Config("this command needs --out".into()))
}

fn emit_json<T: Serialize>(common: &Common, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match &common.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn generate(common: &Common, n: usize) -> Result<()> {
    let (cfg, base) = load_config(common)?;
    let generator = cfg.build_generator(&base)?;
    let records = generator.sample_batch(n, common.seed.unwrap_or(cfg.sample_seed))?;
    let manifest = write_corpus(&require_out(common)?, &records)?;
    eprintln!("wrote {n} samples; manifest {}", manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct EditRecord {
    sample_id: String,
    attribute_edits: Vec<AttributeEdit>,
}

fn edit(common: &Common, latents: &Path) -> Result<()> {
    let (cfg, base) = load_config(common)?;
    let prepared = prepare_edits(&cfg, &base)?;
    let root = latents.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    let mut edits = Vec::new();
    for entry in read_corpus_manifest(latents)? {
        let z = LatentVec::load(&root.join(&entry.z_path))?;
        let w = LatentVec::load(&root.join(&entry.w_path))?;
        let (edited, applied) = prepared.apply(&w)?;
        records.push(SampleRecord {
            sample_id: entry.sample_id.clone(),
            texture: prepared.generator.synthesize(&edited)?,
            z,
            w: edited,
        });
        edits.push(EditRecord {
            sample_id: entry.sample_id,
            attribute_edits: applied,
        });
    }
    let out = require_out(common)?;
    write_corpus(&out, &records)?;
    write_jsonl(&out.join("edits.jsonl"), &edits)?;
    eprintln!("edited {} samples", records.len());
    Ok(())
}

fn load_features(path: &Path) -> Result<(Vec<String>, Vec<FeatureVector>)> {
    if path.is_dir() {
        let textures = load_texture_dir(path)?;
        let pairs: Vec<(&str, &Texture)> = textures.iter().map(|(id, t)| (id.as_str(), t)).collect();
        let feats = extract_features(&pairs, &FeatureExtractor::PixelStat)?;
        Ok((textures.into_iter().map(|(id, _)| id).collect(), feats))
    } else {
        let cache = EmbeddingCache::load(path)?;
        Ok((cache.sample_ids.clone(), cache.features()?))
    }
}

fn render(common: &Common, mesh: Option<&Path>, textures: &Path, reference: Option<&Path>, blocks: usize) -> Result<()> {
    let mut view = match &common.config {
        Some(_) => load_config(common)?.0.render,
        None => ViewSpec::default(),
    };
    if let Some(seed) = common.seed {
        view.seed = seed;
    }
    let mesh = match mesh {
        Some(p) => load_mesh(p)?,
        None => head_mesh(),
    };
    if mesh.clamped_uvs > 0 {
        eprintln!("warning: clamped {} uv coordinates into [0,1]", mesh.clamped_uvs);
    }
    let loaded = load_texture_dir(textures)?;
    let pairs: Vec<(&str, &Texture)> = loaded.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let out = require_out(common)?;
    let renders = render_corpus(&mesh, &pairs, &view)?;
    write_renders(&out, &renders)?;
    if let Some(reference) = reference {
        let ref_loaded = load_texture_dir(reference)?;
        let ref_pairs: Vec<(&str, &Texture)> = ref_loaded.iter().map(|(id, t)| (id.as_str(), t)).collect();
        let ex = FeatureExtractor::PixelStat;
        let results = vec![
            three_d_fid(&mesh, &ref_pairs, &pairs, &view, &ex)?,
            three_d_kid(&mesh, &ref_pairs, &pairs, &view, &ex, blocks, view.seed)?,
        ];
        let mut text = serde_json::to_string_pretty(&results)?;
        text.push('\n');
        let p = out.join("metrics.json");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    eprintln!("rendered {} images", renders.len());
    Ok(())
}

fn parse_source(name: &str) -> Result<Source> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| Error::Config(format!("unknown source {name}")))
}

fn mixbuild(common: &Common, spec: Option<&Path>, preset: Option<&str>, sources: &[String]) -> Result<()> {
    let (mut mix, base) = match (spec, preset) {
        (Some(p), None) => (MixSpec::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        (None, Some(name)) => (MixSpec::preset_2d(name, 0).map_err(|e| Error::Config(e.to_string()))?, PathBuf::new()),
        _ => return Err(Error::Config("give exactly one of --spec or --preset".into())),
    };
    if let Some(seed) = common.seed {
        mix.seed = seed;
    }
    let mut paths: BTreeMap<Source, PathBuf> = mix.sources.iter().map(|(s, p)| (*s, base.join(p))).collect();
    for s in sources {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--source expects SOURCE=path, got {s}")))?;
        paths.insert(parse_source(name)?, PathBuf::from(path));
    }
    let mut manifests = BTreeMap::new();
    for (source, path) in paths {
        manifests.insert(source, DatasetManifest::load(&path)?);
    }
    let mixed = build_mix(&manifests, &mix)?;
    mixed.save(&require_out(common)?)?;
    let parts: Vec<String> = mixed.composition().iter().map(|(s, c)| format!("{}={c}", s.name())).collect();
    eprintln!("{} frames ({})", mixed.len(), parts.join(", "));
    Ok(())
}

fn load_boxes(path: &Path) -> Result<FrameBoxes> {
    if path.is_dir() {
        load_kitti_dir(path)
    } else {
        read_boxes(path)
    }
}
