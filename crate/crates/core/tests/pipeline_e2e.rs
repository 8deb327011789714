use std::collections::HashMap;
use std::path::{Path, PathBuf};

use uvforge::jsonl::read_jsonl;
use uvforge::latent::LatentVec;
use uvforge::pipeline::{
    build_qa, run_pipeline, InstanceManifest, PipelineConfig, MANIFEST_FILE, QA_REPORTS_FILE, SUMMARY_FILE,
};
use uvforge::qa::{validate_texture, QaReport};
use uvforge::texture::{load_texture_dir, Texture};

const SMALL_CONFIG: &str = r#"{
  "generator": {"kind": "toy", "latent_dim": 64, "texture_size": [64, 64], "seed": 7},
  "sample_seed": 11,
  "base_model_id": "ped-01",
  "truncation": {"psi": 0.7, "w_mean": {"kind": "estimate", "n": 500, "seed": 3}},
  "edits": [
    {
      "attribute": "tan",
      "direction": {"kind": "toy_axis", "axis": "tan", "n": 300, "label_seed": 5,
                    "svm": {"regularization_c": 1.0, "epochs": 20, "learning_rate": 0.1, "seed": 9}},
      "policy": {"alpha_max": 3.0, "s_floor": -3.0, "s_cap": 1.0}
    }
  ],
  "qa_reference": {"n": 32, "seed": 101},
  "render": {"seed": 4}
}"#;

fn small_config() -> PipelineConfig {
    PipelineConfig::from_json(SMALL_CONFIG, Path::new(".")).unwrap()
}

fn run(cfg: &PipelineConfig, n: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_pipeline(cfg, Path::new("."), n, &out, "test").unwrap();
    (dir, out)
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn zero_candidates_give_empty_manifest() {
    let (_d, out) = run(&small_config(), 0);
    let manifest = InstanceManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert!(manifest.instances.is_empty());
    assert!(manifest.excluded.is_empty());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert!(summary["qa"]["pass_rate"].is_null());
    assert_eq!(summary["qa"]["total"], 0);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small_config();
    let (_a, out_a) = run(&cfg, 12);
    let (_b, out_b) = run(&cfg, 12);
    let a = tree_bytes(&out_a);
    assert!(a.len() > 12 * 2);
    assert_eq!(a, tree_bytes(&out_b));
}

#[test]
fn manifest_only_references_passing_reports() {
    let (_d, out) = run(&small_config(), 20);
    let manifest = InstanceManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    let reports: HashMap<String, QaReport> = read_jsonl::<QaReport>(&out.join(QA_REPORTS_FILE))
        .unwrap()
        .into_iter()
        .map(|r| (r.sample_id.clone(), r))
        .collect();
    assert_eq!(manifest.instances.len() + manifest.excluded.len(), 20);
    for inst in &manifest.instances {
        let (file, id) = inst.qa_report_ref.split_once('#').unwrap();
        assert_eq!(file, QA_REPORTS_FILE);
        assert!(reports[id].overall_pass, "{id}");
        assert!(out.join(&inst.texture_path).is_file());
        assert_eq!(inst.attribute_edits.len(), 1);
    }
    for ex in &manifest.excluded {
        assert!(!reports[&ex.sample_id].overall_pass);
    }
}

#[test]
fn stages_reproduce_from_their_files() {
    let cfg = small_config();
    let (_d, out) = run(&cfg, 10);
    let generator = cfg.build_generator(Path::new(".")).unwrap();
    let qa = build_qa(&cfg, Path::new("."), &generator).unwrap();
    let stored: Vec<QaReport> = read_jsonl(&out.join(QA_REPORTS_FILE)).unwrap();
    let textures = load_texture_dir(&out.join("textures")).unwrap();
    assert_eq!(textures.len(), stored.len());
    for report in &stored {
        let (_, tex) = textures.iter().find(|(id, _)| *id == report.sample_id).unwrap();
        assert_eq!(&validate_texture(tex, &report.sample_id, &qa), report);

        let w = LatentVec::load(&out.join("latents").join(format!("{}.w.lvec", report.sample_id))).unwrap();
        let regenerated: Texture = generator.synthesize(&w).unwrap();
        assert_eq!(regenerated.pixels(), tex.pixels(), "{}", report.sample_id);
    }
}

#[test]
fn permissive_thresholds_leave_only_tint_decisions() {
    let mut cfg = small_config();
    let t = &mut cfg.qa.thresholds;
    t.brightness_sym_max = 1e9;
    t.luminance_l1_max = 1e9;
    t.neck_color_l1_max = 1e9;
    t.anomaly_score_max = 1e9;
    cfg.qa.short_circuit = false;
    let (_d, out) = run(&cfg, 8);
    let stored: Vec<QaReport> = read_jsonl(&out.join(QA_REPORTS_FILE)).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    let tint_fails = stored
        .iter()
        .filter(|r| r.stages.iter().any(|s| s.stage_name == "tint" && !s.passed))
        .count();
    let expected = (8 - tint_fails) as f64 / 8.0;
    assert_eq!(summary["qa"]["pass_rate"].as_f64().unwrap(), expected);
    for r in &stored {
        for s in r.stages.iter().filter(|s| s.stage_name != "tint") {
            assert!(s.passed, "{} {}", r.sample_id, s.stage_name);
        }
    }
}
