mod common;

use std::collections::{BTreeMap, HashSet};

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uvforge::detection::*;
use uvforge::Error;

fn random_box(rng: &mut ChaCha8Rng, conf: Option<f64>) -> BoundingBox {
    let x0 = rng.random_range(0.0..20.0);
    let y0 = rng.random_range(0.0..20.0);
    let class = if rng.random_bool(0.7) { Class::Pedestrian } else { Class::Car };
    boxed(x0, y0, x0 + rng.random_range(2.0..12.0), y0 + rng.random_range(2.0..12.0), class, conf)
}

/// Up to 5 detections and 5 ground truths over two frames, with distinct confidences.
fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<(usize, BoundingBox)>, Vec<(usize, BoundingBox)>) {
    let nd = rng.random_range(0..=5);
    let ng = rng.random_range(0..=5);
    let mut confs: Vec<f64> = Vec::new();
    while confs.len() < nd {
        let c = (rng.random_range(1..1000) as f64) / 1000.0;
        if !confs.contains(&c) {
            confs.push(c);
        }
    }
    let gts: Vec<(usize, BoundingBox)> = (0..ng).map(|_| (rng.random_range(0..2), random_box(rng, None))).collect();
    let dets = confs
        .into_iter()
        .map(|c| {
            // half the detections jitter a ground truth so matches actually occur
            if !gts.is_empty() && rng.random_bool(0.5) {
                let (f, g) = gts[rng.random_range(0..gts.len())];
                let j = rng.random_range(-1.5..1.5);
                (f, boxed(g.x0 + j, g.y0, g.x1 + j, g.y1, g.class, Some(c)))
            } else {
                (rng.random_range(0..2), random_box(rng, Some(c)))
            }
        })
        .collect();
    (dets, gts)
}

const FRAMES: [&str; 2] = ["f0", "f1"];

fn pooled(dets: &[(usize, BoundingBox)], gts: &[(usize, BoundingBox)], t: f64) -> Option<f64> {
    let d: Vec<(&str, &BoundingBox)> = dets.iter().map(|(f, b)| (FRAMES[*f], b)).collect();
    let g: Vec<(&str, &BoundingBox)> = gts.iter().map(|(f, b)| (FRAMES[*f], b)).collect();
    pooled_average_precision(&d, &g, t).unwrap()
}

#[test]
fn ap_matches_threshold_sweep_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let (dets, gts) = random_instance(&mut rng);
        let got = pooled(&dets, &gts, 0.5);
        let want = ap_oracle(&dets, &gts, 0.5);
        match (got, want) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn build_mix_counts_subset_and_determinism() {
    let manifest = |s: Source, n: usize| {
        DatasetManifest::new(
            (0..n)
                .map(|i| ManifestEntry { frame_id: format!("{}-{i}", s.name()), source: s, uri: format!("{i}.png") })
                .collect(),
        )
        .unwrap()
    };
    let sources = BTreeMap::from([
        (Source::Synthetic, manifest(Source::Synthetic, 50)),
        (Source::Kitti, manifest(Source::Kitti, 30)),
        (Source::A2d2, manifest(Source::A2d2, 10)),
    ]);
    let all: HashSet<ManifestEntry> = sources.values().flat_map(|m| m.entries().iter().cloned()).collect();
    for seed in 0..20 {
        let spec = MixSpec::new(&[(Source::Synthetic, 17), (Source::Kitti, 30), (Source::A2d2, 3)], seed);
        let mix = build_mix(&sources, &spec).unwrap();
        assert_eq!(mix.composition(), &BTreeMap::from([(Source::Synthetic, 17), (Source::Kitti, 30), (Source::A2d2, 3)]));
        assert!(mix.entries().iter().all(|e| all.contains(e)));
        assert_eq!(mix, build_mix(&sources, &spec).unwrap());
    }
    let a = build_mix(&sources, &MixSpec::new(&[(Source::Synthetic, 10)], 1)).unwrap();
    let b = build_mix(&sources, &MixSpec::new(&[(Source::Synthetic, 10)], 2)).unwrap();
    assert_ne!(a, b);
    let err = build_mix(&sources, &MixSpec::new(&[(Source::Bdd100k, 1)], 0)).unwrap_err();
    assert!(matches!(err, Error::Capacity { available: 0, .. }));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn kitti_directory_and_jsonl_agree() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels");
    std::fs::create_dir(&labels).unwrap();
    std::fs::write(labels.join("000001.txt"), "Car 0 0 0 10 10 50 40 1 1 1 0 0 0 0\nCyclist 0 0 0 1 1 2 2 1 1 1 0 0 0 0\n").unwrap();
    std::fs::write(labels.join("000002.txt"), "Pedestrian 0 0 0 5 5 9 20 1 1 1 0 0 0 0\n").unwrap();
    let frames = load_kitti_dir(&labels).unwrap();
    assert_eq!(frames.len(), 2);
    assert_eq!(frames["000001"].len(), 1);
    let p = dir.path().join("gt.jsonl");
    write_boxes(&p, &frames).unwrap();
    assert_eq!(read_boxes(&p).unwrap(), frames);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn iou_symmetric_and_reflexive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_box(&mut rng, None), random_box(&mut rng, None));
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-15);
        prop_assert!((iou(&a, &b) - iou_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn ap_bounded_and_rescale_invariant(seed in any::<u64>(), scale in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_instance(&mut rng);
        let base = pooled(&dets, &gts, 0.5);
        if let Some(v) = base {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let scaled: Vec<(usize, BoundingBox)> = dets
            .iter()
            .map(|(f, b)| (*f, BoundingBox { confidence: b.confidence.map(|c| c * scale), ..*b }))
            .collect();
        prop_assert_eq!(base, pooled(&scaled, &gts, 0.5));
    }

    #[test]
    fn duplicate_true_positive_keeps_matches(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_instance(&mut rng);
        let as_refs = |d: &[(usize, BoundingBox)]| -> Vec<(&'static str, BoundingBox)> {
            d.iter().map(|(f, b)| (FRAMES[*f], *b)).collect()
        };
        let g = as_refs(&gts);
        let gr: Vec<(&str, &BoundingBox)> = g.iter().map(|(f, b)| (*f, b)).collect();
        let count = |d: &[(&'static str, BoundingBox)]| {
            let dr: Vec<(&str, &BoundingBox)> = d.iter().map(|(f, b)| (*f, b)).collect();
            greedy_match(&dr, &gr, 0.5).unwrap().iter().filter(|(_, tp)| *tp).count()
        };
        let d = as_refs(&dets);
        let before = count(&d);
        let ranked = {
            let dr: Vec<(&str, &BoundingBox)> = d.iter().map(|(f, b)| (*f, b)).collect();
            greedy_match(&dr, &gr, 0.5).unwrap()
        };
        if let Some(&(i, _)) = ranked.iter().find(|(_, tp)| *tp) {
            let mut dup = d.clone();
            dup.push(d[i]);
            prop_assert!(count(&dup) >= before);
        }
    }
}
