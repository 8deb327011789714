use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uvforge::qa::*;
use uvforge::texture::Texture;

const SIZE: usize = 128;

/// Smooth random texture: a few low-frequency colour waves around a skin tone.
fn random_texture(seed: u64) -> Texture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = [rng.random_range(120.0..220.0), rng.random_range(100.0..180.0), rng.random_range(80.0..160.0)];
    let waves: Vec<(f64, f64, f64, usize)> = (0..4)
        .map(|_| (rng.random_range(0.0..6.0), rng.random_range(0.0..6.0), rng.random_range(-25.0..25.0), rng.random_range(0..3)))
        .collect();
    Texture::from_fn(SIZE, SIZE, |x, y| {
        let (u, v) = (x as f64 / SIZE as f64, y as f64 / SIZE as f64);
        let mut c = base;
        for &(fu, fv, amp, ch) in &waves {
            c[ch] += amp * (fu * u + fv * v).sin();
        }
        c.map(|x| x.clamp(0.0, 255.0) as u8)
    })
}

fn pipeline() -> QaPipeline {
    let reference: Vec<Texture> = (0..24).map(random_texture).collect();
    QaConfig { short_circuit: false, ..QaConfig::default() }.build(Path::new("."), &reference).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mirror_leaves_symmetry_error_unchanged(seed in any::<u64>()) {
        let t = random_texture(seed);
        let face = default_face_bounds();
        prop_assert_eq!(
            brightness_symmetry_error(&t, &face).unwrap(),
            brightness_symmetry_error(&t.mirrored(), &face).unwrap()
        );
    }

    #[test]
    fn uniform_texture_scores_zero(rgb in any::<[u8; 3]>(), threshold in 1e-12f64..1.0) {
        let t = Texture::filled(SIZE, SIZE, rgb);
        let th = QaThresholds { luminance_l1_max: threshold, neck_color_l1_max: threshold, ..QaThresholds::default() };
        prop_assert_eq!(brightness_symmetry_error(&t, &default_face_bounds()).unwrap(), 0.0);
        let lum = luminance_consistency(&t, &default_face_regions(), &th).unwrap();
        prop_assert!(lum.value == 0.0 && lum.passed);
        let neck = neck_color_consistency(&t, &default_face_regions(), &default_neck_region(), &th).unwrap();
        prop_assert!(neck.value == 0.0 && neck.passed);
    }

    #[test]
    fn region_stages_ignore_far_border(seed in any::<u64>(), border in any::<[u8; 3]>()) {
        // a 3 px frame on the left, right and top edges stays beyond the blur reach of every region
        let p = pipeline();
        let base = random_texture(seed);
        let framed = Texture::from_fn(SIZE, SIZE, |x, y| if x < 3 || y < 3 || x >= SIZE - 3 { border } else { base.get(x, y) });
        let a = validate_texture(&base, "x", &p);
        let b = validate_texture(&framed, "x", &p);
        for stage in 0..4 {
            prop_assert_eq!(a.stages[stage].score, b.stages[stage].score, "stage {}", STAGE_NAMES[stage]);
        }
    }

    #[test]
    fn full_run_equals_standalone_stages(seed in any::<u64>()) {
        let p = pipeline();
        let t = random_texture(seed);
        let rep = validate_texture(&t, "s", &p);
        prop_assert_eq!(rep.executed(), STAGE_NAMES.len());
        let th = &p.thresholds;
        let (_, share) = uvforge::qa::tint::classify_tint_scored(&t, &p.tint_model).unwrap();
        prop_assert_eq!(rep.stages[0].score, Some(share));
        prop_assert_eq!(rep.stages[1].score, Some(brightness_symmetry_error(&t, &p.face_bounds).unwrap()));
        prop_assert_eq!(rep.stages[2].score, Some(luminance_consistency(&t, &p.regions, th).unwrap().value));
        prop_assert_eq!(rep.stages[3].score, Some(neck_color_consistency(&t, &p.regions, &p.neck, th).unwrap().value));
        prop_assert_eq!(rep.stages[4].score, Some(anomaly_score(&t, "s", &p.scorer).unwrap()));
        prop_assert_eq!(rep.overall_pass, rep.stages.iter().all(|s| s.passed));
    }
}

#[test]
fn two_level_texture_fails_luminance() {
    let t = Texture::from_fn(SIZE, SIZE, |x, _| if x < SIZE / 2 { [100, 100, 100] } else { [200, 200, 200] });
    let regions = vec![
        RegionMask::new("left", [0.05, 0.2, 0.3, 0.8]).unwrap(),
        RegionMask::new("right", [0.7, 0.2, 0.95, 0.8]).unwrap(),
    ];
    let r = luminance_consistency(&t, &regions, &QaThresholds::default()).unwrap();
    assert!((r.value - 100.0 / 255.0).abs() < 1e-6);
    assert!(!r.passed);
}

#[test]
fn tint_classes_from_curation_set() {
    let model = TintModel::synthetic_curation([128, 128, 128], 80, 5, 3, default_face_bounds()).unwrap();
    assert_eq!(classify_tint(&Texture::filled(64, 64, [128, 128, 128]), &model).unwrap(), TintClass::Normal);
    assert_eq!(classify_tint(&Texture::filled(64, 64, [128, 128, 168]), &model).unwrap(), TintClass::BlueTint);
    assert_eq!(classify_tint(&Texture::filled(64, 64, [168, 128, 128]), &model).unwrap(), TintClass::RedTint);
}
