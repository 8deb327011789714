use proptest::prelude::*;
use uvforge::latent::*;

fn wvec(v: Vec<f64>) -> LatentVec {
    LatentVec::new(v, Space::W).unwrap()
}

fn direction(raw: &[f64], bias: f64) -> AttributeDirection {
    let meta = TrainMeta { n_samples: 0, accuracy: 1.0, weight_norm: None };
    AttributeDirection::from_weights(raw, bias, "attr", meta).unwrap()
}

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, dim)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn manipulate_is_additive(
        (w, n) in (2usize..16).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
    ) {
        prop_assume!(n.iter().any(|v| v.abs() > 1e-3));
        let d = direction(&n, 0.0);
        let w = wvec(w);
        let once = manipulate(&w, &d, a + b).unwrap();
        let twice = manipulate(&manipulate(&w, &d, a).unwrap(), &d, b).unwrap();
        prop_assert!(dist(once.values(), twice.values()) <= 1e-9);
    }

    #[test]
    fn truncation_contracts_by_psi(
        (w, m) in (2usize..16).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
        psi in 0.0f64..=1.0,
    ) {
        let cfg = TruncationConfig::new(psi, wvec(m.clone())).unwrap();
        let t = truncate(&wvec(w.clone()), &cfg).unwrap();
        prop_assert!((dist(t.values(), &m) - psi * dist(&w, &m)).abs() <= 1e-9);
    }

    #[test]
    fn adaptive_step_monotone_and_bounded(
        alpha_max in 0.01f64..10.0,
        s_floor in -10.0f64..0.0,
        width in 0.01f64..10.0,
        mut grid in prop::collection::vec(-30.0f64..30.0, 2..64),
    ) {
        let policy = StepPolicy::new(alpha_max, s_floor, s_floor + width).unwrap();
        grid.sort_by(f64::total_cmp);
        let steps: Vec<f64> = grid.iter().map(|&s| adaptive_step(s, &policy)).collect();
        for pair in steps.windows(2) {
            prop_assert!(pair[1] <= pair[0]);
        }
        prop_assert!(steps.iter().all(|a| (0.0..=alpha_max).contains(a)));
    }

    #[test]
    fn full_step_below_floor(
        (w, n) in (2usize..16).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
    ) {
        prop_assume!(n.iter().any(|v| v.abs() > 1e-3));
        let policy = StepPolicy::default();
        let mut d = direction(&n, 0.0);
        let w = wvec(w);
        // shift the bias so w sits below the floor
        let s = signed_distance(&w, &d).unwrap();
        d = direction(d.normal(), policy.s_floor - 1.0 - s);
        let cfg = TruncationConfig::new(1.0, LatentVec::zeros(w.dim(), Space::W)).unwrap();
        let (out, alpha) = edit_with_step(&w, &d, &policy, &cfg).unwrap();
        prop_assert_eq!(alpha, policy.alpha_max);
        let moved: Vec<f64> = out.values().iter().zip(w.values()).map(|(a, b)| a - b).collect();
        let expected: Vec<f64> = d.normal().iter().map(|v| v * policy.alpha_max).collect();
        prop_assert!(dist(&moved, &expected) <= 1e-9);
    }

    #[test]
    fn ops_are_deterministic(w in vec_strategy(8), n in vec_strategy(8), psi in 0.0f64..=1.0) {
        prop_assume!(n.iter().any(|v| v.abs() > 1e-3));
        let d = direction(&n, 0.3);
        let cfg = TruncationConfig::new(psi, wvec(vec![0.5; 8])).unwrap();
        let w = wvec(w);
        let a = edit(&w, &d, &StepPolicy::default(), &cfg).unwrap();
        let b = edit(&w, &d, &StepPolicy::default(), &cfg).unwrap();
        prop_assert_eq!(a.to_lvec_bytes(), b.to_lvec_bytes());
    }

    #[test]
    fn lvec_roundtrip(v in prop::collection::vec(prop::num::f32::NORMAL, 1..64)) {
        let w = wvec(v.into_iter().map(f64::from).collect());
        prop_assert_eq!(LatentVec::read_lvec(&w.to_lvec_bytes()[..]).unwrap(), w);
    }
}

#[test]
fn truncation_endpoints() {
    let m = wvec(vec![1.0, -2.0, 3.0]);
    let w = wvec(vec![0.25, 7.0, -1.5]);
    let zero = TruncationConfig::new(0.0, m.clone()).unwrap();
    let one = TruncationConfig::new(1.0, m.clone()).unwrap();
    assert_eq!(truncate(&w, &zero).unwrap(), m);
    assert_eq!(truncate(&w, &one).unwrap(), w);
    assert!(TruncationConfig::new(1.5, m).is_err());
}
