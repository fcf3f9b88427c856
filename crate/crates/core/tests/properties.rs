use pcim_core::eval::{auc, mass_accuracy, pixel_order, rank_accuracy, ssim, Direction, FidelityCurve};
use pcim_core::{AttributionMap, GroundTruthMask, Method};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn map(h: usize, w: usize, v: Vec<f32>) -> AttributionMap {
    AttributionMap::new(h, w, v, Method::Saliency).unwrap()
}

fn map_pair() -> impl Strategy<Value = (usize, usize, Vec<f32>, Vec<f32>)> {
    (7usize..12, 7usize..12).prop_flat_map(|(h, w)| {
        (
            Just(h),
            Just(w),
            prop::collection::vec(-2.0f32..2.0, h * w),
            prop::collection::vec(-2.0f32..2.0, h * w),
        )
    })
}

/// Small-integer maps (exact under the transforms below) with a non-empty mask.
fn int_map_and_mask() -> impl Strategy<Value = (usize, Vec<f32>, Vec<bool>)> {
    (2usize..6).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((-4i32..8).prop_map(|v| v as f32), n * n),
            prop::collection::vec(any::<bool>(), n * n).prop_filter("non-empty mask", |m| m.iter().any(|&c| c)),
        )
    })
}

proptest! {
    #[test]
    fn ssim_is_symmetric_and_reflexive((h, w, a, b) in map_pair()) {
        let (a, b) = (map(h, w, a), map(h, w, b));
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-9);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn localization_is_invariant_to_monotone_rescaling((n, v, m) in int_map_and_mask()) {
        let mask = GroundTruthMask::new(n, n, m).unwrap();
        let a = map(n, n, v.clone());
        // 2v + 1 keeps order and ties exactly.
        let b = map(n, n, v.iter().map(|x| 2.0 * x + 1.0).collect());
        prop_assert_eq!(rank_accuracy(&a, &mask).unwrap(), rank_accuracy(&b, &mask).unwrap());
        let scaled = map(n, n, v.iter().map(|x| 4.0 * x).collect());
        match (mass_accuracy(&a, &mask), mass_accuracy(&scaled, &mask)) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x, y);
                prop_assert!((0.0..=1.0).contains(&x));
            }
            (Err(_), Err(_)) => prop_assert!(v.iter().all(|&x| x <= 0.0)),
            _ => prop_assert!(false, "definedness changed under scaling"),
        }
        let r = rank_accuracy(&a, &mask).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn pixel_order_is_a_descending_permutation(v in prop::collection::vec(-3i32..3, 1..40)) {
        let v: Vec<f32> = v.into_iter().map(|x| x as f32).collect();
        let order = pixel_order(&v);
        let mut seen = order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..v.len()).collect::<Vec<_>>());
        for pair in order.windows(2) {
            let (i, j) = (pair[0], pair[1]);
            prop_assert!(v[i] > v[j] || (v[i] == v[j] && i < j));
        }
    }

    #[test]
    fn auc_lies_within_the_curve_range(p in prop::collection::vec(0.0f64..=1.0, 2..30)) {
        let n = p.len() - 1;
        let curve = FidelityCurve {
            direction: Direction::Deletion,
            image_id: "x".into(),
            method: Method::Random,
            points: p.iter().enumerate().map(|(i, &v)| (i as f64 / n as f64, v)).collect(),
        };
        let a = auc(&curve).unwrap();
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
    }

    #[test]
    fn normalization_is_idempotent((h, w, a, _b) in map_pair()) {
        let n = map(h, w, a).normalized();
        prop_assert!(n.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let again = n.normalized();
        prop_assert_eq!(again.values(), n.values());
    }
}

#[test]
fn random_maps_average_rank_accuracy_to_mask_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10;
    for q in [0.1, 0.3, 0.6] {
        let cells: Vec<bool> = (0..n * n).map(|i| (i as f64) < q * (n * n) as f64).collect();
        let mask = GroundTruthMask::new(n, n, cells).unwrap();
        let trials = 4000;
        let mean: f64 = (0..trials)
            .map(|_| rank_accuracy(&map(n, n, (0..n * n).map(|_| rng.gen()).collect()), &mask).unwrap())
            .sum::<f64>()
            / trials as f64;
        assert!((mean - q).abs() < 0.01, "q {q}: mean {mean}");
    }
}
