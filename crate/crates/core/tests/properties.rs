use nutime_core::byol::momentum_update;
use nutime_core::eval::anomaly::auroc;
use nutime_core::eval::cluster::{adjusted_rand_index, kmeans, normalized_mutual_info, silhouette};
use nutime_core::nme::{scale_weights, NmeConfig};
use nutime_core::tokenizer::{decompose, reconstruct, DEFAULT_STD_FLOOR};
use nutime_core::{ParamStore, RawSeries, Tensor};
use proptest::prelude::*;

/// A series with its window size; some series are constant.
fn windowed_series() -> impl Strategy<Value = (RawSeries, usize)> {
    (1usize..6, prop::sample::select(vec![2usize, 4, 8]), -3i32..4, any::<bool>()).prop_flat_map(
        |(windows, w, exp, constant)| {
            prop::collection::vec(-1.0f64..1.0, windows * w).prop_map(move |v| {
                let scale = 10f64.powi(exp);
                let values = if constant {
                    vec![scale * 0.5; v.len()]
                } else {
                    v.iter().map(|x| scale * (1.0 + x)).collect()
                };
                (RawSeries::univariate("p", None, values).unwrap(), w)
            })
        },
    )
}

proptest! {
    #[test]
    fn window_round_trip((s, w) in windowed_series()) {
        let grid = decompose(&s, w, DEFAULT_STD_FLOOR).unwrap();
        let back = reconstruct(&grid).unwrap();
        for (a, b) in s.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn nme_weights_are_simplex(log_x in -6.0f64..6.0, n in 1usize..10) {
        let a = scale_weights(10f64.powf(log_x), &NmeConfig::centered(n));
        prop_assert!(a.iter().all(|&v| v >= 0.0));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 12)) {
        let t = Tensor::new(vec![3, 4], v).unwrap().softmax().unwrap();
        for i in 0..3 {
            prop_assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auroc_is_rank_invariant(scores in prop::collection::vec(-10.0f64..10.0, 6..20), shift in -5.0f64..5.0) {
        let labels: Vec<bool> = (0..scores.len()).map(|i| i % 3 == 0).collect();
        let a = auroc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.5 + shift).exp()).collect();
        prop_assert!((a - auroc(&mapped, &labels).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn ari_ignores_relabelling(labels in prop::collection::vec(0usize..3, 4..30), perm in Just([2usize, 0, 1])) {
        let relabelled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        prop_assert!((adjusted_rand_index(&labels, &relabelled).unwrap() - 1.0).abs() < 1e-12);
        let nmi = normalized_mutual_info(&labels, &relabelled).unwrap();
        prop_assert!((nmi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cluster_metric_ranges(
        pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 6..25),
        truth_seed in 0u64..100,
    ) {
        let truth: Vec<usize> = (0..pts.len()).map(|i| ((i as u64 * 7 + truth_seed) % 2) as usize).collect();
        if let Ok(km) = kmeans(&pts, 2, truth_seed, 100) {
            let s = silhouette(&pts, &km.assignments).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            let nmi = normalized_mutual_info(&truth, &km.assignments).unwrap();
            prop_assert!((0.0..=1.0).contains(&nmi));
            let ari = adjusted_rand_index(&truth, &km.assignments).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ari));
            prop_assert!(km.wcss.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        }
    }

    #[test]
    fn momentum_stays_between_sources(
        a in prop::collection::vec(-3.0f64..3.0, 5),
        b in prop::collection::vec(-3.0f64..3.0, 5),
        tau in 0.0f64..=1.0,
    ) {
        let mut online = ParamStore::<f64>::new();
        let id = online.add("p", Tensor::new(vec![5], a.clone()).unwrap());
        let mut target = online.prefix(1);
        target.set(id, Tensor::new(vec![5], b.clone()).unwrap()).unwrap();
        momentum_update(&online, &mut target, tau).unwrap();
        for ((t, x), y) in target.get(id).data().iter().zip(&a).zip(&b) {
            prop_assert!(*t >= x.min(*y) - 1e-12 && *t <= x.max(*y) + 1e-12);
        }
    }
}
