//! Property-based checks for the pure numeric kernels.

use proptest::prelude::*;
use voxelseg::kmeans::{kmeans, nearest_centroid};
use voxelseg::metrics::seg_metrics;
use voxelseg::render::{quadrature_weights, sample_span};
use voxelseg::types::LabelMap;

fn label_maps(k: u8, n_views: usize) -> impl Strategy<Value = Vec<LabelMap>> {
    prop::collection::vec(
        prop::collection::vec(0..=k, 36..=36)
            .prop_map(|data| LabelMap { width: 6, height: 6, data }),
        n_views..=n_views,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Relabeling predicted foreground classes by any permutation leaves
    /// acc and mIoU unchanged: the matcher undoes the shuffle.
    #[test]
    fn seg_metrics_permutation_invariant(
        pred in label_maps(3, 2),
        gt in label_maps(3, 2),
        swap in prop::sample::select(vec![(1u8, 2u8), (1, 3), (2, 3)]),
    ) {
        prop_assume!(gt.iter().any(|g| g.data.iter().any(|&l| l != 0)));
        let base = seg_metrics(&pred, &gt);
        prop_assume!(base.is_ok());
        let base = base.unwrap();

        let permuted: Vec<LabelMap> = pred
            .iter()
            .map(|p| LabelMap {
                width: p.width,
                height: p.height,
                data: p
                    .data
                    .iter()
                    .map(|&l| {
                        if l == swap.0 { swap.1 } else if l == swap.1 { swap.0 } else { l }
                    })
                    .collect(),
            })
            .collect();
        let shuffled = seg_metrics(&permuted, &gt).unwrap();
        prop_assert!((base.acc - shuffled.acc).abs() < 1e-12);
        prop_assert!((base.miou - shuffled.miou).abs() < 1e-12);
    }

    /// Every point ends up assigned to its nearest centroid, and centroids
    /// sit at the mean of their members.
    #[test]
    fn kmeans_fixed_point(
        points in prop::collection::vec(-1.0f32..1.0, 24..=60),
        k in 1usize..4,
        seed in 0u64..32,
    ) {
        let dim = 2;
        prop_assume!(points.len() % dim == 0);
        let km = kmeans(&points, dim, k, seed);
        let n = points.len() / dim;
        prop_assert_eq!(km.assignment.len(), n);
        for i in 0..n {
            let a = nearest_centroid(&km.centroids, dim, &points[i * dim..(i + 1) * dim]);
            let assigned = km.assignment[i] as usize;
            // Assignment must be exactly as close as the nearest centroid
            // (ties may break either way).
            let d = |c: usize| -> f64 {
                (0..dim)
                    .map(|j| {
                        let diff = points[i * dim + j] as f64 - km.centroids[c * dim + j];
                        diff * diff
                    })
                    .sum()
            };
            prop_assert!(d(assigned) <= d(a) + 1e-9);
        }
    }

    /// Quadrature weights are a partial partition of unity: nonnegative and
    /// summing to at most 1 (the remainder is the transmitted fraction).
    #[test]
    fn quadrature_weights_form_partial_partition(
        sigmas in prop::collection::vec(0.0f64..30.0, 1..40),
        delta in 0.001f64..0.2,
    ) {
        let deltas = vec![delta; sigmas.len()];
        let w = quadrature_weights(&sigmas, &deltas);
        let sum: f64 = w.iter().sum();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!(sum <= 1.0 + 1e-12, "weights sum to {sum}");
    }

    /// Midpoint samples lie inside the span and the step sizes cover it.
    #[test]
    fn sample_span_midpoints_cover(
        t0 in 0.0f64..2.0,
        len in 0.01f64..4.0,
        n in 1usize..64,
    ) {
        let t1 = t0 + len;
        let (ts, deltas) = sample_span(t0, t1, n, None);
        prop_assert_eq!(ts.len(), n);
        for &t in &ts {
            prop_assert!(t >= t0 && t <= t1);
        }
        for w in ts.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        let total: f64 = deltas.iter().sum();
        prop_assert!(total <= len + 1e-12);
    }
}
