//! Property tests for the structural invariants.

use proptest::prelude::*;

use noise2sdf::geom::{
    add_gaussian_noise, normalize_to_unit_sphere, Point3, PointCloud,
};
use noise2sdf::metrics::{f_score, l1_chamfer, l2_chamfer};
use noise2sdf::net::SdfNetwork;
use noise2sdf::transport::{default_bid_budget, emd_approx, emd_exact};

fn arb_point() -> impl Strategy<Value = Point3> {
    (
        -10.0f64..10.0,
        -10.0f64..10.0,
        -10.0f64..10.0,
    )
        .prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(arb_point(), 1..max).prop_map(PointCloud::from_points)
}

fn equal_size_pair(max: usize) -> impl Strategy<Value = (PointCloud, PointCloud)> {
    (2..max).prop_flat_map(|n| {
        (
            prop::collection::vec(arb_point(), n).prop_map(PointCloud::from_points),
            prop::collection::vec(arb_point(), n).prop_map(PointCloud::from_points),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_then_invert_is_identity(cloud in arb_cloud(40)) {
        // Degenerate all-equal clouds are rejected; skip them.
        prop_assume!(cloud.points.windows(2).any(|w| w[0] != w[1]) || cloud.len() == 1);
        match normalize_to_unit_sphere(&cloud) {
            Ok((normalized, transform)) => {
                let back = transform.invert_cloud(&normalized);
                for (a, b) in back.points.iter().zip(&cloud.points) {
                    prop_assert!((*a - *b).norm() < 1e-9 * (1.0 + b.norm()));
                }
                let max_norm = normalized.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
                prop_assert!((max_norm - 1.0).abs() < 1e-9);
            }
            Err(_) => prop_assert!(cloud.len() == 1 || cloud.points.windows(2).all(|w| w[0] == w[1])),
        }
    }

    #[test]
    fn zero_sigma_noise_is_identity(cloud in arb_cloud(30), seed in any::<u64>()) {
        let out = add_gaussian_noise(&cloud, 0.0, seed).unwrap();
        prop_assert_eq!(out.points, cloud.points);
    }

    #[test]
    fn emd_is_symmetric_and_zero_on_self((a, b) in equal_size_pair(10)) {
        let ab = emd_exact(&a, &b).unwrap();
        let ba = emd_exact(&b, &a).unwrap();
        prop_assert!(ab.is_bijection());
        prop_assert!((ab.cost - ba.cost).abs() < 1e-9 * (1.0 + ab.cost));
        let aa = emd_exact(&a, &a).unwrap();
        prop_assert_eq!(aa.cost, 0.0);
    }

    #[test]
    fn emd_cost_is_sum_of_pair_distances((a, b) in equal_size_pair(10)) {
        let m = emd_exact(&a, &b).unwrap();
        let recomputed: f64 = m
            .assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                let d = a.points[i] - b.points[j];
                d.norm()
            })
            .sum();
        prop_assert_eq!(m.cost, recomputed);
    }

    #[test]
    fn auction_returns_bijection_never_beating_exact((a, b) in equal_size_pair(24)) {
        let exact = emd_exact(&a, &b).unwrap();
        let approx = emd_approx(&a, &b, default_bid_budget(a.len())).unwrap();
        prop_assert!(approx.is_bijection());
        prop_assert!(approx.cost >= exact.cost - 1e-9);
        prop_assert!(approx.cost <= 1.02 * exact.cost + 1e-9);
    }

    #[test]
    fn chamfer_variants_symmetric_nonnegative(a in arb_cloud(25), b in arb_cloud(25)) {
        let l2ab = l2_chamfer(&a, &b).unwrap();
        let l2ba = l2_chamfer(&b, &a).unwrap();
        prop_assert!((l2ab - l2ba).abs() < 1e-12 * (1.0 + l2ab));
        prop_assert!(l2ab >= 0.0);
        let l1ab = l1_chamfer(&a, &b).unwrap();
        let l1ba = l1_chamfer(&b, &a).unwrap();
        prop_assert!((l1ab - l1ba).abs() < 1e-12 * (1.0 + l1ab));
        prop_assert!(l1ab >= 0.0);
        // Zero exactly when every point coincides with one from the other
        // cloud.
        prop_assert_eq!(l2_chamfer(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(l1_chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn f_score_is_monotone_in_tau(a in arb_cloud(20), b in arb_cloud(20)) {
        let mut prev = 0.0;
        for tau in [0.05f64, 0.2, 1.0, 5.0, 40.0] {
            let f = f_score(&a, &b, tau).unwrap();
            prop_assert!(f >= prev - 1e-12);
            prop_assert!((0.0..=1.0).contains(&f));
            prev = f;
        }
    }

    #[test]
    fn network_output_stays_in_open_unit_interval(
        seed in any::<u64>(),
        layers in 1usize..4,
        width in 1usize..20,
        p in arb_point(),
    ) {
        let net = SdfNetwork::init(layers, width, seed).unwrap();
        let v = net.eval(p * 0.2).value;
        prop_assert!(v > -1.0 && v < 1.0);
    }
}
