//! Property tests over the public surface: rotation algebra invariants,
//! metric invariances, and persistence roundtrips.

use proptest::prelude::*;

use ring_core::eval::mae_deg;
use ring_core::formats::{read_dataset, write_dataset};
use ring_core::math::{angle_between_deg, angle_between_rad, heading_decompose, Quat, Vec3};
use ring_core::rcmg::{generate_pair, AblationFlags, RcmgRanges};
use ring_core::training::orientation_loss;
use ring_core::ParentArray;

fn quat_strategy() -> impl Strategy<Value = Quat> {
    (
        -1.0..1.0f64,
        -1.0..1.0f64,
        -1.0..1.0f64,
        -1.0..1.0f64,
    )
        .prop_filter_map("near-zero quaternion", |(w, x, y, z)| {
            let q = Quat::new(w, x, y, z);
            if q.norm() > 0.1 {
                Some(q.normalized())
            } else {
                None
            }
        })
}

fn vec_strategy() -> impl Strategy<Value = Vec3> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn composition_is_associative(a in quat_strategy(), b in quat_strategy(), c in quat_strategy()) {
        let left = (a * b) * c;
        let right = a * (b * c);
        prop_assert!(angle_between_rad(left, right) < 1e-9);
    }

    #[test]
    fn rotation_distributes_over_composition(
        a in quat_strategy(),
        b in quat_strategy(),
        v in vec_strategy(),
    ) {
        let lhs = (a * b).rotate(v);
        let rhs = a.rotate(b.rotate(v));
        prop_assert!((lhs - rhs).norm() < 1e-9);
    }

    #[test]
    fn angle_metric_is_symmetric_and_sign_invariant(a in quat_strategy(), b in quat_strategy()) {
        prop_assert!((angle_between_deg(a, b) - angle_between_deg(b, a)).abs() < 1e-12);
        prop_assert!((angle_between_deg(a, b) - angle_between_deg(-a, b)).abs() < 1e-12);
        prop_assert!(angle_between_deg(a, b) >= 0.0);
        prop_assert!(angle_between_deg(a, b) <= 180.0);
    }

    #[test]
    fn heading_decomposition_recomposes_with_vertical_twist(q in quat_strategy()) {
        let (heading, inclination) = heading_decompose(q, Vec3::Z);
        prop_assert!(angle_between_rad(heading * inclination, q) < 1e-9);
        // Twist axis parallel to up.
        prop_assert!(heading.x.abs() < 1e-9 && heading.y.abs() < 1e-9);
    }

    #[test]
    fn loss_is_invariant_to_per_entry_sign_flips(seed in 0u64..500, mask in 0usize..64) {
        let pair = generate_pair(seed, 4, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
            .unwrap();
        let parents = ParentArray::chain(3);
        let mut flipped = pair.y.clone();
        for t in 0..4 {
            for node in 0..3 {
                if mask >> (t * 3 + node) & 1 == 1 {
                    flipped.set(t, node, -pair.y.get(t, node));
                }
            }
        }
        let loss = orientation_loss(&flipped, &pair.y, &parents, 0).unwrap();
        prop_assert!(loss < 1e-10, "sign flip changed the loss: {loss}");
        let mae = mae_deg(&flipped, &pair.y, &parents, 100.0, 0.0).unwrap().overall_deg;
        prop_assert!(mae < 1e-5, "sign flip changed the MAE: {mae}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dataset_roundtrip_is_quantization_stable(seed in 0u64..1000) {
        let pair = generate_pair(seed, 20, 100.0, 3, AblationFlags::ALL_OFF, &RcmgRanges::default())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pair.ringds");
        write_dataset(&path, std::slice::from_ref(&pair)).unwrap();
        let loaded = read_dataset(&path).unwrap();
        write_dataset(&path, &loaded).unwrap();
        let again = read_dataset(&path).unwrap();
        prop_assert_eq!(loaded, again);
    }
}
