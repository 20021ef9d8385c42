use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use proptest::prelude::*;

use mvpose_core::camera::CameraModel;
use mvpose_core::geometry::{procrustes_fit, SimilarityTransform};
use mvpose_core::losses::{consistency_loss, consistency_pair_loss, positional_loss};
use mvpose_core::metrics::{mpjpe, pa_mpjpe};
use mvpose_core::trainer::window_starts;
use mvpose_core::types::{view_pairs, Pose3D, PoseSequence3D};

fn sequence(n: usize, j: usize) -> impl Strategy<Value = PoseSequence3D> {
    prop::collection::vec(-1.0f64..1.0, n * j * 3)
        .prop_map(move |flat| PoseSequence3D::from_flat(&flat, j, 50.0))
}

fn shaped_sequence() -> impl Strategy<Value = PoseSequence3D> {
    (1usize..=8, 4usize..=17).prop_flat_map(|(n, j)| sequence(n, j))
}

fn sequence_pair() -> impl Strategy<Value = (PoseSequence3D, PoseSequence3D)> {
    (1usize..=8, 4usize..=17).prop_flat_map(|(n, j)| (sequence(n, j), sequence(n, j)))
}

fn similarity() -> impl Strategy<Value = SimilarityTransform> {
    (
        prop::array::uniform4(-1.0f64..1.0),
        0.2f64..5.0,
        prop::array::uniform3(-10.0f64..10.0),
    )
        .prop_filter("quaternion near zero", |(q, _, _)| {
            q.iter().map(|v| v * v).sum::<f64>() > 1e-2
        })
        .prop_map(|(q, s, t)| {
            let r = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
                .to_rotation_matrix();
            SimilarityTransform::new(s, *r.matrix(), Vector3::from(t))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fit_recovers_exact_similarity(a in shaped_sequence(), g in similarity()) {
        let b = g.apply(&a);
        let fit = procrustes_fit(&a, &b).unwrap();
        prop_assert!(fit.is_proper(1e-9));
        for (x, y) in fit.apply(&a).to_flat().iter().zip(b.to_flat()) {
            prop_assert!((x - y).abs() <= 1e-8 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn fit_rotation_stays_proper_for_mirrored_targets(a in shaped_sequence(), g in similarity()) {
        let b = g.apply(&a).map_points(|p| Vector3::new(p.x, -p.y, p.z));
        prop_assert!(procrustes_fit(&a, &b).unwrap().is_proper(1e-9));
    }

    #[test]
    fn pair_loss_is_nonnegative_and_zero_on_itself((a, b) in sequence_pair()) {
        prop_assert!(consistency_pair_loss(&a, &b).unwrap().value >= 0.0);
        prop_assert!(consistency_pair_loss(&a, &a).unwrap().value.abs() <= 1e-12);
    }

    #[test]
    fn pair_loss_ignores_similarity_of_source((a, b) in sequence_pair(), g in similarity()) {
        let moved = consistency_pair_loss(&g.apply(&a), &b).unwrap().value;
        let base = consistency_pair_loss(&a, &b).unwrap().value;
        prop_assert!((moved - base).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn pair_loss_never_exceeds_unaligned_distance((a, b) in sequence_pair()) {
        // Identity is a feasible alignment, and least squares never loses to it in RMS terms.
        let aligned = consistency_pair_loss(&a, &b).unwrap().value;
        let raw_rms = (a.to_flat().iter().zip(b.to_flat()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            / (a.len() * a.joint_count()) as f64)
            .sqrt();
        prop_assert!(aligned <= raw_rms + 1e-12);
    }

    #[test]
    fn consistency_of_similar_views_vanishes(a in shaped_sequence(), g in similarity(), h in similarity()) {
        let views = [a.clone(), g.apply(&a), h.apply(&a)];
        prop_assert!(consistency_loss(&views).unwrap().value <= 1e-8);
    }

    #[test]
    fn pa_never_exceeds_mpjpe_in_random_pairs((a, b) in sequence_pair()) {
        let (pred, gt) = (a.scaled(400.0), b.scaled(400.0));
        prop_assert!(pa_mpjpe(&pred, &gt).unwrap() <= mpjpe(&pred, &gt, 0).unwrap() + 1e-9);
    }

    #[test]
    fn mpjpe_ignores_root_translation(a in shaped_sequence(), t in prop::array::uniform3(-100.0f64..100.0)) {
        let moved = a.map_points(|p| p + Vector3::from(t));
        prop_assert!(mpjpe(&moved, &a, 0).unwrap() <= 1e-9);
    }

    #[test]
    fn positional_loss_is_symmetric((a, b) in sequence_pair()) {
        let ab = positional_loss(&a, &b).unwrap().value;
        let ba = positional_loss(&b, &a).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn flat_layout_round_trips(a in shaped_sequence()) {
        let back = PoseSequence3D::from_flat(&a.to_flat(), a.joint_count(), a.frame_rate_hz);
        prop_assert_eq!(back, a);
    }

    #[test]
    fn view_pairs_are_all_unordered_pairs(n in 0usize..12) {
        let pairs = view_pairs(n);
        prop_assert_eq!(pairs.len(), n * n.saturating_sub(1) / 2);
        prop_assert!(pairs.iter().all(|(a, b)| a < b && *b < n));
        prop_assert!(pairs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn windows_cover_every_frame(frames in 1usize..200, w in 1usize..30, stride in 1usize..10) {
        prop_assume!(frames >= w);
        let starts = window_starts(frames, w, stride).unwrap();
        prop_assert_eq!(starts[0], 0);
        prop_assert_eq!(*starts.last().unwrap(), frames - w);
        prop_assert!(starts.windows(2).all(|s| s[0] < s[1] && s[1] - s[0] <= stride));
    }

    #[test]
    fn projection_round_trips(
        azimuth in 0.0f64..360.0,
        p in prop::array::uniform3(-800.0f64..800.0),
    ) {
        let a = azimuth.to_radians();
        let eye = Vector3::new(4000.0 * a.cos(), 4000.0 * a.sin(), 1300.0);
        let cam = CameraModel::look_at(eye, Vector3::new(0.0, 0.0, 900.0), Vector3::z(), 1000.0, [1000, 1000]).unwrap();
        let world = Vector3::from(p) + Vector3::new(0.0, 0.0, 900.0);
        let c = cam.point_to_camera(&world);
        prop_assert!(c.z > 0.0);
        let n = cam.project_point(&c).unwrap();
        let back = cam.unproject(&n, c.z);
        prop_assert!((back - c).norm() <= 1e-9 * c.norm());
        let px = cam.normalized_to_pixel(&n);
        prop_assert!((cam.pixel_to_normalized(&px) - n).norm() <= 1e-12);
    }
}

#[test]
fn normalized_coordinates_follow_image_width() {
    let cam = CameraModel::identity(1000.0, [1000, 600]);
    let n = cam.pixel_to_normalized(&Vector2::new(1000.0, 600.0));
    assert!((n - Vector2::new(1.0, 0.6)).norm() < 1e-12);
    let n = cam.pixel_to_normalized(&Vector2::new(0.0, 0.0));
    assert!((n - Vector2::new(-1.0, -0.6)).norm() < 1e-12);
}

#[test]
fn zero_pose_is_self_consistent() {
    let zeros = PoseSequence3D::new(vec![Pose3D::zeros(17); 5], 50.0);
    assert_eq!(
        consistency_loss(&[zeros.clone(), zeros.clone(), zeros])
            .unwrap()
            .value,
        0.0
    );
}
