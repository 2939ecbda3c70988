use proptest::prelude::*;

use splitfusion::dataset::Trajectory;
use splitfusion::eval::ate_rmse;
use splitfusion::geometry::{CameraIntrinsics, DepthFrame, PixelMask, RigidTransform, Vec3};
use splitfusion::graph::{DeformationGraph, GraphNode};
use splitfusion::icp::energy_arap;
use splitfusion::pipeline::associate;
use splitfusion::tsdf::TsdfVolume;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = RigidTransform> {
    (vec3(3.0), vec3(2.0)).prop_map(|(w, t)| RigidTransform::from_axis_angle(w, t))
}

fn graph(max_nodes: usize) -> impl Strategy<Value = DeformationGraph> {
    (prop::collection::vec(vec3(0.5), 1..max_nodes), 1usize..8)
        .prop_map(|(pts, k)| DeformationGraph::from_nodes(pts.into_iter().map(GraphNode::at).collect(), k, 0.05, 4))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_composes_to_identity(t in pose(), p in vec3(5.0)) {
        let back = t.inverse().apply(&t.apply(&p));
        prop_assert!((back - p).norm() < 1e-12);
        prop_assert!(t.compose(&t.inverse()).angle_to(&RigidTransform::identity()) < 1e-7);
    }

    #[test]
    fn blend_weights_form_a_partition_of_unity(g in graph(40), p in vec3(0.8)) {
        let b = g.bind_point(&p);
        prop_assert!(!b.nodes.is_empty());
        prop_assert!(b.nodes.len() <= g.len().min(g.k_neighbors));
        prop_assert!(b.nodes.iter().all(|&(i, w)| i < g.len() && w >= 0.0));
        prop_assert!((b.nodes.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(b.nodes.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn identity_graph_leaves_points_alone(g in graph(30), p in vec3(0.8)) {
        let b = g.bind_point(&p);
        prop_assert!((g.warp_point(&p, &b) - p).norm() < 1e-12);
    }

    #[test]
    fn rigid_motion_has_no_arap_cost(g in graph(30), m in pose()) {
        let mut g = g;
        for n in &mut g.nodes {
            n.rotation = m.rotation;
            n.translation = m.apply(&n.position) - n.position;
        }
        prop_assert!(energy_arap(&g) < 1e-12);
    }

    #[test]
    fn fused_values_stay_bounded(
        depths in prop::collection::vec(0.6f64..1.4, 1..5),
        shift in vec3(0.05),
    ) {
        let k = CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48, 1000.0).unwrap();
        let mut vol = TsdfVolume::new(Vec3::new(-0.5, -0.4, 0.5), 0.02, [50, 40, 50], 0.08, 3.0).unwrap();
        for (i, d) in depths.iter().enumerate() {
            let f = DepthFrame::new(i as f64, k, vec![*d; k.pixel_count()], None).unwrap();
            vol.integrate_rigid(&f, &RigidTransform::from_translation(shift), None);
        }
        prop_assert!(vol.tsdf.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!(vol.weight.iter().all(|w| (0.0..=3.0).contains(w)));
        prop_assert!(vol.observed_voxels() > 0);
    }

    #[test]
    fn ate_ignores_a_rigid_change_of_frame(
        positions in prop::collection::vec(vec3(2.0), 3..30),
        noise in prop::collection::vec(vec3(0.02), 30),
        frame in pose(),
    ) {
        let reference = Trajectory {
            poses: positions.iter().enumerate().map(|(i, p)| (i as f64, RigidTransform::from_translation(*p))).collect(),
        };
        let est = Trajectory {
            poses: positions
                .iter()
                .zip(&noise)
                .enumerate()
                .map(|(i, (p, n))| (i as f64, RigidTransform::from_translation(p + n)))
                .collect(),
        };
        let a = ate_rmse(&est, &reference).unwrap();
        let b = ate_rmse(&est.transformed(&frame), &reference).unwrap();
        prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
        prop_assert!(a.rmse <= (noise.iter().take(positions.len()).map(|n| n.norm_squared()).sum::<f64>() / positions.len() as f64).sqrt() + 1e-12);
        prop_assert!(ate_rmse(&reference.transformed(&frame), &reference).unwrap().rmse < 1e-9);
    }

    #[test]
    fn tum_text_round_trips(poses in prop::collection::vec(pose(), 1..20)) {
        let t = Trajectory { poses: poses.into_iter().enumerate().map(|(i, p)| (i as f64 * 0.25, p)).collect() };
        let back = Trajectory::parse_tum(&t.to_tum_string()).unwrap();
        prop_assert_eq!(back.len(), t.len());
        for (a, b) in t.poses.iter().zip(&back.poses) {
            prop_assert!((a.1.translation - b.1.translation).norm() == 0.0);
            prop_assert!(a.1.angle_to(&b.1) < 1e-7);
        }
    }

    #[test]
    fn association_is_a_thresholded_matching(
        iou in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 0..6),
        threshold in 0.05f64..0.9,
    ) {
        let m = associate(&iou, threshold);
        prop_assert_eq!(m.len(), iou.len());
        let mut used = [false; 5];
        for (r, c) in m.iter().enumerate() {
            if let Some(c) = *c {
                prop_assert!(!used[c]);
                used[c] = true;
                prop_assert!(iou[r][c] >= threshold);
            }
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 48), b in prop::collection::vec(any::<bool>(), 48)) {
        let ma = PixelMask::from_fn(8, 6, |u, v| a[v * 8 + u]);
        let mb = PixelMask::from_fn(8, 6, |u, v| b[v * 8 + u]);
        let x = ma.iou(&mb);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, mb.iou(&ma));
        if !ma.is_empty() {
            prop_assert_eq!(ma.iou(&ma), 1.0);
        }
    }
}
