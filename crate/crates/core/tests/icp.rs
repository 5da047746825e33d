use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::UnitQuaternion;
use sand_core::harness::{compose_scene, PlacedObject, TableSpec};
use sand_core::{
    fixtures, icp_estimate, pose_error, BoundingBox, DepthImage, Detection, Error, IcpConfig, Pose6D, SceneGroundTruth,
    SceneSpec, Vec3,
};

/// The drill alone (no rendered table) standing in the table frame with the
/// given yaw.
fn scene_with_yaw(yaw: f64) -> SceneGroundTruth {
    let table = TableSpec { plane: false, ..Default::default() };
    let spec = SceneSpec { table, ..SceneSpec::default() }.noiseless();
    let mesh = fixtures::builtin("drill").unwrap();
    let min_z = mesh.vertices().iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
    let on_table =
        Pose6D::new(Vec3::new(0.02, -0.01, -min_z + 5e-4), UnitQuaternion::from_scaled_axis(Vec3::z() * yaw));
    let pose = spec.table_pose().compose(&on_table);
    compose_scene(&spec, vec![PlacedObject { class_id: "drill".into(), mesh: Arc::new(mesh), pose }], 7)
}

fn oracle(gt: &SceneGroundTruth) -> Detection {
    Detection { class_id: "drill".into(), bbox: gt.visible_box(0).unwrap(), score: 1.0 }
}

#[test]
fn canonical_orientation_is_recovered() {
    let gt = scene_with_yaw(0.0);
    let o = &gt.objects[0];
    let est = icp_estimate(&gt.depth, &oracle(&gt), &o.mesh, &gt.camera, &IcpConfig::default(), &gt.upright()).unwrap();
    let e = pose_error(&est.pose, &o.pose, &o.mesh);
    assert!(e.add < 0.01, "ADD {}", e.add);
}

#[test]
fn half_turn_defeats_the_fixed_initialization() {
    let gt = scene_with_yaw(PI);
    let o = &gt.objects[0];
    let est = icp_estimate(&gt.depth, &oracle(&gt), &o.mesh, &gt.camera, &IcpConfig::default(), &gt.upright()).unwrap();
    let e = pose_error(&est.pose, &o.pose, &o.mesh);
    assert!(e.add > 0.03, "ADD {}", e.add);
}

#[test]
fn empty_crop_is_an_error() {
    let gt = scene_with_yaw(0.0);
    let o = &gt.objects[0];
    let blank = DepthImage::from_meters(128, 128, vec![0.0; 128 * 128]);
    let det = Detection { class_id: "drill".into(), bbox: BoundingBox::new(0, 0, 20, 20), score: 1.0 };
    let r = icp_estimate(&blank, &det, &o.mesh, &gt.camera, &IcpConfig::default(), &gt.upright());
    assert!(matches!(r, Err(Error::EmptyCloud)), "{r:?}");
}
