use criterion::{criterion_group, criterion_main, Criterion};
use sand_core::renderer::buffer_to_cloud;
use sand_core::sand::count_inliers;
use sand_core::{
    crop_and_backproject, fixtures, generate_scene, icp_align, render_depth, synth_detections, DetectionNoiseConfig,
    IcpConfig, MeshCatalog, Particle, Pose6D, SandConfig, SandFilter, SceneSpec, Vec3,
};
use std::hint::black_box;

fn pose() -> Pose6D {
    Pose6D::from_rotation_vector(Vec3::new(0.01, -0.02, 0.4), Vec3::new(0.4, 1.1, -0.3))
}

fn render(c: &mut Criterion) {
    let cam = SceneSpec::default().camera;
    let mesh = fixtures::builtin("drill").unwrap();
    let p = pose();
    c.bench_function("render_depth drill 128x128", |b| b.iter(|| render_depth(black_box(&mesh), &p, &cam)));
}

fn scoring(c: &mut Criterion) {
    let spec = SceneSpec { objects: [4, 4], ..SceneSpec::default() };
    let gt = generate_scene(&spec, &MeshCatalog::builtin(), 3).unwrap();
    let dets = synth_detections(&gt, &DetectionNoiseConfig::default(), 3);
    let obj = &gt.objects[0];
    let filter =
        SandFilter::new(&gt.depth, &dets, &obj.class_id, &obj.mesh, &gt.camera, &SandConfig::default()).unwrap();
    let source = dets.indices_of(&obj.class_id).next().unwrap();
    let particle = Particle { pose: obj.pose, weight: 0.0, source };
    c.bench_function("weigh one particle", |b| b.iter(|| filter.weigh(black_box(&particle))));

    let rendered = render_depth(&obj.mesh, &obj.pose, &gt.camera);
    let crop = crop_and_backproject(&gt.depth, &dets.detections[source].bbox, &gt.camera).unwrap();
    c.bench_function("count_inliers", |b| b.iter(|| count_inliers(black_box(&rendered), &crop, 0.01)));

    let mut ps = filter.init_particles();
    c.bench_function("score 625 particles", |b| b.iter(|| filter.score(black_box(&mut ps))));
}

fn icp(c: &mut Criterion) {
    let cam = SceneSpec::default().camera;
    let mesh = fixtures::builtin("mug").unwrap();
    let target = buffer_to_cloud(&render_depth(&mesh, &pose(), &cam), &cam);
    let source = sand_core::PointCloud::from_points(mesh.model_points(500, 1));
    let init = Pose6D::new(pose().translation() + Vec3::new(0.01, 0.0, 0.01), *pose().rotation());
    c.bench_function("icp_align mug", |b| {
        b.iter(|| icp_align(black_box(&source), &target, &init, &IcpConfig::default()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = render, scoring, icp
}
criterion_main!(benches);
