//! Synthetic tabletop scenes with ground truth, and the experiment runner
//! comparing estimators on them.
//!
//! The camera looks down at a table plane; objects rest on the plane with a
//! random yaw and, optionally, tipped onto a side. All objects and the plane
//! are z-buffered together, so occlusion is real.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detection::{synth_detections, DetectionNoiseConfig, DetectionSet};
use crate::error::{io_err, Error, Result};
use crate::evaluation::{accuracy_curve, default_thresholds, pose_error, AccuracyCurve, PoseError};
use crate::fixtures;
use crate::geometry::{CameraIntrinsics, Pixel, Pose6D, TriangleMesh, Vec3};
use crate::icp::{icp_estimate, IcpConfig};
use crate::observation::{BoundingBox, DepthImage};
use crate::renderer::DepthBuffer;
use crate::sand::{run_sand, PoseEstimate, SandConfig};

/// Where a class's model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub class: String,
    /// Built-in model name; defaults to `class`.
    #[serde(default)]
    pub builtin: Option<String>,
    /// Mesh file, relative to the scene spec file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Overrides the model's symmetric flag.
    #[serde(default)]
    pub symmetric: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSpec {
    /// Render the support plane.
    pub plane: bool,
    /// Distance from the camera to the table origin along the optical axis, m.
    pub distance: f64,
    /// Downward tilt of the optical axis below horizontal, degrees.
    pub pitch_deg: f64,
    pub half_extent: f64,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec { plane: true, distance: 0.5, pitch_deg: 50.0, half_extent: 1.5 }
    }
}

/// Recipe for random scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub camera: CameraIntrinsics,
    /// Empty means the whole built-in catalog.
    pub meshes: Vec<MeshSpec>,
    /// Object count range, inclusive; each scene uses distinct classes.
    pub objects: [usize; 2],
    pub table: TableSpec,
    /// Objects are centered in a square of this half-width on the table, m.
    pub placement_radius: f64,
    pub tip_over_probability: f64,
    /// Allowed overlap of footprint discs, meters (0 = strictly apart).
    pub interpenetration_tolerance: f64,
    pub max_attempts: usize,
    /// Additive Gaussian depth noise, meters.
    pub depth_noise: f64,
    /// Per-pixel probability of losing a depth reading.
    pub dropout: f64,
    pub detection_noise: DetectionNoiseConfig,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            camera: CameraIntrinsics::new(110.0, 110.0, 64.0, 64.0, 128, 128).expect("valid default camera"),
            meshes: Vec::new(),
            objects: [3, 6],
            table: TableSpec::default(),
            placement_radius: 0.15,
            tip_over_probability: 0.3,
            interpenetration_tolerance: 0.0,
            max_attempts: 500,
            depth_noise: 0.003,
            dropout: 0.02,
            detection_noise: DetectionNoiseConfig::default(),
        }
    }
}

impl SceneSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn noiseless(mut self) -> Self {
        self.depth_noise = 0.0;
        self.dropout = 0.0;
        self
    }

    /// Pose of the table frame (z up) in the camera frame.
    pub fn table_pose(&self) -> Pose6D {
        let (s, c) = self.table.pitch_deg.to_radians().sin_cos();
        let forward = Vec3::new(0.0, -s, c);
        let up = Vec3::new(0.0, -c, -s);
        let m = Matrix3::from_columns(&[Vec3::x(), forward, up]);
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        Pose6D::new(Vec3::new(0.0, 0.0, self.table.distance), rot)
    }
}

/// Class name to model, in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct MeshCatalog {
    entries: Vec<(String, Arc<TriangleMesh>)>,
}

impl MeshCatalog {
    pub fn builtin() -> Self {
        let mut c = MeshCatalog::default();
        for name in fixtures::CATALOG {
            c.insert(name, fixtures::builtin(name).expect("catalog names resolve"));
        }
        c
    }

    /// Resolves the spec's mesh list; relative paths are taken from `base`.
    pub fn from_spec(spec: &SceneSpec, base: &Path) -> Result<Self> {
        if spec.meshes.is_empty() {
            return Ok(Self::builtin());
        }
        let mut c = MeshCatalog::default();
        for m in &spec.meshes {
            let mut mesh = match (&m.path, &m.builtin) {
                (Some(p), _) => TriangleMesh::load(&base.join(p))?,
                (None, name) => {
                    let name = name.as_deref().unwrap_or(&m.class);
                    fixtures::builtin(name).ok_or_else(|| Error::UnknownMesh(name.to_string()))?
                }
            };
            if let Some(s) = m.symmetric {
                mesh.symmetric = s;
            }
            c.insert(&m.class, mesh);
        }
        Ok(c)
    }

    pub fn insert(&mut self, class: &str, mesh: TriangleMesh) {
        let mesh = Arc::new(mesh);
        match self.entries.iter_mut().find(|(c, _)| c == class) {
            Some(slot) => slot.1 = mesh,
            None => self.entries.push((class.to_string(), mesh)),
        }
    }

    pub fn get(&self, class: &str) -> Option<&Arc<TriangleMesh>> {
        self.entries.iter().find(|(c, _)| c == class).map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<TriangleMesh>)> {
        self.entries.iter().map(|(c, m)| (c.as_str(), m))
    }
}

#[derive(Debug, Clone)]
pub struct PlacedObject {
    pub class_id: String,
    pub mesh: Arc<TriangleMesh>,
    /// Object-to-camera transform.
    pub pose: Pose6D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub depth_sigma: f64,
    pub dropout: f64,
}

const NO_OWNER: u16 = u16::MAX;

#[derive(Debug, Clone)]
pub struct SceneGroundTruth {
    pub scene_id: String,
    pub seed: u64,
    pub camera: CameraIntrinsics,
    /// Table frame in camera coordinates (objects rest in it even when the
    /// plane itself is not rendered). `None` for scenes loaded without one.
    pub table: Option<Pose6D>,
    pub objects: Vec<PlacedObject>,
    /// Observed depth after noise and millimeter quantization.
    pub depth: DepthImage,
    /// Noise-free composite render.
    pub clean: DepthBuffer,
    /// Per pixel: index of the object that owns the visible surface.
    owner: Vec<u16>,
    pub noise: NoiseRecord,
}

impl SceneGroundTruth {
    pub fn owner(&self, row: u32, col: u32) -> Option<usize> {
        let o = self.owner[row as usize * self.camera.width as usize + col as usize];
        (o != NO_OWNER).then_some(o as usize)
    }

    pub fn visible_pixels(&self, object: usize) -> impl Iterator<Item = Pixel> + '_ {
        let w = self.camera.width;
        self.owner
            .iter()
            .enumerate()
            .filter(move |(_, &o)| o as usize == object)
            .map(move |(i, _)| Pixel { row: i as u32 / w, col: i as u32 % w })
    }

    pub fn visible_box(&self, object: usize) -> Option<BoundingBox> {
        BoundingBox::around(self.visible_pixels(object))
    }

    /// Canonical upright orientation: the table frame's rotation, or the
    /// identity without a table.
    pub fn upright(&self) -> UnitQuaternion<f64> {
        self.table.map(|t| *t.rotation()).unwrap_or_else(UnitQuaternion::identity)
    }

    pub fn object_of(&self, class_id: &str) -> Option<&PlacedObject> {
        self.objects.iter().find(|o| o.class_id == class_id)
    }
}

fn plane_mesh(half: f64) -> TriangleMesh {
    TriangleMesh::new(
        vec![
            Vec3::new(-half, -half, 0.0),
            Vec3::new(half, -half, 0.0),
            Vec3::new(half, half, 0.0),
            Vec3::new(-half, half, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("plane is well formed")
}

/// Renders the noise-free composite and the per-pixel owner map.
pub fn render_composite(
    cam: &CameraIntrinsics,
    table: Option<(&Pose6D, f64)>,
    objects: &[PlacedObject],
) -> (DepthBuffer, Vec<u16>) {
    let mut composite = DepthBuffer::for_camera(cam);
    if let Some((pose, half)) = table {
        composite.draw(&plane_mesh(half), pose, cam);
    }
    for o in objects {
        composite.draw(&o.mesh, &o.pose, cam);
    }
    let mut owner = vec![NO_OWNER; cam.pixel_count()];
    let mut solo = DepthBuffer::for_camera(cam);
    for (i, o) in objects.iter().enumerate() {
        solo.clear();
        solo.draw(&o.mesh, &o.pose, cam);
        for (k, (&s, &c)) in solo.as_slice().iter().zip(composite.as_slice()).enumerate() {
            if s.is_finite() && s == c && owner[k] == NO_OWNER {
                owner[k] = i as u16;
            }
        }
    }
    (composite, owner)
}

struct Footprint {
    center: [f64; 2],
    radius: f64,
}

/// Whole layouts tried before giving up; a layout fails when one object
/// finds no free spot in `max_attempts` draws.
const LAYOUT_RESTARTS: usize = 100;

fn place_objects(
    spec: &SceneSpec,
    catalog: &MeshCatalog,
    picks: &[usize],
    table: &Pose6D,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<Vec<PlacedObject>, usize> {
    let mut placed: Vec<Footprint> = Vec::new();
    let mut objects = Vec::new();
    for (n, &ci) in picks.iter().enumerate() {
        let (class, mesh) = &catalog.entries[ci];
        let mut accepted = None;
        for _ in 0..spec.max_attempts.max(1) {
            let yaw = rng.random_range(0.0..TAU);
            let tip = if rng.random::<f64>() < spec.tip_over_probability {
                let axis = if rng.random::<bool>() { Vec3::x() } else { Vec3::y() };
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                UnitQuaternion::from_scaled_axis(axis * (sign * FRAC_PI_2))
            } else {
                UnitQuaternion::identity()
            };
            let x = rng.random_range(-spec.placement_radius..=spec.placement_radius);
            let y = rng.random_range(-spec.placement_radius..=spec.placement_radius);
            let rot = UnitQuaternion::from_scaled_axis(Vec3::z() * yaw) * tip;
            let verts: Vec<Vec3> = mesh.vertices().iter().map(|v| rot * v).collect();
            let min_z = verts.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
            let radius = verts.iter().map(|v| v.x.hypot(v.y)).fold(0.0, f64::max);
            let clear = placed.iter().all(|f| {
                (f.center[0] - x).hypot(f.center[1] - y) >= f.radius + radius - spec.interpenetration_tolerance
            });
            if clear {
                // Half a millimeter of clearance keeps the base off the plane.
                let on_table = Pose6D::new(Vec3::new(x, y, -min_z + 5e-4), rot);
                accepted = Some((Footprint { center: [x, y], radius }, on_table));
                break;
            }
        }
        let (fp, on_table) = accepted.ok_or(n)?;
        placed.push(fp);
        objects.push(PlacedObject { class_id: class.clone(), mesh: mesh.clone(), pose: table.compose(&on_table) });
    }

    Ok(objects)
}

/// Samples a scene. Object placement, noise and class choice all derive
/// from `seed`.
pub fn generate_scene(spec: &SceneSpec, catalog: &MeshCatalog, seed: u64) -> Result<SceneGroundTruth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = spec.table_pose();

    let [lo, hi] = spec.objects;
    let k = if hi > lo { rng.random_range(lo..=hi) } else { lo }.min(catalog.len());
    let mut picks = sample(&mut rng, catalog.len(), k).into_vec();
    picks.sort_unstable();

    let mut objects = None;
    let mut stuck = 0;
    for _ in 0..LAYOUT_RESTARTS {
        match place_objects(spec, catalog, &picks, &table, &mut rng) {
            Ok(o) => {
                objects = Some(o);
                break;
            }
            Err(n) => stuck = n,
        }
    }
    let objects = objects.ok_or(Error::PlacementFailed { object: stuck, attempts: spec.max_attempts })?;

    Ok(compose_scene(spec, objects, seed))
}

/// Renders explicitly placed objects (poses in the camera frame) into a
/// scene with the spec's camera, table and sensor noise.
pub fn compose_scene(spec: &SceneSpec, objects: Vec<PlacedObject>, seed: u64) -> SceneGroundTruth {
    let cam = spec.camera;
    let table = spec.table_pose();
    let table_arg = spec.table.plane.then_some((&table, spec.table.half_extent));
    let (clean, owner) = render_composite(&cam, table_arg, &objects);

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let depth: Vec<f64> = clean
        .as_slice()
        .iter()
        .map(|&d| {
            let drop = noise_rng.random::<f64>() < spec.dropout;
            let n: f64 = StandardNormal.sample(&mut noise_rng);
            if !d.is_finite() || drop {
                0.0
            } else {
                d + spec.depth_noise * n
            }
        })
        .collect();
    let depth = DepthImage::from_meters(cam.width, cam.height, depth).quantized();

    SceneGroundTruth {
        scene_id: format!("scene_{seed:04}"),
        seed,
        camera: cam,
        table: Some(table),
        objects,
        depth,
        clean,
        owner,
        noise: NoiseRecord { depth_sigma: spec.depth_noise, dropout: spec.dropout },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sand,
    Icp,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Sand => "sand",
            Method::Icp => "icp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sand" => Ok(Method::Sand),
            "icp" => Ok(Method::Icp),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Estimator settings shared by the experiment runner and the CLI.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub sand: SandConfig,
    pub icp: IcpConfig,
}

impl EstimatorConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: EstimatorConfig = serde_json::from_str(&text)?;
        cfg.sand.validate()?;
        cfg.icp.validate()?;
        Ok(cfg)
    }
}

/// Seed for one (scene, class) estimate, so each run is reproducible on its own.
pub fn estimation_seed(base: u64, scene_seed: u64, class_index: usize) -> u64 {
    let mut z = base
        .wrapping_add(scene_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((class_index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the oracle detector of a scene.
pub fn detection_seed(scene_seed: u64) -> u64 {
    estimation_seed(0x00de_7ec7, scene_seed, 0)
}

/// Classes to estimate: those with a detection and a model, in order of
/// first detection.
pub fn classes_to_estimate<'a>(dets: &'a DetectionSet, catalog: &MeshCatalog) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for d in &dets.detections {
        if !out.contains(&d.class_id.as_str()) && catalog.get(&d.class_id).is_some() {
            out.push(&d.class_id);
        }
    }
    out
}

/// Runs one estimator for one class on one observation.
#[allow(clippy::too_many_arguments)]
pub fn estimate_class(
    method: Method,
    img: &DepthImage,
    dets: &DetectionSet,
    class_id: &str,
    class_index: usize,
    scene_seed: u64,
    mesh: &TriangleMesh,
    cam: &CameraIntrinsics,
    cfg: &EstimatorConfig,
    upright: &UnitQuaternion<f64>,
) -> Result<PoseEstimate> {
    match method {
        Method::Sand => {
            let sand = SandConfig { seed: estimation_seed(cfg.sand.seed, scene_seed, class_index), ..cfg.sand.clone() };
            run_sand(img, dets, class_id, mesh, cam, &sand)
        }
        Method::Icp => {
            // The detector's most confident box (earliest on ties).
            let best = dets
                .detections
                .iter()
                .filter(|d| d.class_id == class_id)
                .fold(None, |acc: Option<&crate::detection::Detection>, d| match acc {
                    Some(a) if a.score >= d.score => Some(a),
                    _ => Some(d),
                })
                .ok_or_else(|| Error::NoDetections(class_id.to_string()))?;
            let init = cfg.icp.init_orientation().unwrap_or(*upright);
            icp_estimate(img, best, mesh, cam, &cfg.icp, &init)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub estimators: EstimatorConfig,
    pub detection_noise: DetectionNoiseConfig,
    pub thresholds: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            estimators: EstimatorConfig::default(),
            detection_noise: DetectionNoiseConfig::default(),
            thresholds: default_thresholds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub method: Method,
    pub class_id: String,
    pub estimate: Option<PoseEstimate>,
    pub failure: Option<String>,
    pub error: PoseError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub seed: u64,
    pub detections: usize,
    pub records: Vec<EstimateRecord>,
}

/// Wall-clock seconds spent per stage, summed over scenes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub detection: f64,
    pub estimation: BTreeMap<Method, f64>,
    pub evaluation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub scenes: Vec<SceneRecord>,
    pub curves: BTreeMap<Method, AccuracyCurve>,
    pub timing: StageTimes,
}

impl ExperimentReport {
    pub fn errors(&self, method: Method) -> Vec<PoseError> {
        self.scenes
            .iter()
            .flat_map(|s| s.records.iter())
            .filter(|r| r.method == method)
            .map(|r| r.error.clone())
            .collect()
    }

    /// Fraction of `method`'s estimates with headline error below `threshold`.
    pub fn accuracy(&self, method: Method, threshold: f64) -> f64 {
        accuracy_curve(&self.errors(method), &[threshold]).accuracy[0]
    }

    /// Everything except wall-clock timing.
    pub fn same_results(&self, other: &ExperimentReport) -> bool {
        self.config == other.config && self.scenes == other.scenes && self.curves == other.curves
    }
}

/// Synthesizes detections, estimates every detected class with each method
/// and scores the estimates. Per-class failures are recorded, not raised.
pub fn run_experiment(scenes: &[SceneGroundTruth], methods: &[Method], cfg: &ExperimentConfig) -> ExperimentReport {
    let mut timing = StageTimes::default();
    let mut records = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let t0 = Instant::now();
        let dets = synth_detections(scene, &cfg.detection_noise, detection_seed(scene.seed));
        timing.detection += t0.elapsed().as_secs_f64();

        let mut out = SceneRecord {
            scene_id: scene.scene_id.clone(),
            seed: scene.seed,
            detections: dets.len(),
            records: Vec::new(),
        };
        // Every placed object is scored, detected or not.
        for (class_index, object) in scene.objects.iter().enumerate() {
            for &method in methods {
                let t1 = Instant::now();
                let result = estimate_class(
                    method,
                    &scene.depth,
                    &dets,
                    &object.class_id,
                    class_index,
                    scene.seed,
                    &object.mesh,
                    &scene.camera,
                    &cfg.estimators,
                    &scene.upright(),
                );
                *timing.estimation.entry(method).or_default() += t1.elapsed().as_secs_f64();

                let t2 = Instant::now();
                let (estimate, failure, mut error) = match result {
                    Ok(e) => {
                        let err = pose_error(&e.pose, &object.pose, &object.mesh);
                        (Some(e), None, err)
                    }
                    Err(e) => (
                        None,
                        Some(e.to_string()),
                        PoseError::failed(&object.class_id, &scene.scene_id, object.mesh.symmetric),
                    ),
                };
                error.class_id = object.class_id.clone();
                error.scene_id = scene.scene_id.clone();
                timing.evaluation += t2.elapsed().as_secs_f64();
                out.records.push(EstimateRecord {
                    method,
                    class_id: object.class_id.clone(),
                    estimate,
                    failure,
                    error,
                });
            }
        }
        records.push(out);
    }

    let mut report = ExperimentReport { config: cfg.clone(), scenes: records, curves: BTreeMap::new(), timing };
    for &method in methods {
        let curve = accuracy_curve(&report.errors(method), &cfg.thresholds);
        report.curves.insert(method, curve);
    }
    report
}
