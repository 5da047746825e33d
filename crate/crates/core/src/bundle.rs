//! On-disk scene bundles and the file-level pipeline: synthesize scenes,
//! estimate poses from a bundle, score an estimate report, compare reports.
//!
//! A scene directory holds:
//!
//! ```text
//! scene.json        id, seed, table pose, class list with mesh paths
//! intrinsics.json   camera
//! depth.png         16-bit depth, millimeters, 0 = invalid
//! detections.json   detector output
//! truth.json        ground-truth object poses
//! meshes/*.obj      one model per class
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::{load_detections, synth_detections, DetectionSet};
use crate::error::{io_err, Error, Result};
use crate::evaluation::{accuracy_curve, pose_error, AccuracyCurve, PoseError};
use crate::geometry::{CameraIntrinsics, Pose6D};
use crate::harness::{
    classes_to_estimate, detection_seed, estimate_class, generate_scene, EstimatorConfig, MeshCatalog, Method,
    NoiseRecord, SceneGroundTruth, SceneSpec,
};
use crate::observation::{load_depth, DepthImage};
use crate::sand::PoseEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub class: String,
    /// Relative to the scene directory.
    pub mesh: PathBuf,
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub scene_id: String,
    pub seed: u64,
    #[serde(default)]
    pub camera_from_table: Option<Pose6D>,
    pub classes: Vec<ClassEntry>,
    #[serde(default)]
    pub noise: Option<NoiseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthObject {
    pub class: String,
    pub pose: Pose6D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTruth {
    pub scene_id: String,
    pub objects: Vec<TruthObject>,
}

/// Everything an estimator may read from a scene directory.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub dir: PathBuf,
    pub meta: SceneMeta,
    pub camera: CameraIntrinsics,
    pub depth: DepthImage,
    pub detections: DetectionSet,
    pub meshes: MeshCatalog,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

impl SceneBundle {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SceneMeta = read_json(&dir.join("scene.json"))?;
        let camera = CameraIntrinsics::load(&dir.join("intrinsics.json"))?;
        let depth = load_depth(&dir.join("depth.png"), &camera)?;
        let detections = load_detections(&dir.join("detections.json"))?;
        let mut meshes = MeshCatalog::default();
        for c in &meta.classes {
            let mesh = crate::geometry::TriangleMesh::load(&dir.join(&c.mesh))?;
            meshes.insert(&c.class, mesh.with_symmetric(c.symmetric));
        }
        Ok(SceneBundle { dir: dir.to_path_buf(), meta, camera, depth, detections, meshes })
    }

    pub fn truth(&self) -> Result<SceneTruth> {
        read_json(&self.dir.join("truth.json"))
    }
}

/// Writes a generated scene and its detections as a bundle.
pub fn write_scene(gt: &SceneGroundTruth, dets: &DetectionSet, dir: &Path) -> Result<()> {
    let mesh_dir = dir.join("meshes");
    std::fs::create_dir_all(&mesh_dir).map_err(io_err(&mesh_dir))?;
    let mut classes = Vec::new();
    for o in &gt.objects {
        let rel = PathBuf::from("meshes").join(format!("{}.obj", o.class_id));
        o.mesh.save(&dir.join(&rel))?;
        classes.push(ClassEntry { class: o.class_id.clone(), mesh: rel, symmetric: o.mesh.symmetric });
    }
    let meta = SceneMeta {
        scene_id: gt.scene_id.clone(),
        seed: gt.seed,
        camera_from_table: gt.table,
        classes,
        noise: Some(gt.noise),
    };
    write_json(&dir.join("scene.json"), &meta)?;
    write_json(&dir.join("intrinsics.json"), &gt.camera)?;
    gt.depth.save(&dir.join("depth.png"))?;
    dets.save(&dir.join("detections.json"))?;
    let truth = SceneTruth {
        scene_id: gt.scene_id.clone(),
        objects: gt.objects.iter().map(|o| TruthObject { class: o.class_id.clone(), pose: o.pose }).collect(),
    };
    write_json(&dir.join("truth.json"), &truth)
}

/// Generates one bundle per seed under `out`, named by scene id.
pub fn synthesize(spec: &SceneSpec, catalog: &MeshCatalog, seeds: &[u64], out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let gt = generate_scene(spec, catalog, seed)?;
        let dets = synth_detections(&gt, &spec.detection_noise, detection_seed(seed));
        let dir = out.join(&gt.scene_id);
        write_scene(&gt, &dets, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// A scene directory itself, or the sorted scene directories directly inside it.
pub fn scene_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join("scene.json").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("scene.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEstimate {
    pub class: String,
    pub estimate: PoseEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFailure {
    pub class: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEstimates {
    pub scene_id: String,
    pub scene_dir: PathBuf,
    pub estimates: Vec<ClassEstimate>,
    pub failures: Vec<ClassFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub method: Method,
    pub config: EstimatorConfig,
    pub scenes: Vec<SceneEstimates>,
}

impl EstimationReport {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Estimates every detected class with a model in each scene under `path`.
pub fn estimate_scenes(method: Method, path: &Path, cfg: &EstimatorConfig) -> Result<EstimationReport> {
    cfg.sand.validate()?;
    cfg.icp.validate()?;
    let mut scenes = Vec::new();
    for dir in scene_dirs(path)? {
        let b = SceneBundle::load(&dir)?;
        let upright = b.meta.camera_from_table.map(|t| *t.rotation()).unwrap_or_default();
        let mut out = SceneEstimates {
            scene_id: b.meta.scene_id.clone(),
            scene_dir: dir.clone(),
            estimates: Vec::new(),
            failures: Vec::new(),
        };
        for class in classes_to_estimate(&b.detections, &b.meshes) {
            let index = b.meta.classes.iter().position(|c| c.class == class).unwrap_or(0);
            let mesh = b.meshes.get(class).expect("filtered to known classes");
            match estimate_class(
                method,
                &b.depth,
                &b.detections,
                class,
                index,
                b.meta.seed,
                mesh,
                &b.camera,
                cfg,
                &upright,
            ) {
                Ok(estimate) => out.estimates.push(ClassEstimate { class: class.to_string(), estimate }),
                Err(e) => out.failures.push(ClassFailure { class: class.to_string(), reason: e.to_string() }),
            }
        }
        scenes.push(out);
    }
    if scenes.is_empty() {
        return Err(Error::Config(format!("no scene directories under {}", path.display())));
    }
    Ok(EstimationReport { method, config: cfg.clone(), scenes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub method: Method,
    pub errors: Vec<PoseError>,
    pub curve: AccuracyCurve,
}

impl Evaluation {
    pub fn summary(&self) -> String {
        let n = self.errors.len();
        let finite: Vec<f64> = self.errors.iter().map(PoseError::headline).filter(|e| e.is_finite()).collect();
        let mean = if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        let mut s = format!(
            "method: {}\nobjects: {n}\nestimated: {}\nmean error (m): {mean:.5}\n",
            self.method.name(),
            finite.len()
        );
        for (t, a) in self.curve.thresholds.iter().zip(&self.curve.accuracy) {
            let _ = writeln!(s, "accuracy@{:.1}mm: {a:.4}", t * 1000.0);
        }
        s
    }
}

/// Scores a report against ground truth. Truth is read from `truth_root`
/// (a scene directory or a directory of scenes) when given, otherwise from the
/// scene directories recorded in the report. Every true object counts; ones
/// without an estimate score as failures.
pub fn evaluate_report(report: &EstimationReport, truth_root: Option<&Path>, thresholds: &[f64]) -> Result<Evaluation> {
    let lookup: Option<BTreeMap<String, PathBuf>> = match truth_root {
        Some(root) => {
            let mut m = BTreeMap::new();
            for dir in scene_dirs(root)? {
                let meta: SceneMeta = read_json(&dir.join("scene.json"))?;
                m.insert(meta.scene_id, dir);
            }
            Some(m)
        }
        None => None,
    };
    let mut errors = Vec::new();
    for scene in &report.scenes {
        let dir = match &lookup {
            Some(m) => m
                .get(&scene.scene_id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no ground truth for scene {}", scene.scene_id)))?,
            None => scene.scene_dir.clone(),
        };
        let bundle = SceneBundle::load(&dir)?;
        let truth = bundle.truth()?;
        for obj in &truth.objects {
            let mesh = bundle.meshes.get(&obj.class).ok_or_else(|| Error::UnknownMesh(obj.class.clone()))?;
            let mut e = match scene.estimates.iter().find(|e| e.class == obj.class) {
                Some(est) => pose_error(&est.estimate.pose, &obj.pose, mesh),
                None => PoseError::failed(&obj.class, &scene.scene_id, mesh.symmetric),
            };
            e.class_id = obj.class.clone();
            e.scene_id = scene.scene_id.clone();
            errors.push(e);
        }
    }
    let curve = accuracy_curve(&errors, thresholds);
    Ok(Evaluation { method: report.method, errors, curve })
}

/// Side-by-side accuracy table of several evaluations, as CSV.
pub fn compare_csv(evals: &[(String, Evaluation)]) -> String {
    let mut out = String::from("threshold_m");
    for (name, _) in evals {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let Some((_, first)) = evals.first() else { return out };
    for (i, t) in first.curve.thresholds.iter().enumerate() {
        let _ = write!(out, "{t}");
        for (_, e) in evals {
            let _ = write!(out, ",{}", e.curve.accuracy.get(i).copied().unwrap_or(f64::NAN));
        }
        out.push('\n');
    }
    out
}
