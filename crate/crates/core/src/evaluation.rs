//! Pose accuracy (ADD / ADD-S) and accuracy-versus-threshold curves.

use std::fmt::Write as _;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose6D, TriangleMesh, Vec3};

/// Model points per mesh used by the metric.
pub const MODEL_POINTS: usize = 2048;
const MODEL_POINT_SEED: u64 = 0x5eed_0add;

pub type PointTree = ImmutableKdTree<f64, u64, 3, 32>;

pub fn point_tree(points: &[Vec3]) -> PointTree {
    let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    ImmutableKdTree::new_from_slice(&raw)
}

/// Deterministic metric sample of a mesh: vertices plus area-weighted
/// surface points, [`MODEL_POINTS`] in total.
pub fn metric_points(mesh: &TriangleMesh) -> Vec<Vec3> {
    mesh.model_points(MODEL_POINTS, MODEL_POINT_SEED)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Mean distance between corresponding model points, meters.
    pub add: f64,
    /// Mean distance from each true model point to the closest estimated one.
    pub adds: f64,
    pub symmetric: bool,
    #[serde(default)]
    pub class_id: String,
    #[serde(default)]
    pub scene_id: String,
}

impl PoseError {
    /// ADD-S for symmetric models, ADD otherwise.
    pub fn headline(&self) -> f64 {
        if self.symmetric {
            self.adds
        } else {
            self.add
        }
    }

    /// A missing estimate counts as infinitely wrong.
    pub fn failed(class_id: &str, scene_id: &str, symmetric: bool) -> Self {
        PoseError {
            add: f64::INFINITY,
            adds: f64::INFINITY,
            symmetric,
            class_id: class_id.into(),
            scene_id: scene_id.into(),
        }
    }
}

pub fn pose_error(est: &Pose6D, truth: &Pose6D, mesh: &TriangleMesh) -> PoseError {
    pose_error_on(est, truth, &metric_points(mesh), mesh.symmetric)
}

/// Both metrics over an explicit model-point set.
pub fn pose_error_on(est: &Pose6D, truth: &Pose6D, points: &[Vec3], symmetric: bool) -> PoseError {
    let n = points.len() as f64;
    let truth_pts: Vec<Vec3> = points.iter().map(|p| truth.transform_point(p)).collect();
    let est_pts: Vec<Vec3> = points.iter().map(|p| est.transform_point(p)).collect();
    let add = truth_pts.iter().zip(&est_pts).map(|(a, b)| (a - b).norm()).sum::<f64>() / n;
    let tree = point_tree(&est_pts);
    let adds =
        truth_pts.iter().map(|p| tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]).distance.sqrt()).sum::<f64>()
            / n;
    // The nearest neighbor can never be farther than the matched point.
    let adds = adds.min(add);
    PoseError { add, adds, symmetric, class_id: String::new(), scene_id: String::new() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub thresholds: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl AccuracyCurve {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().position(|&t| t == threshold).map(|i| self.accuracy[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold_m,accuracy\n");
        for (t, a) in self.thresholds.iter().zip(&self.accuracy) {
            let _ = writeln!(out, "{t},{a}");
        }
        out
    }
}

/// Fraction of headline errors strictly below each threshold.
pub fn accuracy_curve(errors: &[PoseError], thresholds: &[f64]) -> AccuracyCurve {
    let mut values: Vec<f64> = errors.iter().map(PoseError::headline).collect();
    values.sort_by(f64::total_cmp);
    let n = values.len().max(1) as f64;
    AccuracyCurve {
        thresholds: thresholds.to_vec(),
        accuracy: thresholds.iter().map(|&t| values.partition_point(|&v| v < t) as f64 / n).collect(),
    }
}

/// Default thresholds for exported curves: 5 mm to 5 cm in 5 mm steps.
pub fn default_thresholds() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.005).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn err(v: f64) -> PoseError {
        PoseError { add: v, adds: v, symmetric: false, class_id: String::new(), scene_id: String::new() }
    }

    #[test]
    fn identical_poses_have_zero_error() {
        let mesh = fixtures::builtin("drill").unwrap();
        let p = Pose6D::from_rotation_vector(Vec3::new(0.1, 0.0, 0.5), Vec3::new(0.3, 0.2, 0.1));
        let e = pose_error(&p, &p, &mesh);
        assert_eq!((e.add, e.adds), (0.0, 0.0));
    }

    #[test]
    fn pure_translation_is_exact() {
        for name in ["mug", "book", "wedge"] {
            let mesh = fixtures::builtin(name).unwrap();
            let e = pose_error(&Pose6D::from_translation(0.03, 0.0, 0.04), &Pose6D::identity(), &mesh);
            assert!((e.add - 0.05).abs() < 1e-12, "{name}: {}", e.add);
            assert!(e.adds <= e.add);
        }
    }

    #[test]
    fn symmetric_flag_picks_headline() {
        let mut e = err(0.2);
        e.adds = 0.1;
        assert_eq!(e.headline(), 0.2);
        e.symmetric = true;
        assert_eq!(e.headline(), 0.1);
    }

    #[test]
    fn curve_examples() {
        let zeros = vec![err(0.0); 4];
        assert_eq!(accuracy_curve(&zeros, &[0.001, 0.5]).accuracy, vec![1.0, 1.0]);
        let c = accuracy_curve(&[err(0.01), err(0.03)], &[0.02, 0.05]);
        assert_eq!(c.accuracy, vec![0.5, 1.0]);
        assert_eq!(c.at(0.02), Some(0.5));
        assert!(accuracy_curve(&[err(0.01)], &[]).accuracy.is_empty());
        assert_eq!(c.to_csv(), "threshold_m,accuracy\n0.02,0.5\n0.05,1\n");
        let failed = PoseError::failed("mug", "s0", false);
        assert_eq!(accuracy_curve(&[failed], &[1e9]).accuracy, vec![0.0]);
    }

    proptest! {
        #[test]
        fn add_is_invariant_to_common_motion(
            t in prop::array::uniform3(-0.5..0.5f64), r in prop::array::uniform3(-2.0..2.0f64),
            t2 in prop::array::uniform3(-0.5..0.5f64), r2 in prop::array::uniform3(-2.0..2.0f64),
            g in prop::array::uniform3(-1.0..1.0f64), gr in prop::array::uniform3(-3.0..3.0f64),
        ) {
            let mesh = fixtures::builtin("spray_bottle").unwrap();
            let pts = metric_points(&mesh);
            let a = Pose6D::from_rotation_vector(t.into(), r.into());
            let b = Pose6D::from_rotation_vector(t2.into(), r2.into());
            let m = Pose6D::from_rotation_vector(g.into(), gr.into());
            let e0 = pose_error_on(&a, &b, &pts, false);
            let e1 = pose_error_on(&m.compose(&a), &m.compose(&b), &pts, false);
            prop_assert!((e0.add - e1.add).abs() < 1e-9);
            prop_assert!(e0.adds <= e0.add);
        }

        #[test]
        fn curves_are_monotone(values in prop::collection::vec(0.0..0.1f64, 1..50), mut ts in prop::collection::vec(0.0..0.12f64, 0..20)) {
            ts.sort_by(f64::total_cmp);
            let errors: Vec<PoseError> = values.into_iter().map(err).collect();
            let c = accuracy_curve(&errors, &ts);
            prop_assert!(c.accuracy.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }
}
