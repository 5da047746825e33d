//! Particle-filter 6D object pose estimation from a single depth image,
//! guided by scored 2D detections, with an ICP baseline and a synthetic
//! tabletop benchmark.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod geometry;
pub mod harness;
pub mod icp;
pub mod observation;
pub mod renderer;
pub mod sand;

pub use detection::{load_detections, synth_detections, Detection, DetectionNoiseConfig, DetectionSet};
pub use error::{Error, Result};
pub use evaluation::{accuracy_curve, pose_error, AccuracyCurve, PoseError};
pub use geometry::{CameraIntrinsics, Pixel, PointCloud, Pose6D, TriangleMesh, Vec3};
pub use harness::{
    compose_scene, generate_scene, run_experiment, EstimatorConfig, ExperimentConfig, ExperimentReport, MeshCatalog,
    Method, SceneGroundTruth, SceneSpec,
};
pub use icp::{icp_align, icp_estimate, IcpConfig};
pub use observation::{crop_and_backproject, load_depth, BoundingBox, DepthImage};
pub use renderer::{render_depth, DepthBuffer};
pub use sand::{init_particles, run_sand, Particle, ParticleSet, PoseEstimate, SandConfig, SandFilter};
