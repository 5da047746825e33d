//! Rigid-body math, camera model, triangle meshes and point clouds.
//!
//! Every pose in this crate maps object-frame coordinates into the camera
//! frame (x right, y down, z along the optical axis), in meters.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub type Vec3 = Vector3<f64>;

/// Rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose6D {
    translation: Vec3,
    rotation: UnitQuaternion<f64>,
}

/// On-disk form: translation in meters, quaternion as (w, x, y, z).
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    translation: [f64; 3],
    rotation: [f64; 4],
}

impl From<Pose6D> for PoseRepr {
    fn from(p: Pose6D) -> Self {
        PoseRepr { translation: p.translation.into(), rotation: p.quaternion_wxyz() }
    }
}

impl TryFrom<PoseRepr> for Pose6D {
    type Error = String;

    fn try_from(r: PoseRepr) -> std::result::Result<Self, String> {
        let [w, x, y, z] = r.rotation;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-6 {
            return Err(format!("degenerate rotation quaternion {:?}", r.rotation));
        }
        if r.translation.iter().any(|v| !v.is_finite()) {
            return Err("non-finite translation".into());
        }
        // Stored quaternions are already unit length; keep them bit-exact.
        let rotation = if (n - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            renormalize(UnitQuaternion::from_quaternion(q))
        };
        Ok(Pose6D { translation: Vec3::from(r.translation), rotation })
    }
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6D {
    pub fn new(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        Pose6D { translation, rotation: renormalize(rotation) }
    }

    pub fn identity() -> Self {
        Pose6D { translation: Vec3::zeros(), rotation: UnitQuaternion::identity() }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose6D::new(Vec3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Rotation given as a rotation vector (axis times angle, radians).
    pub fn from_rotation_vector(translation: Vec3, rotvec: Vec3) -> Self {
        Pose6D::new(translation, UnitQuaternion::from_scaled_axis(rotvec))
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// The transform that applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D::new(self.rotation * other.translation + self.translation, self.rotation * other.rotation)
    }

    pub fn inverse(&self) -> Pose6D {
        let inv = self.rotation.inverse();
        Pose6D::new(-(inv * self.translation), inv)
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies the pose to every point; pixel indices are carried over unchanged.
    pub fn transform_cloud(&self, cloud: &PointCloud) -> PointCloud {
        let m = self.rotation.to_rotation_matrix();
        PointCloud {
            points: cloud.points.iter().map(|p| m * p + self.translation).collect(),
            pixels: cloud.pixels.clone(),
        }
    }

    /// Adds `dt` to the translation and left-multiplies the rotation by the
    /// rotation vector `drot` (an increment about the object origin, expressed
    /// in camera axes). A zero increment returns the pose bit-for-bit.
    pub fn perturbed(&self, dt: &Vec3, drot: &Vec3) -> Pose6D {
        let rotation = if drot.iter().all(|v| *v == 0.0) {
            self.rotation
        } else {
            renormalize(UnitQuaternion::from_scaled_axis(*drot) * self.rotation)
        };
        Pose6D { translation: self.translation + dt, rotation }
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Draws a rotation uniformly over SO(3) (Shoemake's subgroup algorithm).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    use std::f64::consts::TAU;
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = Quaternion::new(b * (TAU * u3).cos(), a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin());
    UnitQuaternion::new_normalize(q)
}

/// Pinhole camera. Pixel `(col, row)` has its center at image coordinates
/// `(col, row)`, so the principal ray passes through pixel `(cx, cy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawIntrinsics")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = Error;

    fn try_from(r: RawIntrinsics) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fx.is_finite() && fy > 0.0 && fy.is_finite()) {
            return Err(Error::Intrinsics(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Intrinsics("image size must be nonzero".into()));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::Intrinsics(format!("principal point ({cx}, {cy}) outside {width}x{height}")));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy, width, height })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera-frame point to image coordinates `(u, v)`; `p.z` must be positive.
    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    #[inline]
    pub fn backproject(&self, col: f64, row: f64, depth: f64) -> Vec3 {
        Vec3::new((col - self.cx) * depth / self.fx, (row - self.cy) * depth / self.fy, depth)
    }
}

/// Image location of a point, `row` down and `col` right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pixel {
    pub row: u32,
    pub col: u32,
}

/// Points in meters, optionally tagged with the pixel each one came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub pixels: Option<Vec<Pixel>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        PointCloud { points, pixels: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vec3 = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Appends `other`. Pixel tags survive only if both clouds carry them.
    pub fn extend(&mut self, other: &PointCloud) {
        self.pixels = match (self.pixels.take(), &other.pixels) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if self.points.is_empty() => Some(b.clone()),
            _ => None,
        };
        self.points.extend_from_slice(&other.points);
    }
}

/// Object geometry in its own frame, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    /// Evaluate with the symmetric (closest-point) metric.
    pub symmetric: bool,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::MeshParse { line: 0, msg: format!("vertex {} is not finite", i + 1) });
        }
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::MeshParse { line: 0, msg: format!("triangle {t:?} references a vertex beyond {n}") });
        }
        Ok(TriangleMesh { vertices, triangles, symmetric: false })
    }

    pub fn with_symmetric(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Parses `v x y z` / `f i j k` lines (1-based indices, triangles only).
    pub fn parse(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces: Vec<([u32; 3], usize)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split_whitespace();
            let tag = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            let err = |msg: String| Error::MeshParse { line, msg };
            match tag {
                "v" => {
                    if rest.len() != 3 {
                        return Err(err(format!("expected 3 coordinates, found {}", rest.len())));
                    }
                    let mut xyz = [0.0f64; 3];
                    for (slot, s) in xyz.iter_mut().zip(&rest) {
                        *slot = s.parse().map_err(|_| err(format!("bad coordinate {s:?}")))?;
                        if !slot.is_finite() {
                            return Err(err(format!("non-finite coordinate {s:?}")));
                        }
                    }
                    vertices.push(Vec3::from(xyz));
                }
                "f" => {
                    if rest.len() != 3 {
                        return Err(err(format!("only triangles are supported, found {} indices", rest.len())));
                    }
                    let mut ijk = [0u32; 3];
                    for (slot, s) in ijk.iter_mut().zip(&rest) {
                        let i: u32 = s.parse().map_err(|_| err(format!("bad index {s:?}")))?;
                        if i == 0 {
                            return Err(err("indices are 1-based".into()));
                        }
                        *slot = i - 1;
                    }
                    faces.push((ijk, line));
                }
                other => return Err(err(format!("unknown record {other:?}"))),
            }
        }
        for (face, line) in &faces {
            if let Some(i) = face.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(Error::MeshParse {
                    line: *line,
                    msg: format!("index {} out of range ({} vertices)", i + 1, vertices.len()),
                });
            }
        }
        TriangleMesh::new(vertices, faces.into_iter().map(|(f, _)| f).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Model points for evaluation and registration: the vertices followed by
    /// area-weighted surface samples, `max_points` in total.
    pub fn model_points(&self, max_points: usize, seed: u64) -> Vec<Vec3> {
        use rand::SeedableRng;
        let mut points: Vec<Vec3> = self.vertices.iter().take(max_points).copied().collect();
        let remaining = max_points - points.len();
        if remaining == 0 {
            return points;
        }
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for i in 0..self.triangles.len() {
            total += self.triangle_area(i);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return points;
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..remaining {
            let target = rng.random::<f64>() * total;
            let tri = cumulative.partition_point(|&c| c <= target).min(self.triangles.len() - 1);
            let [a, b, c] = self.triangle(tri);
            let (mut s, mut t): (f64, f64) = (rng.random(), rng.random());
            if s + t > 1.0 {
                s = 1.0 - s;
                t = 1.0 - t;
            }
            points.push(a + (b - a) * s + (c - a) * t);
        }
        points
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Distance from `p` to the closest point of triangle `abc`.
pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    // Ericson, Real-Time Collision Detection, 5.1.5.
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (p - a).norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (p - b).norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (p - c).norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}
