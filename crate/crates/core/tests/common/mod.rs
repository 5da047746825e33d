//! Independent oracles shared by the integration and acceptance tests. They
//! use nothing from the library beyond plain data accessors.
#![allow(dead_code)]

use sand_core::{CameraIntrinsics, Pose6D, TriangleMesh, Vec3};

pub fn camera(f: f64, size: u32) -> CameraIntrinsics {
    let c = size as f64 / 2.0;
    CameraIntrinsics::new(f, f, c, c, size, size).unwrap()
}

/// Rotation matrix from an axis-angle vector (Rodrigues), as row arrays.
pub fn rodrigues(r: [f64; 3]) -> [[f64; 3]; 3] {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if theta == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [r[0] / theta, r[1] / theta, r[2] / theta];
    let (s, c) = theta.sin_cos();
    let v = 1.0 - c;
    [
        [c + k[0] * k[0] * v, k[0] * k[1] * v - k[2] * s, k[0] * k[2] * v + k[1] * s],
        [k[1] * k[0] * v + k[2] * s, c + k[1] * k[1] * v, k[1] * k[2] * v - k[0] * s],
        [k[2] * k[0] * v - k[1] * s, k[2] * k[1] * v + k[0] * s, c + k[2] * k[2] * v],
    ]
}

pub fn apply(m: &[[f64; 3]; 3], t: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    let mut out = t;
    for i in 0..3 {
        for j in 0..3 {
            out[i] += m[i][j] * p[j];
        }
    }
    out
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Möller-Trumbore. Returns (t, smallest barycentric coordinate).
pub fn ray_triangle(origin: [f64; 3], dir: [f64; 3], tri: [[f64; 3]; 3]) -> Option<(f64, f64)> {
    let e1 = sub(tri[1], tri[0]);
    let e2 = sub(tri[2], tri[0]);
    let p = cross(dir, e2);
    let det = dot(e1, p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = sub(origin, tri[0]);
    let u = dot(s, p) * inv;
    let q = cross(s, e1);
    let v = dot(dir, q) * inv;
    let w = 1.0 - u - v;
    if u < 0.0 || v < 0.0 || w < 0.0 {
        return None;
    }
    let t = dot(e2, q) * inv;
    (t > 0.0).then_some((t, u.min(v).min(w)))
}

/// Triangles of `mesh` posed by `pose`, computed with the test's own algebra.
pub fn posed_triangles(mesh: &TriangleMesh, pose: &Pose6D) -> Vec<[[f64; 3]; 3]> {
    let q = pose.quaternion_wxyz();
    let m = quat_matrix(q);
    let t: [f64; 3] = (*pose.translation()).into();
    mesh.triangles()
        .iter()
        .map(|tri| {
            tri.map(|i| {
                let v = mesh.vertices()[i as usize];
                apply(&m, t, [v.x, v.y, v.z])
            })
        })
        .collect()
}

pub fn quat_matrix([w, x, y, z]: [f64; 4]) -> [[f64; 3]; 3] {
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub enum RayHit {
    Miss,
    Hit(f64),
    /// The pixel center grazes a triangle edge; coverage is convention-dependent.
    Ambiguous,
}

/// Casts the ray through pixel center (col, row) against posed triangles.
/// `t` equals camera-frame depth because the ray direction has unit z. A
/// pixel is ambiguous when an edge-grazing hit is not hidden behind a clean
/// hit: whether a rasterizer covers it depends on its fill convention.
pub fn cast(cam: &CameraIntrinsics, tris: &[[[f64; 3]; 3]], col: u32, row: u32) -> RayHit {
    let dir = [(col as f64 - cam.cx) / cam.fx, (row as f64 - cam.cy) / cam.fy, 1.0];
    let mut clean = f64::INFINITY;
    let mut grazing = f64::INFINITY;
    for tri in tris {
        if let Some((t, margin)) = ray_triangle([0.0; 3], dir, *tri) {
            if margin < 1e-9 {
                grazing = grazing.min(t);
            } else {
                clean = clean.min(t);
            }
        }
    }
    if grazing.is_finite() && grazing <= clean + 1e-9 {
        RayHit::Ambiguous
    } else if clean.is_finite() {
        RayHit::Hit(clean)
    } else {
        RayHit::Miss
    }
}

/// Parity test: is `p` strictly inside the closed mesh (posed triangles)?
pub fn inside(tris: &[[[f64; 3]; 3]], p: [f64; 3]) -> bool {
    // An oblique direction avoids grazing the axis-aligned fixture edges.
    let dir = [0.5377, 0.2119, 0.8161];
    tris.iter().filter(|t| ray_triangle(p, dir, **t).is_some()).count() % 2 == 1
}

pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}
