//! Procedural household-scale meshes used by the synthetic scene harness.
//!
//! Each model is centered on its own origin with +z as the "up" axis when the
//! object stands on a table.

use std::f64::consts::TAU;

use crate::geometry::{TriangleMesh, Vec3};

const SEGMENTS: usize = 16;

#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
}

impl Builder {
    fn offset(&self) -> u32 {
        self.vertices.len() as u32
    }

    fn cuboid(mut self, center: Vec3, size: Vec3) -> Self {
        let o = self.offset();
        let h = size / 2.0;
        for i in 0..8 {
            let sx = if i & 1 == 0 { -h.x } else { h.x };
            let sy = if i & 2 == 0 { -h.y } else { h.y };
            let sz = if i & 4 == 0 { -h.z } else { h.z };
            self.vertices.push(center + Vec3::new(sx, sy, sz));
        }
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        for q in quads {
            self.triangles.push([o + q[0], o + q[1], o + q[2]]);
            self.triangles.push([o + q[0], o + q[2], o + q[3]]);
        }
        self
    }

    /// Closed frustum along z from `z0` (radius `r0`) to `z1` (radius `r1`).
    fn frustum(mut self, center: Vec3, r0: f64, r1: f64, z0: f64, z1: f64) -> Self {
        let o = self.offset();
        let n = SEGMENTS as u32;
        for (r, z) in [(r0, z0), (r1, z1)] {
            for i in 0..SEGMENTS {
                let a = TAU * i as f64 / SEGMENTS as f64;
                self.vertices.push(center + Vec3::new(r * a.cos(), r * a.sin(), z));
            }
        }
        self.vertices.push(center + Vec3::new(0.0, 0.0, z0));
        self.vertices.push(center + Vec3::new(0.0, 0.0, z1));
        let (bottom, top) = (o + 2 * n, o + 2 * n + 1);
        for i in 0..n {
            let j = (i + 1) % n;
            self.triangles.push([o + i, o + j, o + n + j]);
            self.triangles.push([o + i, o + n + j, o + n + i]);
            self.triangles.push([bottom, o + j, o + i]);
            self.triangles.push([top, o + n + i, o + n + j]);
        }
        self
    }

    /// Extrudes a simple polygon in the xz-plane along y (total depth `depth`).
    /// The profile is fan-triangulated from its first vertex, so it must be
    /// star-shaped with respect to that vertex.
    fn extrusion(mut self, profile: &[(f64, f64)], depth: f64) -> Self {
        let o = self.offset();
        let n = profile.len() as u32;
        for y in [-depth / 2.0, depth / 2.0] {
            for &(x, z) in profile {
                self.vertices.push(Vec3::new(x, y, z));
            }
        }
        for i in 1..n - 1 {
            self.triangles.push([o, o + i, o + i + 1]);
            self.triangles.push([o + n, o + n + i + 1, o + n + i]);
        }
        for i in 0..n {
            let j = (i + 1) % n;
            self.triangles.push([o + i, o + n + i, o + n + j]);
            self.triangles.push([o + i, o + n + j, o + j]);
        }
        self
    }

    fn build(self, symmetric: bool) -> TriangleMesh {
        TriangleMesh::new(self.vertices, self.triangles)
            .expect("procedural meshes are well formed")
            .with_symmetric(symmetric)
    }
}

/// Axis-aligned box centered on the origin.
pub fn cuboid(sx: f64, sy: f64, sz: f64) -> TriangleMesh {
    Builder::default().cuboid(Vec3::zeros(), Vec3::new(sx, sy, sz)).build(true)
}

/// Upright cylinder centered on the origin.
pub fn cylinder(radius: f64, height: f64) -> TriangleMesh {
    Builder::default().frustum(Vec3::zeros(), radius, radius, -height / 2.0, height / 2.0).build(true)
}

/// Names of the built-in models, in catalog order.
pub const CATALOG: [&str; 15] = [
    "soup_can",
    "cereal_box",
    "mug",
    "bottle",
    "book",
    "sponge",
    "detergent",
    "drill",
    "bowl",
    "toy_block",
    "flashlight",
    "spray_bottle",
    "tape",
    "wedge",
    "step_block",
];

/// Looks up a built-in model by name. Rotationally or box-symmetric models
/// carry the `symmetric` flag.
pub fn builtin(name: &str) -> Option<TriangleMesh> {
    let b = Builder::default();
    let v = Vec3::new;
    let mesh = match name {
        "soup_can" => cylinder(0.034, 0.10),
        "cereal_box" => cuboid(0.14, 0.05, 0.20),
        "mug" => b
            .frustum(Vec3::zeros(), 0.04, 0.04, -0.045, 0.045)
            .cuboid(v(0.055, 0.0, 0.0), v(0.03, 0.012, 0.06))
            .build(false),
        "bottle" => b
            .frustum(Vec3::zeros(), 0.032, 0.032, -0.09, 0.04)
            .frustum(Vec3::zeros(), 0.032, 0.012, 0.04, 0.07)
            .frustum(Vec3::zeros(), 0.012, 0.012, 0.07, 0.09)
            .build(true),
        "book" => cuboid(0.15, 0.22, 0.03),
        "sponge" => cuboid(0.09, 0.06, 0.035),
        "detergent" => b
            .cuboid(v(0.0, 0.0, -0.02), v(0.12, 0.07, 0.14))
            .cuboid(v(0.035, 0.0, 0.07), v(0.05, 0.05, 0.04))
            .build(false),
        "drill" => b
            .cuboid(v(0.0, 0.0, 0.045), v(0.16, 0.05, 0.05))
            .cuboid(v(-0.04, 0.0, -0.025), v(0.045, 0.04, 0.09))
            .build(false),
        "bowl" => b.frustum(Vec3::zeros(), 0.045, 0.075, -0.03, 0.03).build(true),
        "toy_block" => cuboid(0.05, 0.05, 0.05),
        "flashlight" => b
            .frustum(Vec3::zeros(), 0.018, 0.018, -0.08, 0.04)
            .frustum(Vec3::zeros(), 0.028, 0.028, 0.04, 0.08)
            .build(true),
        "spray_bottle" => b
            .cuboid(v(0.0, 0.0, -0.03), v(0.08, 0.05, 0.14))
            .cuboid(v(0.02, 0.0, 0.065), v(0.1, 0.03, 0.05))
            .build(false),
        "tape" => cylinder(0.055, 0.05),
        "wedge" => b.extrusion(&[(-0.06, -0.035), (0.06, -0.035), (-0.06, 0.035)], 0.08).build(false),
        "step_block" => b
            .extrusion(&[(-0.06, -0.04), (0.06, -0.04), (0.06, 0.0), (0.0, 0.0), (0.0, 0.04), (-0.06, 0.04)], 0.07)
            .build(false),
        _ => return None,
    };
    Some(mesh)
}
