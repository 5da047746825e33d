//! CPU z-buffer depth rasterizer.
//!
//! Triangles are sampled at pixel centers (integer image coordinates) with a
//! top-left rule on shared edges. Depth is interpolated perspective-correctly
//! (1/z is affine in screen space), so every written depth is the camera-z of
//! the exact ray/triangle intersection up to rounding. Geometry in front of
//! [`NEAR_PLANE`] is clipped.

use std::path::Path;

use crate::error::Result;
use crate::geometry::{CameraIntrinsics, Pixel, PointCloud, Pose6D, TriangleMesh, Vec3};
use crate::observation::{meters_to_mm, save_depth_png, BoundingBox};

pub const NEAR_PLANE: f64 = 1e-3;

/// Rendered camera-z per pixel; `f64::INFINITY` marks "no surface".
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    width: u32,
    height: u32,
    depth: Vec<f64>,
    valid: usize,
    // Inclusive pixel rectangle containing every valid pixel.
    footprint: Option<[u32; 4]>,
}

impl DepthBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        DepthBuffer {
            width,
            height,
            depth: vec![f64::INFINITY; width as usize * height as usize],
            valid: 0,
            footprint: None,
        }
    }

    pub fn for_camera(cam: &CameraIntrinsics) -> Self {
        Self::new(cam.width, cam.height)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.depth
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> Option<f64> {
        let d = self.depth[row as usize * self.width as usize + col as usize];
        d.is_finite().then_some(d)
    }

    /// `N_r`: number of pixels holding a surface.
    pub fn valid_count(&self) -> usize {
        self.valid
    }

    /// Tight box around all valid pixels.
    pub fn footprint(&self) -> Option<BoundingBox> {
        self.footprint.map(|[c0, r0, c1, r1]| BoundingBox::new(c0 as i64, r0 as i64, c1 as i64 + 1, r1 as i64 + 1))
    }

    /// Resets to all-invalid, touching only previously written rows.
    pub fn clear(&mut self) {
        if let Some([c0, r0, c1, r1]) = self.footprint.take() {
            let w = self.width as usize;
            for row in r0 as usize..=r1 as usize {
                self.depth[row * w + c0 as usize..=row * w + c1 as usize].fill(f64::INFINITY);
            }
        }
        self.valid = 0;
    }

    /// Rasterizes `mesh` at `pose` into this buffer, keeping the nearer depth
    /// where surfaces overlap. Call repeatedly to composite several objects.
    pub fn draw(&mut self, mesh: &TriangleMesh, pose: &Pose6D, cam: &CameraIntrinsics) {
        debug_assert_eq!((self.width, self.height), (cam.width, cam.height));
        let m = pose.rotation().to_rotation_matrix();
        let t = pose.translation();
        let verts: Vec<Vec3> = mesh.vertices().iter().map(|v| m * v + t).collect();
        for tri in mesh.triangles() {
            let a = verts[tri[0] as usize];
            let b = verts[tri[1] as usize];
            let c = verts[tri[2] as usize];
            self.draw_triangle(cam, [a, b, c]);
        }
    }

    /// Rasterizes one camera-frame triangle, clipping it at the near plane.
    pub fn draw_triangle(&mut self, cam: &CameraIntrinsics, tri: [Vec3; 3]) {
        let behind = tri.iter().filter(|v| v.z < NEAR_PLANE).count();
        match behind {
            0 => self.raster(cam, &tri),
            3 => {}
            _ => {
                let poly = clip_near(&tri);
                for i in 1..poly.len() - 1 {
                    self.raster(cam, &[poly[0], poly[i], poly[i + 1]]);
                }
            }
        }
    }

    fn raster(&mut self, cam: &CameraIntrinsics, tri: &[Vec3; 3]) {
        let mut p = [(0.0, 0.0); 3];
        let mut inv_z = [0.0; 3];
        for i in 0..3 {
            p[i] = cam.project(&tri[i]);
            inv_z[i] = 1.0 / tri[i].z;
        }
        let mut area = edge(p[0], p[1], p[2]);
        if !area.is_finite() || area == 0.0 {
            return;
        }
        if area < 0.0 {
            p.swap(1, 2);
            inv_z.swap(1, 2);
            area = -area;
        }

        let (w, h) = (self.width as f64, self.height as f64);
        let min_u = p[0].0.min(p[1].0).min(p[2].0).ceil().max(0.0);
        let max_u = p[0].0.max(p[1].0).max(p[2].0).floor().min(w - 1.0);
        let min_v = p[0].1.min(p[1].1).min(p[2].1).ceil().max(0.0);
        let max_v = p[0].1.max(p[1].1).max(p[2].1).floor().min(h - 1.0);
        if min_u > max_u || min_v > max_v {
            return;
        }

        // Edge i is opposite vertex i.
        let edges = [(p[1], p[2]), (p[2], p[0]), (p[0], p[1])];
        let top_left = edges.map(|(a, b)| is_top_left(a, b));
        let d1 = inv_z[1] - inv_z[0];
        let d2 = inv_z[2] - inv_z[0];
        let stride = self.width as usize;

        for row in min_v as u32..=max_v as u32 {
            let v = row as f64;
            for col in min_u as u32..=max_u as u32 {
                let q = (col as f64, v);
                let e0 = edge(edges[0].0, edges[0].1, q);
                let e1 = edge(edges[1].0, edges[1].1, q);
                let e2 = edge(edges[2].0, edges[2].1, q);
                if !(covers(e0, top_left[0]) && covers(e1, top_left[1]) && covers(e2, top_left[2])) {
                    continue;
                }
                let z = 1.0 / (inv_z[0] + (e1 / area) * d1 + (e2 / area) * d2);
                let idx = row as usize * stride + col as usize;
                let slot = &mut self.depth[idx];
                if z < *slot {
                    if slot.is_infinite() {
                        self.valid += 1;
                        self.footprint = Some(match self.footprint {
                            None => [col, row, col, row],
                            Some([c0, r0, c1, r1]) => [c0.min(col), r0.min(row), c1.max(col), r1.max(row)],
                        });
                    }
                    *slot = z;
                }
            }
        }
    }

    pub fn to_millimeters(&self) -> Vec<u16> {
        self.depth.iter().map(|&d| meters_to_mm(d)).collect()
    }

    /// Debug export in the observation format (16-bit millimeters, 0 = invalid).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_depth_png(path, self.width, self.height, &self.to_millimeters())
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

// With positive area the interior lies where every edge function is
// positive; the inward normal of a->b is (-dv, du), with v pointing down.
#[inline]
fn is_top_left(a: (f64, f64), b: (f64, f64)) -> bool {
    let (du, dv) = (b.0 - a.0, b.1 - a.1);
    (dv == 0.0 && du > 0.0) || dv < 0.0
}

#[inline]
fn covers(e: f64, top_left: bool) -> bool {
    e > 0.0 || (e == 0.0 && top_left)
}

// Sutherland-Hodgman against z >= NEAR_PLANE.
fn clip_near(tri: &[Vec3; 3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR_PLANE;
        let b_in = b.z >= NEAR_PLANE;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE;
            out.push(p);
        }
    }
    out
}

/// Renders `mesh` at `pose` into a fresh buffer.
pub fn render_depth(mesh: &TriangleMesh, pose: &Pose6D, cam: &CameraIntrinsics) -> DepthBuffer {
    let mut buf = DepthBuffer::for_camera(cam);
    buf.draw(mesh, pose, cam);
    buf
}

/// One point per valid pixel, pinhole back-projected, with pixel tags.
pub fn buffer_to_cloud(buf: &DepthBuffer, cam: &CameraIntrinsics) -> PointCloud {
    let mut points = Vec::with_capacity(buf.valid);
    let mut pixels = Vec::with_capacity(buf.valid);
    if let Some([c0, r0, c1, r1]) = buf.footprint {
        for row in r0..=r1 {
            for col in c0..=c1 {
                if let Some(d) = buf.get(row, col) {
                    points.push(cam.backproject(col as f64, row as f64, d));
                    pixels.push(Pixel { row, col });
                }
            }
        }
    }
    PointCloud { points, pixels: Some(pixels) }
}

/// `N_r` for a rendered buffer.
pub fn rendered_pixel_count(buf: &DepthBuffer) -> usize {
    buf.valid_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).unwrap()
    }

    fn big_triangle(z: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::new(-100.0, -100.0, z), Vec3::new(300.0, -100.0, z), Vec3::new(-100.0, 300.0, z)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn constant_depth_plane_fills_frame() {
        let buf = render_depth(&big_triangle(1.0), &Pose6D::identity(), &cam());
        assert_eq!(rendered_pixel_count(&buf), 128 * 128);
        assert!(buf.as_slice().iter().all(|&d| d == 1.0));
        assert_eq!(buf.footprint(), Some(BoundingBox::full(128, 128)));
        let cloud = buffer_to_cloud(&buf, &cam());
        assert_eq!(cloud.len(), 128 * 128);
        assert!(cloud.points.iter().all(|p| p.z == 1.0));
    }

    #[test]
    fn behind_camera_is_empty() {
        let buf = render_depth(&big_triangle(1.0), &Pose6D::from_translation(0.0, 0.0, -3.0), &cam());
        assert_eq!(buf.valid_count(), 0);
        assert!(buffer_to_cloud(&buf, &cam()).is_empty());
        assert_eq!(buf.footprint(), None);
    }

    #[test]
    fn nearer_triangle_wins() {
        let c = cam();
        let mut buf = render_depth(&big_triangle(2.0), &Pose6D::identity(), &c);
        buf.draw(&big_triangle(1.0), &Pose6D::identity(), &c);
        assert!(buf.as_slice().iter().all(|&d| d == 1.0));
        buf.draw(&big_triangle(2.0), &Pose6D::identity(), &c);
        assert!(buf.as_slice().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn principal_pixel_backprojects_onto_axis() {
        let mut buf = DepthBuffer::for_camera(&cam());
        // Tiny triangle around pixel (64, 64) at depth 2.
        buf.draw_triangle(
            &cam(),
            [Vec3::new(-0.004, -0.004, 2.0), Vec3::new(0.004, -0.004, 2.0), Vec3::new(0.0, 0.004, 2.0)],
        );
        assert_eq!(buf.valid_count(), 1);
        let cloud = buffer_to_cloud(&buf, &cam());
        assert_eq!(cloud.points, vec![Vec3::new(0.0, 0.0, 2.0)]);
    }

    #[test]
    fn straddling_triangle_is_clipped() {
        // A floor-like triangle running from behind the camera to far ahead.
        let tri = [Vec3::new(-5.0, 0.5, -1.0), Vec3::new(5.0, 0.5, -1.0), Vec3::new(0.0, 0.5, 10.0)];
        let mut buf = DepthBuffer::for_camera(&cam());
        buf.draw_triangle(&cam(), tri);
        assert!(buf.valid_count() > 0);
        for row in 0..128 {
            for col in 0..128 {
                if let Some(d) = buf.get(row, col) {
                    // Every hit lies on the plane y = 0.5 in front of the camera.
                    let p = cam().backproject(col as f64, row as f64, d);
                    assert!((p.y - 0.5).abs() < 1e-9 && p.z >= NEAR_PLANE);
                }
            }
        }
    }

    #[test]
    fn clear_resets_everything() {
        let c = cam();
        let mut buf =
            render_depth(&crate::fixtures::cuboid(0.1, 0.1, 0.1), &Pose6D::from_translation(0.0, 0.0, 0.5), &c);
        assert!(buf.valid_count() > 0);
        buf.clear();
        assert_eq!(buf, DepthBuffer::for_camera(&c));
    }

    #[test]
    fn shared_edges_cover_each_pixel_once() {
        // Two triangles splitting a square along its diagonal; pixel centers on
        // the diagonal must be claimed by exactly one of them.
        let c = cam();
        let quad = [
            Vec3::new(-0.2, -0.2, 1.0),
            Vec3::new(0.2, -0.2, 1.0),
            Vec3::new(0.2, 0.2, 1.0),
            Vec3::new(-0.2, 0.2, 1.0),
        ];
        let mut a = DepthBuffer::for_camera(&c);
        a.draw_triangle(&c, [quad[0], quad[1], quad[2]]);
        let mut b = DepthBuffer::for_camera(&c);
        b.draw_triangle(&c, [quad[0], quad[2], quad[3]]);
        let mut both = DepthBuffer::for_camera(&c);
        both.draw_triangle(&c, [quad[0], quad[1], quad[2]]);
        both.draw_triangle(&c, [quad[0], quad[2], quad[3]]);
        assert_eq!(a.valid_count() + b.valid_count(), both.valid_count());
    }
}
