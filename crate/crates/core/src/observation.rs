//! Observed depth: loading, cropping by detection boxes and back-projection.

use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pixel, PointCloud};

/// Depths beyond this are treated as sensor artifacts.
pub const MAX_DEPTH_M: f64 = 20.0;

/// Axis-aligned pixel box, `[x_min, x_max) x [y_min, y_max)`.
///
/// Coordinates are signed so that detector output reaching past the image
/// border can be represented before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BoundingBox {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Self {
        BoundingBox { x_min, y_min, x_max, y_max }
    }

    pub fn full(width: u32, height: u32) -> Self {
        BoundingBox::new(0, 0, width as i64, height as i64)
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> i64 {
        self.width().max(0) * self.height().max(0)
    }

    /// Center in image coordinates (pixel centers sit on integers).
    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max - 1) as f64 / 2.0, (self.y_min + self.y_max - 1) as f64 / 2.0)
    }

    pub fn contains(&self, col: i64, row: i64) -> bool {
        (self.x_min..self.x_max).contains(&col) && (self.y_min..self.y_max).contains(&row)
    }

    /// Intersects with the image; fails when nothing is left.
    pub fn clamped(&self, width: u32, height: u32) -> Result<BoundingBox> {
        let b = BoundingBox::new(
            self.x_min.clamp(0, width as i64),
            self.y_min.clamp(0, height as i64),
            self.x_max.clamp(0, width as i64),
            self.y_max.clamp(0, height as i64),
        );
        if b.x_min < b.x_max && b.y_min < b.y_max {
            Ok(b)
        } else {
            Err(Error::EmptyBox)
        }
    }

    /// Tight box around a set of pixels.
    pub fn around(pixels: impl IntoIterator<Item = Pixel>) -> Option<BoundingBox> {
        let mut it = pixels.into_iter();
        let first = it.next()?;
        let mut b = BoundingBox::new(first.col as i64, first.row as i64, first.col as i64 + 1, first.row as i64 + 1);
        for p in it {
            b.x_min = b.x_min.min(p.col as i64);
            b.y_min = b.y_min.min(p.row as i64);
            b.x_max = b.x_max.max(p.col as i64 + 1);
            b.y_max = b.y_max.max(p.row as i64 + 1);
        }
        Some(b)
    }
}

/// Observed range image in meters; `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    depth: Vec<f64>,
}

impl DepthImage {
    /// Builds from meters. Non-finite, nonpositive and out-of-range values
    /// become invalid.
    pub fn from_meters(width: u32, height: u32, mut depth: Vec<f64>) -> Self {
        assert_eq!(depth.len(), width as usize * height as usize, "depth buffer size");
        for d in &mut depth {
            if !(d.is_finite() && *d > 0.0 && *d <= MAX_DEPTH_M) {
                *d = 0.0;
            }
        }
        DepthImage { width, height, depth }
    }

    /// Builds from 16-bit millimeter samples, 0 = invalid.
    pub fn from_millimeters(width: u32, height: u32, mm: &[u16]) -> Self {
        Self::from_meters(width, height, mm.iter().map(|&v| v as f64 / 1000.0).collect())
    }

    /// Rounds to millimeters, the resolution of the on-disk format.
    pub fn to_millimeters(&self) -> Vec<u16> {
        self.depth.iter().map(|&d| meters_to_mm(d)).collect()
    }

    pub fn quantized(&self) -> DepthImage {
        DepthImage::from_millimeters(self.width, self.height, &self.to_millimeters())
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
        (d > 0.0).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn check_dimensions(&self, cam: &CameraIntrinsics) -> Result<()> {
        if self.width != cam.width || self.height != cam.height {
            return Err(Error::DimensionMismatch {
                width: cam.width,
                height: cam.height,
                found_width: self.width,
                found_height: self.height,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_depth_png(path, self.width, self.height, &self.to_millimeters())
    }
}

pub(crate) fn meters_to_mm(d: f64) -> u16 {
    if d.is_finite() && d > 0.0 {
        (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
    } else {
        0
    }
}

/// Writes a 16-bit grayscale PNG of millimeter depths.
pub fn save_depth_png(path: &Path, width: u32, height: u32, mm: &[u16]) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width, height, mm.to_vec()).expect("buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

/// Loads a 16-bit millimeter depth image and checks it against `cam`.
pub fn load_depth(path: &Path, cam: &CameraIntrinsics) -> Result<DepthImage> {
    let img = image::open(path)?;
    let gray = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(Error::Image(image::ImageError::Unsupported(
                image::error::UnsupportedError::from_format_and_kind(
                    image::error::ImageFormatHint::PathExtension(path.to_path_buf()),
                    image::error::UnsupportedErrorKind::Color(other.color().into()),
                ),
            )))
        }
    };
    let (w, h) = gray.dimensions();
    let out = DepthImage::from_millimeters(w, h, gray.as_raw());
    out.check_dimensions(cam)?;
    Ok(out)
}

/// Back-projects every valid pixel inside `bbox` (clamped to the image).
/// Points keep their source pixel; an all-invalid crop gives an empty cloud.
pub fn crop_and_backproject(img: &DepthImage, bbox: &BoundingBox, cam: &CameraIntrinsics) -> Result<PointCloud> {
    let b = bbox.clamped(img.width, img.height)?;
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for row in b.y_min as u32..b.y_max as u32 {
        for col in b.x_min as u32..b.x_max as u32 {
            if let Some(d) = img.get(row, col) {
                points.push(cam.backproject(col as f64, row as f64, d));
                pixels.push(Pixel { row, col });
            }
        }
    }
    Ok(PointCloud { points, pixels: Some(pixels) })
}

/// `N_b`: the number of observed points in a crop.
pub fn observed_count(cloud: &PointCloud) -> usize {
    cloud.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).unwrap()
    }

    #[test]
    fn millimeter_conversion() {
        let img = DepthImage::from_millimeters(2, 1, &[1500, 0]);
        assert_eq!(img.get(0, 0), Some(1.5));
        assert_eq!(img.get(0, 1), None);
        let far = DepthImage::from_meters(1, 1, vec![25.0]);
        assert_eq!(far.valid_count(), 0);
    }

    #[test]
    fn png_round_trip_and_dimension_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let mm: Vec<u16> = (0..64 * 64).map(|i| (i % 3000) as u16).collect();
        save_depth_png(&path, 64, 64, &mm).unwrap();
        let small = CameraIntrinsics::new(50.0, 50.0, 32.0, 32.0, 64, 64).unwrap();
        let img = load_depth(&path, &small).unwrap();
        assert_eq!(img.to_millimeters(), mm);
        assert!(matches!(load_depth(&path, &cam()), Err(Error::DimensionMismatch { .. })));
        assert!(load_depth(&dir.path().join("missing.png"), &small).is_err());
    }

    #[test]
    fn crop_examples() {
        let c = cam();
        let mut depth = vec![0.0; 128 * 128];
        depth[64 * 128 + 64] = 2.0;
        let img = DepthImage::from_meters(128, 128, depth);
        let single = crop_and_backproject(&img, &BoundingBox::new(64, 64, 65, 65), &c).unwrap();
        assert_eq!(single.points, vec![crate::geometry::Vec3::new(0.0, 0.0, 2.0)]);
        assert_eq!(observed_count(&single), 1);
        let empty = crop_and_backproject(&img, &BoundingBox::new(0, 0, 10, 10), &c).unwrap();
        assert!(empty.is_empty());
        let plane = DepthImage::from_meters(128, 128, vec![1.0; 128 * 128]);
        let full = crop_and_backproject(&plane, &BoundingBox::full(128, 128), &c).unwrap();
        assert_eq!(observed_count(&full), plane.valid_count());
    }

    #[test]
    fn boxes_outside_the_image_are_clamped() {
        let b = BoundingBox::new(-10, 120, 20, 200).clamped(128, 128).unwrap();
        assert_eq!(b, BoundingBox::new(0, 120, 20, 128));
        assert!(BoundingBox::new(130, 0, 140, 10).clamped(128, 128).is_err());
    }

    #[test]
    fn crop_count_matches_mask_popcount() {
        let c = cam();
        let depth: Vec<f64> =
            (0..128 * 128).map(|i| if (i * 7919) % 5 == 0 { 0.0 } else { 1.0 + (i % 11) as f64 * 0.01 }).collect();
        let img = DepthImage::from_meters(128, 128, depth.clone());
        let b = BoundingBox::new(10, 20, 70, 90);
        let mut expected = 0;
        for row in 20..90 {
            for col in 10..70 {
                if depth[row * 128 + col] > 0.0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(observed_count(&crop_and_backproject(&img, &b, &c).unwrap()), expected);
    }

    proptest! {
        #[test]
        fn backprojection_reprojects_to_source(row in 0u32..128, col in 0u32..128, mm in 1u16..20000) {
            let c = cam();
            let mut depth = vec![0u16; 128 * 128];
            depth[(row * 128 + col) as usize] = mm;
            let img = DepthImage::from_millimeters(128, 128, &depth);
            let cloud = crop_and_backproject(&img, &BoundingBox::full(128, 128), &c).unwrap();
            prop_assert_eq!(cloud.len(), 1);
            let (u, v) = c.project(&cloud.points[0]);
            prop_assert!((u - col as f64).abs() <= 0.5 && (v - row as f64).abs() <= 0.5);
            prop_assert!((cloud.points[0].z - mm as f64 / 1000.0).abs() <= 0.0005);
        }

        #[test]
        fn disjoint_crops_concatenate(split in 1i64..127, seed in 0u64..1000) {
            let c = cam();
            let depth: Vec<f64> = (0..128 * 128u64).map(|i| if (i ^ seed) % 3 == 0 { 0.0 } else { 1.5 }).collect();
            let img = DepthImage::from_meters(128, 128, depth);
            // Row-major order makes a horizontal split concatenate in order.
            let top = crop_and_backproject(&img, &BoundingBox::new(0, 0, 128, split), &c).unwrap();
            let bottom = crop_and_backproject(&img, &BoundingBox::new(0, split, 128, 128), &c).unwrap();
            let whole = crop_and_backproject(&img, &BoundingBox::full(128, 128), &c).unwrap();
            let mut joined = top.clone();
            joined.extend(&bottom);
            prop_assert_eq!(joined, whole);
        }
    }
}
