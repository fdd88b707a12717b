//! Pinhole intrinsics, camera-to-world poses and depth frames.

use alloc::vec::Vec;

use crate::geometry::{self, Mat3, Point3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidInput("principal point outside the image"));
        }
        Ok(())
    }

    /// Camera-frame point for pixel `(u, v)` at depth `z`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3 {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }

    /// Continuous pixel coordinates of a camera-frame point; `None` behind the camera.
    #[inline]
    pub fn project(&self, p: Point3) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy))
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Point3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rotation: geometry::IDENTITY, translation: [0.0; 3] };

    pub fn new(rotation: Mat3, translation: Point3) -> Result<Self> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    /// Parses the 12-float row-major `[R|t]` layout used by sequence files.
    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        Self::new([[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]], [m[3], m[7], m[11]])
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2]]
    }

    /// Rotation must be orthonormal with determinant +1.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let rtr = r[0][i] * r[0][j] + r[1][i] * r[1][j] + r[2][i] * r[2][j];
                let expect = if i == j { 1.0 } else { 0.0 };
                if !((rtr - expect).abs() < 1e-6) {
                    return Err(Error::InvalidInput("rotation is not orthonormal"));
                }
            }
        }
        if geometry::determinant(r) <= 0.0 {
            return Err(Error::InvalidInput("rotation is a reflection"));
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("translation is not finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn camera_to_world(&self, p: Point3) -> Point3 {
        geometry::add(geometry::mat_vec(&self.rotation, p), self.translation)
    }

    #[inline]
    pub fn world_to_camera(&self, p: Point3) -> Point3 {
        geometry::mat_t_vec(&self.rotation, geometry::sub(p, self.translation))
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Point3 {
        self.translation
    }
}

/// Row-major depth raster in meters; `0` marks an invalid sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch { expected: width * height, found: data.len() });
        }
        if data.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidInput("depth values must be finite and non-negative"));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: alloc::vec![value; width * height] }
    }

    /// Converts raw millimeter-style integer samples with the given scale (units per meter).
    pub fn from_u16(width: usize, height: usize, raw: &[u16], units_per_meter: f64) -> Result<Self> {
        let data = raw.iter().map(|&d| (d as f64 / units_per_meter) as f32).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, depth: f32) {
        self.data[v * self.width + u] = depth;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// One posed RGB-D observation.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: u32,
    pub depth: DepthImage,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Interleaved RGB8, `width * height * 3` bytes when present.
    pub rgb: Option<Vec<u8>>,
}

impl Frame {
    pub fn new(index: u32, depth: DepthImage, pose: Pose, intrinsics: CameraIntrinsics) -> Result<Self> {
        if depth.width() != intrinsics.width || depth.height() != intrinsics.height {
            return Err(Error::DimensionMismatch("depth resolution differs from intrinsics"));
        }
        Ok(Self { index, depth, pose, intrinsics, rgb: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_reject_bad_principal_point() {
        assert!(CameraIntrinsics::new(500.0, 500.0, 640.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(0.0, 500.0, 320.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).is_ok());
    }

    #[test]
    fn pose_rejects_reflection() {
        let r = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Pose::new(r, [0.0; 3]).is_err());
    }

    #[test]
    fn world_camera_round_trip() {
        let c = libm::cos(0.3);
        let s = libm::sin(0.3);
        let pose = Pose::new([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], [1.0, 2.0, 3.0]).unwrap();
        let p = [0.4, -0.2, 2.5];
        let back = pose.world_to_camera(pose.camera_to_world(p));
        for k in 0..3 {
            assert!((back[k] - p[k]).abs() < 1e-12);
        }
        assert_eq!(Pose::from_row_major(&pose.to_row_major()).unwrap(), pose);
    }
}
