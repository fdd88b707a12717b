//! Frame ingestion: proposal filtering, mask back-projection, denoising and
//! descriptor pooling.

use alloc::vec::Vec;

use crate::camera::Frame;
use crate::dbscan::dbscan_denoise;
use crate::descriptor;
use crate::geometry::{Aabb3, Point3};
use crate::mask::Mask;
use crate::{Error, Result};

/// Thresholds applied to raw 2D proposals before lifting them to 3D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub min_confidence: f64,
    pub min_mask_px: usize,
    pub max_mask_fraction: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    /// Pixel stride used when back-projecting masks.
    pub subsample_stride: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_confidence: 0.5, min_mask_px: 100, max_mask_fraction: 0.8, dbscan_eps: 0.05, dbscan_min_pts: 10, subsample_stride: 2 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::InvalidConfig("min_confidence must lie in [0, 1]"));
        }
        if self.min_mask_px < 1 {
            return Err(Error::InvalidConfig("min_mask_px must be at least 1"));
        }
        if !(self.max_mask_fraction > 0.0 && self.max_mask_fraction <= 1.0) {
            return Err(Error::InvalidConfig("max_mask_fraction must lie in (0, 1]"));
        }
        if !(self.dbscan_eps > 0.0) {
            return Err(Error::InvalidConfig("dbscan_eps must be positive"));
        }
        if self.subsample_stride < 1 {
            return Err(Error::InvalidConfig("subsample_stride must be at least 1"));
        }
        Ok(())
    }

    /// The keep predicate for a single proposal.
    pub fn accepts(&self, confidence: f64, area: usize, total_px: usize) -> bool {
        confidence >= self.min_confidence && area >= self.min_mask_px && (area as f64) / (total_px as f64) <= self.max_mask_fraction
    }
}

/// A 2D mask proposal with its confidence and pooled descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub mask: Mask,
    pub confidence: f64,
    pub descriptor: Vec<f64>,
}

/// A proposal lifted to world-frame points.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub confidence: f64,
    /// Unit-norm.
    pub descriptor: Vec<f64>,
    pub points: Vec<Point3>,
}

impl Detection {
    pub fn new(confidence: f64, descriptor: Vec<f64>, points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("detection has no points"));
        }
        Ok(Self { confidence, descriptor: descriptor::normalized(descriptor)?, points })
    }

    pub fn aabb(&self) -> Aabb3 {
        Aabb3::from_points(&self.points).expect("detection has points")
    }
}

/// Back-projects every `stride`-th mask pixel with valid depth into the world frame.
pub fn project_mask_to_points(frame: &Frame, mask: &Mask, stride: usize) -> Result<Vec<Point3>> {
    let k = &frame.intrinsics;
    if mask.width() != k.width || mask.height() != k.height {
        return Err(Error::DimensionMismatch("mask resolution differs from frame"));
    }
    if stride < 1 {
        return Err(Error::InvalidConfig("subsample stride must be at least 1"));
    }
    let mut points = Vec::new();
    for (u, v) in mask.iter_set() {
        if u % stride != 0 || v % stride != 0 {
            continue;
        }
        let z = frame.depth.get(u, v) as f64;
        if z <= 0.0 {
            continue;
        }
        points.push(frame.pose.camera_to_world(k.unproject(u as f64, v as f64, z)));
    }
    if points.is_empty() {
        return Err(Error::EmptyProjection);
    }
    Ok(points)
}

/// Keeps proposals passing [`FilterConfig::accepts`], preserving order.
pub fn filter_proposals(proposals: Vec<Proposal>, config: &FilterConfig) -> Vec<Proposal> {
    proposals.into_iter().filter(|p| config.accepts(p.confidence, p.mask.area(), p.mask.len())).collect()
}

/// Filter, project and denoise one frame's proposals. Proposals that fail to
/// lift are skipped; the second return value counts them.
pub fn lift_proposals(frame: &Frame, proposals: Vec<Proposal>, config: &FilterConfig) -> (Vec<Detection>, usize) {
    let mut skipped = 0;
    let mut out = Vec::new();
    for p in filter_proposals(proposals, config) {
        let lifted = project_mask_to_points(frame, &p.mask, config.subsample_stride)
            .and_then(|pts| dbscan_denoise(&pts, config.dbscan_eps, config.dbscan_min_pts))
            .and_then(|pts| Detection::new(p.confidence, p.descriptor, pts));
        match lifted {
            Ok(d) => out.push(d),
            Err(_) => skipped += 1,
        }
    }
    (out, skipped)
}

/// Dense `rows × cols × dim` feature map, row-major with the channel innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::LengthMismatch { expected: rows * cols * dim, found: data.len() });
        }
        Ok(Self { rows, cols, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let at = (row * self.cols + col) * self.dim;
        &self.data[at..at + self.dim]
    }
}

/// Averages the grid cells covered by `mask` and L2-normalizes the mean.
///
/// The mask is downsampled to grid resolution by nearest-neighbor sampling:
/// grid cell `(r, c)` reads mask pixel `(c·s + s/2, r·s + s/2)`, clamped to
/// the image.
pub fn pool_descriptor(grid: &FeatureGrid, mask: &Mask, stride: usize) -> Result<Vec<f64>> {
    if stride < 1 {
        return Err(Error::InvalidConfig("feature stride must be at least 1"));
    }
    let (w, h) = (mask.width(), mask.height());
    let rows_ok = grid.rows == h / stride || grid.rows == h.div_ceil(stride);
    let cols_ok = grid.cols == w / stride || grid.cols == w.div_ceil(stride);
    if !rows_ok || !cols_ok {
        return Err(Error::DimensionMismatch("feature grid does not match mask size and stride"));
    }
    let mut sum = alloc::vec![0.0; grid.dim];
    let mut covered = 0usize;
    for r in 0..grid.rows {
        let v = (r * stride + stride / 2).min(h - 1);
        for c in 0..grid.cols {
            let u = (c * stride + stride / 2).min(w - 1);
            if mask.get(u, v) {
                covered += 1;
                for (acc, x) in sum.iter_mut().zip(grid.cell(r, c)) {
                    *acc += x;
                }
            }
        }
    }
    if covered == 0 {
        return Err(Error::EmptyMask);
    }
    for x in sum.iter_mut() {
        *x /= covered as f64;
    }
    descriptor::normalized(sum)
}
