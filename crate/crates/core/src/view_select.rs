//! Best-view selection: cluster the cameras that observed an object, splat
//! the object into each representative camera and keep the largest mask.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraIntrinsics, DepthImage, Frame, Pose};
use crate::geometry::{distance_sq, Point3};
use crate::mask::{Mask, PixelRect};
use crate::object_map::MapObject;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewConfig {
    /// Number of viewpoint clusters (and maximum raycasts per object).
    pub num_views: usize,
    pub splat_radius_px: usize,
    /// Occlusion slack against recorded depth, meters.
    pub tau_occ: f64,
    pub crop_padding_px: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
    pub occlusion_test: bool,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { num_views: 5, splat_radius_px: 2, tau_occ: 0.05, crop_padding_px: 10, kmeans_iterations: 50, seed: 0, occlusion_test: true }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_views == 0 {
            return Err(Error::InvalidConfig("num_views must be positive"));
        }
        if !(self.tau_occ >= 0.0) {
            return Err(Error::InvalidConfig("tau_occ must be non-negative"));
        }
        Ok(())
    }
}

/// Result of k-means over camera positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewClusters {
    pub centroids: Vec<Point3>,
    /// Cluster of each input position.
    pub assignment: Vec<usize>,
    /// Per non-empty cluster, the member nearest the centroid.
    pub representatives: Vec<usize>,
}

/// k-means++ seeded Lloyd iterations with a fixed-seed ChaCha stream.
pub fn kmeans(positions: &[Point3], k: usize, iterations: usize, seed: u64) -> ViewClusters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = positions.len();
    let k = k.min(n);
    let mut centroids: Vec<Point3> = Vec::with_capacity(k);
    if k > 0 {
        centroids.push(positions[rng.random_range(0..n)]);
    }
    let mut d2: Vec<f64> = positions.iter().map(|p| distance_sq(*p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = positions[pick];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(positions) {
            *d = d.min(distance_sq(*p, c));
        }
    }

    let mut assignment = alloc::vec![0usize; n];
    for _ in 0..iterations {
        let mut changed = false;
        for (i, p) in positions.iter().enumerate() {
            let c = nearest(&centroids, *p);
            if c != assignment[i] {
                assignment[i] = c;
                changed = true;
            }
        }
        let mut sums = alloc::vec![[0.0f64; 3]; k];
        let mut counts = alloc::vec![0usize; k];
        for (p, &c) in positions.iter().zip(&assignment) {
            for a in 0..3 {
                sums[c][a] += p[a];
            }
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let m = counts[c] as f64;
                centroids[c] = [sums[c][0] / m, sums[c][1] / m, sums[c][2] / m];
            }
        }
        if !changed && iterations > 1 {
            // assignment stable, centroids already match it
            let stable = positions.iter().enumerate().all(|(i, p)| nearest(&centroids, *p) == assignment[i]);
            if stable {
                break;
            }
        }
    }

    let mut representatives = Vec::new();
    for (c, centroid) in centroids.iter().enumerate() {
        let best = (0..n).filter(|&i| assignment[i] == c).min_by(|&a, &b| {
            distance_sq(positions[a], *centroid)
                .partial_cmp(&distance_sq(positions[b], *centroid))
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        if let Some(i) = best {
            representatives.push(i);
        }
    }
    ViewClusters { centroids, assignment, representatives }
}

fn nearest(centroids: &[Point3], p: Point3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, q) in centroids.iter().enumerate() {
        let d = distance_sq(p, *q);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Indices of at most `num_views` representative camera positions.
pub fn cluster_viewpoints(positions: &[Point3], num_views: usize, iterations: usize, seed: u64) -> Vec<usize> {
    if positions.len() <= num_views {
        return (0..positions.len()).collect();
    }
    kmeans(positions, num_views, iterations, seed).representatives
}

/// Splats world points into a camera as disks of `splat_radius_px`.
///
/// With `depth`, a pixel is only marked when the point's camera depth is at
/// most the recorded depth plus `tau_occ`; pixels without a depth sample pass.
pub fn raycast_mask(
    points: &[Point3],
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    depth: Option<&DepthImage>,
    splat_radius_px: usize,
    tau_occ: f64,
) -> Result<Mask> {
    if points.is_empty() {
        return Err(Error::InvalidInput("object has no points"));
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    if depth.is_some_and(|d| d.width() != w || d.height() != h) {
        return Err(Error::DimensionMismatch("depth resolution differs from intrinsics"));
    }
    let r = splat_radius_px as i64;
    let mut mask = Mask::new(w, h);
    for p in points {
        let c = pose.world_to_camera(*p);
        let Some((u, v)) = intrinsics.project(c) else { continue };
        let (ui, vi) = (libm::round(u) as i64, libm::round(v) as i64);
        if ui < 0 || vi < 0 || ui >= w as i64 || vi >= h as i64 {
            continue;
        }
        for dv in -r..=r {
            for du in -r..=r {
                if du * du + dv * dv > r * r {
                    continue;
                }
                let (x, y) = (ui + du, vi + dv);
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    continue;
                }
                let (x, y) = (x as usize, y as usize);
                if let Some(d) = depth {
                    let recorded = d.get(x, y) as f64;
                    if recorded > 0.0 && c[2] > recorded + tau_occ {
                        continue;
                    }
                }
                mask.set(x, y, true);
            }
        }
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}

/// Camera data for the frames an object was observed in.
pub trait ViewSource {
    fn camera(&self, frame_index: u32) -> Option<(Pose, CameraIntrinsics)>;
    fn depth(&self, frame_index: u32) -> Option<Cow<'_, DepthImage>>;
}

impl ViewSource for BTreeMap<u32, Frame> {
    fn camera(&self, frame_index: u32) -> Option<(Pose, CameraIntrinsics)> {
        self.get(&frame_index).map(|f| (f.pose, f.intrinsics))
    }

    fn depth(&self, frame_index: u32) -> Option<Cow<'_, DepthImage>> {
        self.get(&frame_index).map(|f| Cow::Borrowed(&f.depth))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestView {
    pub frame_index: u32,
    pub mask: Mask,
    pub crop_box: PixelRect,
    pub area_px: usize,
}

/// A best view plus the number of raycasts spent finding it.
#[derive(Debug, Clone, PartialEq)]
pub struct BestViewOutcome {
    pub view: BestView,
    pub raycasts: usize,
    pub candidates: Vec<u32>,
}

/// Picks the representative view with the largest splatted area; ties go to
/// the lowest frame index.
pub fn best_view(object: &MapObject, source: &impl ViewSource, config: &ViewConfig) -> Result<BestViewOutcome> {
    let mut frames = Vec::new();
    let mut positions = Vec::new();
    for &fi in object.frame_indices() {
        if let Some((pose, _)) = source.camera(fi) {
            frames.push(fi);
            positions.push(pose.position());
        }
    }
    let no_view = Error::NoVisibleView { object_id: object.id() };
    if frames.is_empty() {
        return Err(no_view);
    }
    let reps = cluster_viewpoints(&positions, config.num_views, config.kmeans_iterations, config.seed);
    let mut candidates: Vec<u32> = reps.iter().map(|&i| frames[i]).collect();
    candidates.sort_unstable();

    let mut raycasts = 0;
    let mut best: Option<(usize, u32, Mask)> = None;
    for &fi in &candidates {
        let (pose, intrinsics) = source.camera(fi).expect("frame listed above");
        let depth = if config.occlusion_test { source.depth(fi) } else { None };
        raycasts += 1;
        let Ok(mask) = raycast_mask(object.points(), &pose, &intrinsics, depth.as_deref(), config.splat_radius_px, config.tau_occ) else {
            continue;
        };
        let area = mask.area();
        if best.as_ref().is_none_or(|(a, _, _)| area > *a) {
            best = Some((area, fi, mask));
        }
    }
    let (area_px, frame_index, mask) = best.ok_or(no_view)?;
    let crop_box = mask.bounding_rect().expect("non-empty mask").padded(config.crop_padding_px, mask.width(), mask.height());
    Ok(BestViewOutcome { view: BestView { frame_index, mask, crop_box, area_px }, raycasts, candidates })
}
