//! Incremental object-centric map: association of per-frame detections to
//! persistent objects, descriptor fusion, periodic duplicate merging and
//! final outlier filtering.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::descriptor;
use crate::geometry::{Aabb3, Point3};
use crate::ingest::Detection;
use crate::spatial::{voxel_downsample, GridIndex};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationConfig {
    /// Minimum cosine similarity for merging a detection into an object.
    pub sigma_vis: f64,
    /// Moving-average weight of the incoming descriptor.
    pub w_new: f64,
    /// Periodic merging runs when `frame_index % merge_period == 0`.
    pub merge_period: u32,
    pub sigma_vis_merge: f64,
    pub overlap_thr: f64,
    /// Neighbor radius of [`spatial_overlap`].
    pub overlap_radius: f64,
    pub aabb_inflate: f64,
    pub post_min_points: usize,
    pub post_min_detections: u32,
    pub post_max_extent: f64,
    /// Objects above this many points are voxel-downsampled.
    pub max_object_points: Option<usize>,
    pub downsample_voxel: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            sigma_vis: 0.75,
            w_new: 0.75,
            merge_period: 10,
            sigma_vis_merge: 0.65,
            overlap_thr: 0.5,
            overlap_radius: 0.025,
            aabb_inflate: 0.05,
            post_min_points: 25,
            post_min_detections: 3,
            post_max_extent: 6.0,
            max_object_points: Some(50_000),
            downsample_voxel: 0.01,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.sigma_vis) || !(-1.0..=1.0).contains(&self.sigma_vis_merge) {
            return Err(Error::InvalidConfig("similarity thresholds must lie in [-1, 1]"));
        }
        if !(self.sigma_vis_merge < self.sigma_vis) {
            return Err(Error::InvalidConfig("sigma_vis_merge must be below sigma_vis"));
        }
        if !(self.w_new > 0.5 && self.w_new <= 1.0) {
            return Err(Error::InvalidConfig("w_new must lie in (0.5, 1]"));
        }
        if self.merge_period == 0 {
            return Err(Error::InvalidConfig("merge_period must be positive"));
        }
        if !(0.0..=1.0).contains(&self.overlap_thr) {
            return Err(Error::InvalidConfig("overlap_thr must lie in [0, 1]"));
        }
        if !(self.overlap_radius > 0.0) || !(self.aabb_inflate >= 0.0) || !(self.downsample_voxel > 0.0) {
            return Err(Error::InvalidConfig("radii must be positive"));
        }
        if !(self.post_max_extent > 0.0) {
            return Err(Error::InvalidConfig("post_max_extent must be positive"));
        }
        Ok(())
    }
}

/// An accumulated 3D instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MapObject {
    id: u64,
    points: Vec<Point3>,
    descriptor: Vec<f64>,
    num_detections: u32,
    frame_indices: BTreeSet<u32>,
    aabb: Aabb3,
}

impl MapObject {
    /// Rebuilds an object from stored parts, checking its invariants.
    pub fn from_parts(
        id: u64,
        points: Vec<Point3>,
        descriptor: Vec<f64>,
        num_detections: u32,
        frame_indices: BTreeSet<u32>,
    ) -> Result<Self> {
        let aabb = Aabb3::from_points(&points).ok_or(Error::InvalidInput("object has no points"))?;
        if num_detections == 0 {
            return Err(Error::InvalidInput("object has zero detections"));
        }
        Ok(Self { id, points, descriptor: descriptor::normalized(descriptor)?, num_detections, frame_indices, aabb })
    }

    fn from_detection(id: u64, det: Detection, frame_index: u32) -> Self {
        let aabb = det.aabb();
        Self { id, points: det.points, descriptor: det.descriptor, num_detections: 1, frame_indices: BTreeSet::from([frame_index]), aabb }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn descriptor(&self) -> &[f64] {
        &self.descriptor
    }

    pub fn num_detections(&self) -> u32 {
        self.num_detections
    }

    pub fn frame_indices(&self) -> &BTreeSet<u32> {
        &self.frame_indices
    }

    pub fn aabb(&self) -> &Aabb3 {
        &self.aabb
    }

    /// Folds a detection into this object.
    pub fn merge_detection(&mut self, det: Detection, frame_index: u32, w_new: f64) -> Result<()> {
        let fused = descriptor::moving_average(&self.descriptor, &det.descriptor, w_new)?;
        self.descriptor = fused;
        for p in &det.points {
            self.aabb.include(*p);
        }
        self.points.extend(det.points);
        self.num_detections += 1;
        self.frame_indices.insert(frame_index);
        Ok(())
    }

    /// Absorbs `other`, weighting descriptors by detection counts.
    fn absorb(&mut self, other: MapObject) -> Result<()> {
        let fused = descriptor::blend(&self.descriptor, self.num_detections as f64, &other.descriptor, other.num_detections as f64)?;
        self.descriptor = fused;
        self.aabb = self.aabb.union(&other.aabb);
        self.points.extend(other.points);
        self.num_detections += other.num_detections;
        self.frame_indices.extend(other.frame_indices);
        Ok(())
    }

    fn enforce_point_cap(&mut self, cap: Option<usize>, voxel: f64) {
        if let Some(cap) = cap {
            if self.points.len() > cap {
                self.points = voxel_downsample(&self.points, voxel);
                self.aabb = Aabb3::from_points(&self.points).expect("downsampling keeps a point");
            }
        }
    }
}

/// Association decision for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Association {
    AssignNew,
    MergeWith(u64),
}

/// Per-call bookkeeping returned by [`ObjectMap::integrate_frame`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub created: usize,
    pub merged: usize,
    pub skipped: usize,
    pub periodic_merges: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectMap {
    /// Sorted by id.
    objects: Vec<MapObject>,
    next_id: u64,
    frames_integrated: u64,
}

impl ObjectMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a map from checkpointed parts.
    pub fn from_parts(mut objects: Vec<MapObject>, next_id: u64, frames_integrated: u64) -> Result<Self> {
        objects.sort_by_key(|o| o.id);
        if objects.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidInput("duplicate object id"));
        }
        if objects.last().is_some_and(|o| o.id >= next_id) {
            return Err(Error::InvalidInput("next_id must exceed every object id"));
        }
        Ok(Self { objects, next_id, frames_integrated })
    }

    pub fn objects(&self) -> &[MapObject] {
        &self.objects
    }

    pub fn get(&self, id: u64) -> Option<&MapObject> {
        self.position(id).map(|i| &self.objects[i])
    }

    fn position(&self, id: u64) -> Option<usize> {
        self.objects.binary_search_by_key(&id, |o| o.id).ok()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn frames_integrated(&self) -> u64 {
        self.frames_integrated
    }

    pub fn total_points(&self) -> usize {
        self.objects.iter().map(|o| o.points.len()).sum()
    }

    fn insert_new(&mut self, det: Detection, frame_index: u32) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.objects.push(MapObject::from_detection(id, det, frame_index));
        id
    }

    /// Ids of objects whose box, inflated by `inflate`, meets the detection box.
    pub fn candidate_objects(&self, detection_box: &Aabb3, inflate: f64) -> Vec<u64> {
        self.objects.iter().filter(|o| o.aabb.inflated(inflate).intersects(detection_box)).map(|o| o.id).collect()
    }

    /// Merge into the most similar intersecting object when its similarity
    /// reaches `sigma_vis` (inclusive); ties go to the lowest id.
    pub fn associate(&self, detection: &Detection, sigma_vis: f64, inflate: f64) -> Association {
        let det_box = detection.aabb();
        let mut best: Option<(f64, u64)> = None;
        for o in &self.objects {
            if o.descriptor.len() != detection.descriptor.len() || !o.aabb.inflated(inflate).intersects(&det_box) {
                continue;
            }
            let sim = descriptor::dot(&o.descriptor, &detection.descriptor);
            if best.is_none_or(|(s, _)| sim > s) {
                best = Some((sim, o.id));
            }
        }
        match best {
            Some((sim, id)) if sim >= sigma_vis => Association::MergeWith(id),
            _ => Association::AssignNew,
        }
    }

    /// Adds one frame of filtered, denoised detections.
    ///
    /// The first integrated frame seeds one object per detection. Later frames
    /// decide every association against the map as it stood before the frame,
    /// then commit merges and insertions in detection order.
    pub fn integrate_frame(&mut self, detections: Vec<Detection>, frame_index: u32, config: &AssociationConfig) -> IntegrationStats {
        let mut stats = IntegrationStats::default();
        let first = self.frames_integrated == 0;
        self.frames_integrated += 1;
        let dim = self.objects.first().map(|o| o.descriptor.len());

        let decisions: Vec<Association> = if first {
            detections.iter().map(|_| Association::AssignNew).collect()
        } else {
            detections.iter().map(|d| self.associate(d, config.sigma_vis, config.aabb_inflate)).collect()
        };

        for (det, decision) in detections.into_iter().zip(decisions) {
            if dim.is_some_and(|n| n != det.descriptor.len()) || det.points.is_empty() {
                stats.skipped += 1;
                continue;
            }
            match decision {
                Association::AssignNew => {
                    self.insert_new(det, frame_index);
                    stats.created += 1;
                }
                Association::MergeWith(id) => {
                    let i = self.position(id).expect("associated object exists");
                    let obj = &mut self.objects[i];
                    if obj.merge_detection(det, frame_index, config.w_new).is_ok() {
                        obj.enforce_point_cap(config.max_object_points, config.downsample_voxel);
                        stats.merged += 1;
                    } else {
                        stats.skipped += 1;
                    }
                }
            }
        }

        if frame_index.is_multiple_of(config.merge_period) {
            stats.periodic_merges = self.periodic_merge(config);
        }
        stats
    }

    fn merge_score(&self, a: usize, b: usize, config: &AssociationConfig) -> Option<f64> {
        let (oa, ob) = (&self.objects[a], &self.objects[b]);
        if oa.descriptor.len() != ob.descriptor.len() {
            return None;
        }
        let sim = descriptor::dot(&oa.descriptor, &ob.descriptor);
        if sim < config.sigma_vis_merge || !oa.aabb.inflated(config.overlap_radius).intersects(&ob.aabb) {
            return None;
        }
        (spatial_overlap(&oa.points, &ob.points, config.overlap_radius) >= config.overlap_thr).then_some(sim)
    }

    /// Greedily merges the most similar qualifying pair until none is left.
    /// Returns the number of merges. The merged object keeps the lower id.
    pub fn periodic_merge(&mut self, config: &AssociationConfig) -> usize {
        // (similarity, lower id, higher id)
        let mut pairs: Vec<(f64, u64, u64)> = Vec::new();
        for a in 0..self.objects.len() {
            for b in a + 1..self.objects.len() {
                if let Some(s) = self.merge_score(a, b, config) {
                    pairs.push((s, self.objects[a].id, self.objects[b].id));
                }
            }
        }
        let mut merges = 0;
        loop {
            let best = pairs.iter().copied().reduce(|x, y| if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) { y } else { x });
            let Some((_, keep, drop)) = best else { break };
            let drop_at = self.position(drop).expect("pair refers to live object");
            let absorbed = self.objects.remove(drop_at);
            let keep_at = self.position(keep).expect("pair refers to live object");
            if self.objects[keep_at].absorb(absorbed).is_err() {
                // opposite descriptors with equal weight; cannot fuse
                pairs.retain(|p| (p.1, p.2) != (keep, drop));
                continue;
            }
            self.objects[keep_at].enforce_point_cap(config.max_object_points, config.downsample_voxel);
            merges += 1;
            pairs.retain(|p| p.1 != keep && p.2 != keep && p.1 != drop && p.2 != drop);
            for other in 0..self.objects.len() {
                if other == keep_at {
                    continue;
                }
                let (a, b) = if other < keep_at { (other, keep_at) } else { (keep_at, other) };
                if let Some(s) = self.merge_score(a, b, config) {
                    pairs.push((s, self.objects[a].id, self.objects[b].id));
                }
            }
        }
        merges
    }

    /// Drops objects with too few points or detections, or an oversized box.
    pub fn postprocess(&mut self, config: &AssociationConfig) -> usize {
        let before = self.objects.len();
        self.objects.retain(|o| {
            o.points.len() >= config.post_min_points
                && o.num_detections >= config.post_min_detections
                && o.aabb.max_extent() <= config.post_max_extent
        });
        before - self.objects.len()
    }
}

/// Fraction of the smaller set's points with a neighbor in the other set
/// within `radius`. When sizes tie, `a` is the queried set.
pub fn spatial_overlap(a: &[Point3], b: &[Point3], radius: f64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (small, large) = if b.len() < a.len() { (b, a) } else { (a, b) };
    let index = GridIndex::build(large, radius.max(1e-9));
    let hits = small.iter().filter(|p| index.any_within(large, **p, radius)).count();
    hits as f64 / small.len() as f64
}
