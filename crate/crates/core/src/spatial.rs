//! Uniform-grid neighbor index over 3D points.
//!
//! Points are bucketed by integer cell coordinates and sorted, so a radius
//! query touches only the cells overlapping the query ball. Built once per
//! point set; the index borrows nothing and stores point indices only.

use alloc::vec::Vec;

use crate::geometry::{distance_sq, Point3};

type CellKey = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    /// `(cell, point index)` sorted by cell then index.
    entries: Vec<(CellKey, u32)>,
}

impl GridIndex {
    /// `cell` must be positive; choose it close to the typical query radius.
    pub fn build(points: &[Point3], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut entries: Vec<(CellKey, u32)> = points.iter().enumerate().map(|(i, p)| (key(p, cell), i as u32)).collect();
        entries.sort_unstable();
        Self { cell, entries }
    }

    fn cell_slice(&self, k: CellKey) -> &[(CellKey, u32)] {
        let lo = self.entries.partition_point(|e| e.0 < k);
        let hi = lo + self.entries[lo..].partition_point(|e| e.0 == k);
        &self.entries[lo..hi]
    }

    /// Calls `f` with the index of every point within `radius` of `q` (inclusive).
    pub fn for_each_within(&self, points: &[Point3], q: Point3, radius: f64, mut f: impl FnMut(usize)) {
        let r2 = radius * radius;
        let lo = key(&[q[0] - radius, q[1] - radius, q[2] - radius], self.cell);
        let hi = key(&[q[0] + radius, q[1] + radius, q[2] + radius], self.cell);
        for x in lo.0..=hi.0 {
            for y in lo.1..=hi.1 {
                for z in lo.2..=hi.2 {
                    for &(_, i) in self.cell_slice((x, y, z)) {
                        if distance_sq(points[i as usize], q) <= r2 {
                            f(i as usize);
                        }
                    }
                }
            }
        }
    }

    /// Whether any indexed point lies within `radius` of `q`.
    pub fn any_within(&self, points: &[Point3], q: Point3, radius: f64) -> bool {
        let r2 = radius * radius;
        let lo = key(&[q[0] - radius, q[1] - radius, q[2] - radius], self.cell);
        let hi = key(&[q[0] + radius, q[1] + radius, q[2] + radius], self.cell);
        for x in lo.0..=hi.0 {
            for y in lo.1..=hi.1 {
                for z in lo.2..=hi.2 {
                    if self.cell_slice((x, y, z)).iter().any(|&(_, i)| distance_sq(points[i as usize], q) <= r2) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

#[inline]
fn key(p: &Point3, cell: f64) -> CellKey {
    (libm::floor(p[0] / cell) as i64, libm::floor(p[1] / cell) as i64, libm::floor(p[2] / cell) as i64)
}

/// Keeps the first point falling in each `voxel`-sized cell, preserving order.
pub fn voxel_downsample(points: &[Point3], voxel: f64) -> Vec<Point3> {
    let mut keyed: Vec<(CellKey, u32)> = points.iter().enumerate().map(|(i, p)| (key(p, voxel), i as u32)).collect();
    keyed.sort_unstable();
    let mut keep: Vec<u32> = Vec::new();
    let mut last: Option<CellKey> = None;
    for (k, i) in keyed {
        if last != Some(k) {
            keep.push(i);
            last = Some(k);
        }
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| points[i as usize]).collect()
}
