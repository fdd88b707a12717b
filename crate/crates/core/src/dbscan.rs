//! Density-based clustering used to strip noise from lifted proposals.

use alloc::vec::Vec;

use crate::geometry::Point3;
use crate::spatial::GridIndex;
use crate::{Error, Result};

/// Cluster label per point; `None` marks noise.
///
/// A point is a core point when at least `min_pts` points (itself included)
/// lie within `eps`. Clusters are numbered in order of their lowest-index core
/// point, and a border point reachable from several clusters joins the
/// lowest-numbered one, so the labeling does not depend on neighbor order.
pub fn dbscan_labels(points: &[Point3], eps: f64, min_pts: usize) -> Vec<Option<u32>> {
    const UNSEEN: u32 = u32::MAX;
    const NOISE: u32 = u32::MAX - 1;

    let index = GridIndex::build(points, eps.max(1e-9));
    let mut labels = alloc::vec![UNSEEN; points.len()];
    let mut neighbors = Vec::new();
    let mut queue = Vec::new();
    let mut next_cluster = 0u32;

    let region = |i: usize, out: &mut Vec<usize>| {
        out.clear();
        index.for_each_within(points, points[i], eps, |j| out.push(j));
    };

    for i in 0..points.len() {
        if labels[i] != UNSEEN {
            continue;
        }
        region(i, &mut neighbors);
        if neighbors.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = cluster;
        queue.clear();
        queue.extend_from_slice(&neighbors);
        while let Some(q) = queue.pop() {
            match labels[q] {
                NOISE => labels[q] = cluster,
                UNSEEN => {
                    labels[q] = cluster;
                    region(q, &mut neighbors);
                    if neighbors.len() >= min_pts {
                        queue.extend(neighbors.iter().copied().filter(|&n| labels[n] == UNSEEN || labels[n] == NOISE));
                    }
                }
                _ => {}
            }
        }
    }

    labels.into_iter().map(|l| (l != NOISE && l != UNSEEN).then_some(l)).collect()
}

/// Keeps the largest cluster (ties go to the lowest-numbered one), in input order.
pub fn dbscan_denoise(points: &[Point3], eps: f64, min_pts: usize) -> Result<Vec<Point3>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("cannot denoise an empty point set"));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig("dbscan eps must be positive"));
    }
    let labels = dbscan_labels(points, eps, min_pts);
    let clusters = labels.iter().flatten().map(|l| *l as usize + 1).max().unwrap_or(0);
    if clusters == 0 {
        return Err(Error::AllNoise);
    }
    let mut sizes = alloc::vec![0usize; clusters];
    for l in labels.iter().flatten() {
        sizes[*l as usize] += 1;
    }
    let mut best = 0;
    for (c, &s) in sizes.iter().enumerate() {
        if s > sizes[best] {
            best = c;
        }
    }
    Ok(points.iter().zip(&labels).filter(|(_, l)| **l == Some(best as u32)).map(|(p, _)| *p).collect())
}
