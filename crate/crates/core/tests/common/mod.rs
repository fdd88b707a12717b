#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use groundmap_core::camera::{CameraIntrinsics, DepthImage, Frame, Pose};
use groundmap_core::geometry::{Mat3, Point3};
use groundmap_core::ingest::Detection;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rotation matrix from a random unit quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let mut q = [0.0f64; 4];
    loop {
        for x in q.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 {
            q.iter_mut().for_each(|x| *x /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn random_pose(rng: &mut impl Rng) -> Pose {
    let t = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    Pose::new(random_rotation(rng), t).unwrap()
}

pub fn random_point(rng: &mut impl Rng, lo: f64, hi: f64) -> Point3 {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_frame(rng: &mut impl Rng, w: usize, h: usize, zero_fraction: f64) -> Frame {
    let k = CameraIntrinsics::new(
        rng.random_range(50.0..600.0),
        rng.random_range(50.0..600.0),
        rng.random_range(0.0..w as f64 - 1.0),
        rng.random_range(0.0..h as f64 - 1.0),
        w,
        h,
    )
    .unwrap();
    let depth: Vec<f32> = (0..w * h).map(|_| if rng.random_bool(zero_fraction) { 0.0 } else { rng.random_range(0.2..8.0) }).collect();
    Frame::new(0, DepthImage::new(w, h, depth).unwrap(), random_pose(rng), k).unwrap()
}

pub fn det(desc: Vec<f64>, points: Vec<Point3>) -> Detection {
    Detection::new(1.0, desc, points).unwrap()
}

/// Regular n³ grid of points with spacing `step` starting at `origin`.
pub fn grid_points(origin: Point3, n: usize, step: f64) -> Vec<Point3> {
    let mut pts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                pts.push([origin[0] + i as f64 * step, origin[1] + j as f64 * step, origin[2] + k as f64 * step]);
            }
        }
    }
    pts
}

/// Textbook DBSCAN with O(N²) region queries.
pub fn reference_dbscan(pts: &[Point3], eps: f64, min_pts: usize) -> Vec<Option<u32>> {
    const UNDEF: i64 = -2;
    const NOISE: i64 = -1;
    let n = pts.len();
    let region = |p: usize| -> Vec<usize> {
        (0..n)
            .filter(|&q| {
                let d: f64 = (0..3).map(|a| (pts[p][a] - pts[q][a]).powi(2)).sum();
                d <= eps * eps
            })
            .collect()
    };
    let mut label = vec![UNDEF; n];
    let mut c = 0i64;
    for p in 0..n {
        if label[p] != UNDEF {
            continue;
        }
        let nb = region(p);
        if nb.len() < min_pts {
            label[p] = NOISE;
            continue;
        }
        label[p] = c;
        let mut seeds: VecDeque<usize> = nb.into_iter().filter(|&q| q != p).collect();
        while let Some(q) = seeds.pop_front() {
            if label[q] == NOISE {
                label[q] = c;
            }
            if label[q] != UNDEF {
                continue;
            }
            label[q] = c;
            let nq = region(q);
            if nq.len() >= min_pts {
                seeds.extend(nq);
            }
        }
        c += 1;
    }
    label.into_iter().map(|l| (l >= 0).then_some(l as u32)).collect()
}

pub fn clustered_cloud(r: &mut impl Rng, n: usize) -> Vec<Point3> {
    let centers: Vec<Point3> = (0..3).map(|_| random_point(r, -1.0, 1.0)).collect();
    (0..n)
        .map(|_| {
            if r.random_bool(0.15) {
                random_point(r, -1.5, 1.5)
            } else {
                let c = centers[r.random_range(0..3)];
                let s = 0.08;
                [c[0] + r.random_range(-s..s), c[1] + r.random_range(-s..s), c[2] + r.random_range(-s..s)]
            }
        })
        .collect()
}

pub fn five_frame_sequence() -> Vec<(u32, Vec<groundmap_core::ingest::Detection>)> {
    let e = |v: [f64; 3]| v.to_vec();
    vec![
        (
            1,
            vec![
                det(e([1.0, 0.0, 0.0]), vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]]),
                det(e([0.0, 1.0, 0.0]), vec![[2.0, 0.0, 0.0], [2.1, 0.0, 0.0], [2.0, 0.1, 0.0]]),
            ],
        ),
        (
            2,
            vec![
                det(e([0.8, 0.6, 0.0]), vec![[0.05, 0.05, 0.0], [0.02, 0.0, 0.05]]),
                det(e([0.0, 0.0, 1.0]), vec![[0.0, 2.0, 0.0], [0.1, 2.0, 0.0], [0.0, 2.1, 0.0], [0.0, 2.0, 0.1], [0.05, 2.05, 0.05]]),
            ],
        ),
        (
            3,
            vec![
                det(e([0.6, 0.8, 0.0]), vec![[2.05, 0.02, 0.0], [2.02, 0.05, 0.01], [2.08, 0.01, 0.0]]),
                det(e([1.0, 0.0, 0.0]), vec![[0.05, 2.0, 0.0]]),
            ],
        ),
        (4, vec![det(e([0.0, 0.6, 0.8]), vec![[0.02, 2.02, 0.02], [0.08, 2.04, 0.0]]), det(e([1.0, 0.0, 0.0]), vec![[0.08, 0.02, 0.02]])]),
        (5, vec![det(e([0.0, 1.0, 0.0]), vec![[2.0, 0.05, 0.05], [2.1, 0.1, 0.0]])]),
    ]
}

/// Hand-simulated outcome of [`five_frame_sequence`] after postprocessing
/// with `post_min_points = 2`, `post_min_detections = 1`:
/// (id, points, detections, descriptor, frames).
pub const FIVE_FRAME_EXPECTED: [(u64, usize, u32, [f64; 3], &[u32]); 3] = [
    (0, 7, 3, [0.992_821_295_200_987_9, 0.11960717284273836, 0.0], &[1, 2, 4]),
    (1, 8, 3, [0.11960717284273836, 0.992_821_295_200_987_9, 0.0], &[1, 3, 5]),
    (2, 7, 2, [0.0, 0.46788772041903265, 0.883_787_916_347_061_9], &[2, 4]),
];

/// Rows: ground truth, columns: prediction.
pub const SEMSEG_CONFUSION: [[usize; 3]; 3] = [[5, 2, 1], [1, 6, 3], [0, 2, 10]];

pub fn labels_from_confusion(confusion: &[[usize; 3]; 3]) -> (Vec<Option<u32>>, Vec<u32>) {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (g, row) in confusion.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                gt.push(g as u32);
                pred.push(Some(p as u32));
            }
        }
    }
    (pred, gt)
}

/// (mAcc, mIoU, f-mIoU) straight from a confusion matrix.
pub fn confusion_oracle(confusion: &[[usize; 3]; 3]) -> (f64, f64, f64) {
    let total: usize = confusion.iter().flatten().sum();
    let (mut acc, mut iou, mut fw) = (0.0, 0.0, 0.0);
    for (c, gt_row) in confusion.iter().enumerate() {
        let row: usize = gt_row.iter().sum();
        let col: usize = confusion.iter().map(|r| r[c]).sum();
        let tp = gt_row[c] as f64;
        let i = tp / ((row + col) as f64 - tp);
        acc += tp / row as f64;
        iou += i;
        fw += row as f64 / total as f64 * i;
    }
    (acc / 3.0, iou / 3.0, fw)
}

/// Box IoU from per-axis interval overlaps.
pub fn iou_oracle(a: (Point3, Point3), b: (Point3, Point3)) -> f64 {
    let vol = |lo: Point3, hi: Point3| (0..3).map(|i| hi[i] - lo[i]).product::<f64>();
    let inter: f64 = (0..3).map(|i| (a.1[i].min(b.1[i]) - a.0[i].max(b.0[i])).max(0.0)).product();
    let union = vol(a.0, a.1) + vol(b.0, b.1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn look_at(eye: Point3, target: Point3) -> Pose {
    let sub = |a: Point3, b: Point3| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross = |a: Point3, b: Point3| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let unit = |a: Point3| {
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        [a[0] / n, a[1] / n, a[2] / n]
    };
    let z = unit(sub(target, eye));
    let x = unit(cross(z, [0.0, 0.0, 1.0]));
    let y = cross(z, x);
    Pose::new([[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]], eye).unwrap()
}

/// Per-point pinhole projection with disk splats.
pub fn splat_oracle(points: &[Point3], pose: &Pose, k: &CameraIntrinsics, radius: i64) -> BTreeSet<(i64, i64)> {
    let mut px = BTreeSet::new();
    let r = pose.rotation;
    let t = pose.translation;
    for p in points {
        let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
        let x = r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2];
        let y = r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2];
        let z = r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2];
        if z <= 0.0 {
            continue;
        }
        let u = (k.fx * x / z + k.cx).round() as i64;
        let v = (k.fy * y / z + k.cy).round() as i64;
        if u < 0 || v < 0 || u >= k.width as i64 || v >= k.height as i64 {
            continue;
        }
        for dv in -radius..=radius {
            for du in -radius..=radius {
                let (a, b) = (u + du, v + dv);
                if du * du + dv * dv <= radius * radius && a >= 0 && b >= 0 && a < k.width as i64 && b < k.height as i64 {
                    px.insert((a, b));
                }
            }
        }
    }
    px
}
