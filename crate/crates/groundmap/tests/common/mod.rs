#![allow(dead_code)]

use std::path::{Path, PathBuf};

use groundmap::archive::{write_meta, write_record, ArchiveMeta, FrameRecord, RawDetection};
use groundmap::sequence::{write_depth_png, write_rgb_png, write_sequence, FrameEntry, IntrinsicsRecord, SequenceFile};
use groundmap_core::camera::DepthImage;
use groundmap_core::geometry::Point3;
use groundmap_core::mask::Mask;
use groundmap_core::scene_graph::SceneNode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// A fronto-parallel wall of rectangular objects seen by a jittering camera.
#[derive(Debug, Clone, Copy)]
pub struct MappingSpec {
    pub frames: u32,
    pub cols: usize,
    pub rows: usize,
    pub dim: usize,
    pub seed: u64,
    pub rgb: bool,
}

impl MappingSpec {
    pub fn objects(&self) -> usize {
        self.cols * self.rows
    }
}

pub const TILE: usize = 28;
pub const GAP: usize = 4;
pub const FOCAL: f64 = 160.0;

pub struct MappingFixture {
    pub sequence: PathBuf,
    pub detections: PathBuf,
}

/// Writes `sequence.json`, depth (and RGB) PNGs and a detection archive.
/// Object `k` is tile `k` of the grid at depth `1.5 + 0.1 (k mod 3)` meters.
pub fn write_mapping_fixture(dir: &Path, spec: MappingSpec) -> MappingFixture {
    let w = spec.cols * (TILE + GAP) + GAP;
    let h = spec.rows * (TILE + GAP) + GAP;
    let mut r = rng(spec.seed);
    let bases: Vec<Vec<f64>> = (0..spec.objects()).map(|_| unit(&mut r, spec.dim)).collect();
    let tile = |k: usize| {
        let (c, row) = (k % spec.cols, k / spec.cols);
        (GAP + c * (TILE + GAP), GAP + row * (TILE + GAP))
    };
    let mut depth = DepthImage::filled(w, h, 0.0);
    let mut masks = Vec::new();
    for k in 0..spec.objects() {
        let (x0, y0) = tile(k);
        let z = 1.5 + 0.1 * (k % 3) as f32;
        for v in y0..y0 + TILE {
            for u in x0..x0 + TILE {
                depth.set(u, v, z);
            }
        }
        masks.push(Mask::from_fn(w, h, |u, v| (x0..x0 + TILE).contains(&u) && (y0..y0 + TILE).contains(&v)));
    }
    let img = dir.join("images");
    std::fs::create_dir_all(&img).unwrap();
    let det_dir = dir.join("detections");
    std::fs::create_dir_all(&det_dir).unwrap();
    write_depth_png(&img.join("depth.png"), &depth).unwrap();
    if spec.rgb {
        let px: Vec<u8> = (0..w * h).flat_map(|i| [(i % 251) as u8, (i % 241) as u8, (i % 239) as u8]).collect();
        write_rgb_png(&img.join("rgb.png"), w, h, &px).unwrap();
    }
    let mut frames = Vec::new();
    for f in 0..spec.frames {
        let jitter = 0.004 * ((f as f64) * 0.7).sin();
        frames.push(FrameEntry {
            index: f + 1,
            pose: [1.0, 0.0, 0.0, jitter, 0.0, 1.0, 0.0, -jitter, 0.0, 0.0, 1.0, 0.0],
            depth_path: "images/depth.png".into(),
            rgb_path: spec.rgb.then(|| "images/rgb.png".into()),
        });
        let detections = (0..spec.objects())
            .map(|k| {
                let noisy: Vec<f64> = bases[k].iter().map(|x| x + r.random_range(-0.02..0.02)).collect();
                RawDetection { confidence: 0.9, mask: masks[k].clone(), descriptor: noisy.iter().map(|&x| x as f32).collect() }
            })
            .collect();
        write_record(&det_dir, &FrameRecord { frame_index: f + 1, detections }).unwrap();
    }
    let meta = ArchiveMeta { resolution: [w, h], dim: spec.dim, stride: 14, frame_count: spec.frames as usize };
    write_meta(&det_dir, &meta).unwrap();
    let intrinsics = IntrinsicsRecord { fx: FOCAL, fy: FOCAL, cx: w as f64 / 2.0, cy: h as f64 / 2.0, width: w, height: h };
    let sequence = dir.join("sequence.json");
    write_sequence(&sequence, &SequenceFile { intrinsics, frames }).unwrap();
    MappingFixture { sequence, detections: det_dir }
}

// ---------------------------------------------------------------------------
// Grounding scene

pub fn node(id: u64, caption: &str, center: Point3, extent: Point3) -> SceneNode {
    SceneNode { id, caption: caption.into(), center, extent, visual_embedding: None, valid: true }
}

/// Ten objects: three chairs and two lamps need relations to disambiguate.
pub fn ten_object_scene() -> Vec<SceneNode> {
    vec![
        node(0, "a wooden table", [0.0, 0.0, 0.4], [1.2, 0.8, 0.8]),
        node(1, "a red chair", [-0.9, 0.7, 0.45], [0.5, 0.5, 0.9]),
        node(2, "a blue chair", [0.9, 0.6, 0.45], [0.5, 0.5, 0.9]),
        node(3, "a green chair", [0.1, -1.1, 0.45], [0.5, 0.5, 0.9]),
        node(4, "a white lamp", [2.6, 2.1, 1.6], [0.3, 0.3, 0.6]),
        node(5, "a black lamp", [-2.4, 1.9, 0.3], [0.3, 0.3, 0.6]),
        node(6, "a leather sofa", [0.2, 3.1, 0.4], [2.0, 0.9, 0.8]),
        node(7, "a small bed", [-3.0, -2.2, 0.4], [1.6, 2.0, 0.6]),
        node(8, "a glass window", [3.1, -2.6, 1.5], [1.0, 0.1, 1.2]),
        node(9, "a wooden door", [-3.3, 3.3, 1.0], [0.1, 0.9, 2.0]),
    ]
}

pub fn category(caption: &str) -> &str {
    caption.rsplit(' ').next().unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingQuery {
    pub text: String,
    pub answer: u64,
    pub spatial: bool,
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Signed margins for (left, front, above), each positive when the named
/// relation holds: a camera at `room` looks at the anchor with +z up.
pub fn relation_margins(t: Point3, a: Point3, room: Point3) -> [f64; 3] {
    let f = sub(a, room);
    let n = dot(f, f).sqrt();
    let f = [f[0] / n, f[1] / n, f[2] / n];
    let r = [f[1], -f[0], 0.0];
    let rn = dot(r, r).sqrt();
    let r = [r[0] / rn, r[1] / rn, 0.0];
    let d = sub(t, a);
    [-dot(d, r), -dot(d, f), d[2]]
}

/// Box-enclosing center, computed directly from the node boxes.
pub fn scene_center(nodes: &[SceneNode]) -> Point3 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for n in nodes {
        for i in 0..3 {
            lo[i] = lo[i].min(n.center[i] - n.extent[i] / 2.0);
            hi[i] = hi[i].max(n.center[i] + n.extent[i] / 2.0);
        }
    }
    [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0]
}

const MARGIN: f64 = 0.05;

/// Template queries whose answer is unique by a clear margin, up to `limit`.
pub fn generate_queries(nodes: &[SceneNode], limit: usize) -> Vec<GroundingQuery> {
    let room = scene_center(nodes);
    let by_cat = |c: &str| nodes.iter().filter(move |n| category(&n.caption) == c).collect::<Vec<_>>();
    let mut cats: Vec<&str> = nodes.iter().map(|n| category(&n.caption)).collect();
    cats.dedup();
    let unique: Vec<&str> = cats.iter().copied().filter(|c| by_cat(c).len() == 1).collect();
    let multi: Vec<&str> = cats.iter().copied().filter(|c| by_cat(c).len() > 1).collect();

    let mut out = Vec::new();
    for c in &unique {
        out.push(GroundingQuery { text: format!("the {c}"), answer: by_cat(c)[0].id, spatial: false });
    }
    let relations: [(&str, &str, usize, f64); 6] = [
        ("left of", "left", 0, 1.0),
        ("right of", "right", 0, -1.0),
        ("in front of", "front", 1, 1.0),
        ("behind", "behind", 1, -1.0),
        ("above", "above", 2, 1.0),
        ("below", "below", 2, -1.0),
    ];
    let mut spatial = Vec::new();
    for t in &multi {
        for a in &unique {
            let anchor = by_cat(a)[0];
            for (phrase, _, axis, sign) in relations {
                let m: Vec<(u64, f64)> =
                    by_cat(t).iter().map(|n| (n.id, sign * relation_margins(n.center, anchor.center, room)[axis])).collect();
                let hits: Vec<&(u64, f64)> = m.iter().filter(|(_, v)| *v > MARGIN).collect();
                let clear = m.iter().all(|(_, v)| v.abs() > MARGIN);
                if hits.len() == 1 && clear {
                    spatial.push(GroundingQuery { text: format!("the {t} {phrase} the {a}"), answer: hits[0].0, spatial: true });
                }
            }
            for (word, nearest) in [("closest to", true), ("farthest from", false)] {
                let mut d: Vec<(f64, u64)> =
                    by_cat(t).iter().map(|n| (dot(sub(n.center, anchor.center), sub(n.center, anchor.center)).sqrt(), n.id)).collect();
                d.sort_by(|x, y| x.0.total_cmp(&y.0));
                if !nearest {
                    d.reverse();
                }
                if (d[0].0 - d[1].0).abs() > MARGIN {
                    spatial.push(GroundingQuery { text: format!("the {t} {word} the {a}"), answer: d[0].1, spatial: true });
                }
            }
        }
    }
    out.extend(spatial);
    out.truncate(limit);
    out
}
