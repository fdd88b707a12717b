//! Grounding annotation loaders, prediction files and evaluation reports.
//!
//! * Referit-style CSV (Sr3D/Nr3D): columns `scan_id`/`scene_id`,
//!   `utterance`/`query`, `target_id`, optional `tags` (`;`-separated),
//!   optional inline box `cx,cy,cz,dx,dy,dz` and the boolean language flags
//!   of Nr3D, which become tags named after their column.
//! * ScanRefer JSON: a list of `{scene_id, object_id, object_name, ann_id,
//!   description}` records, with optional `tags`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use groundmap_core::eval::{AccuracyTable, GroundingCase};
use groundmap_core::geometry::Aabb3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph_io::SceneGraphFile;

const FLAG_COLUMNS: [&str; 5] = ["mentions_target_class", "uses_object_lang", "uses_spatial_lang", "uses_color_lang", "uses_shape_lang"];

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub scene_id: String,
    pub query: String,
    pub target_id: Option<u64>,
    pub gt_box: Option<Aabb3>,
    pub tags: BTreeSet<String>,
}

fn split_tags(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split([';', '|']).map(str::trim).filter(|t| !t.is_empty()).map(str::to_owned)
}

fn truthy(s: &str) -> bool {
    matches!(s.trim().to_ascii_lowercase().as_str(), "1" | "true" | "yes")
}

fn parse_id(v: &str) -> Option<u64> {
    v.trim().parse::<u64>().ok().or_else(|| v.trim().parse::<f64>().ok().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64))
}

pub fn load_referit_csv(path: &Path) -> Result<Vec<Annotation>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_path(path).map_err(|e| Error::schema(path, "csv", e))?;
    let headers: Vec<String> =
        rdr.headers().map_err(|e| Error::schema(path, "header", e))?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let col = |names: &[&str]| names.iter().find_map(|n| headers.iter().position(|h| h == n));
    let scene = col(&["scan_id", "scene_id"]);
    let query = col(&["utterance", "query", "description"]).ok_or_else(|| Error::schema(path, "utterance", "missing column"))?;
    let target = col(&["target_id", "object_id"]);
    let tags = col(&["tags"]);
    let boxes: Option<Vec<usize>> = ["cx", "cy", "cz", "dx", "dy", "dz"].iter().map(|n| col(&[n])).collect();
    let flags: Vec<(usize, &str)> = FLAG_COLUMNS.iter().filter_map(|f| col(&[f]).map(|i| (i, *f))).collect();
    if target.is_none() && boxes.is_none() {
        return Err(Error::schema(path, "target_id", "need a target_id column or an inline box"));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::schema(path, format!("row {}", row + 1), e))?;
        let field = |name: &str| format!("row {}.{name}", row + 1);
        let target_id = match target {
            Some(i) => {
                Some(parse_id(&rec[i]).ok_or_else(|| Error::schema(path, field("target_id"), format!("{:?} is not an id", &rec[i])))?)
            }
            None => None,
        };
        let gt_box = match &boxes {
            Some(idx) => {
                let v: Vec<f64> = idx
                    .iter()
                    .map(|&i| rec[i].trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::schema(path, field("box"), e))?;
                Some(
                    Aabb3::from_center_extent([v[0], v[1], v[2]], [v[3], v[4], v[5]])
                        .ok_or_else(|| Error::schema(path, field("box"), "negative extent"))?,
                )
            }
            None => None,
        };
        let mut t: BTreeSet<String> = tags.map(|i| split_tags(&rec[i]).collect()).unwrap_or_default();
        for &(i, name) in &flags {
            if truthy(&rec[i]) {
                t.insert(name.to_owned());
            }
        }
        out.push(Annotation {
            scene_id: scene.map(|i| rec[i].trim().to_owned()).unwrap_or_default(),
            query: rec[query].to_owned(),
            target_id,
            gt_box,
            tags: t,
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct ScanReferRecord {
    scene_id: String,
    object_id: Value,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    utterance: Option<String>,
    #[serde(default)]
    tags: Vec<String>,
}

pub fn load_scanrefer_json(path: &Path) -> Result<Vec<Annotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let recs: Vec<ScanReferRecord> = serde_json::from_str(&text).map_err(|e| Error::schema(path, "records", e))?;
    recs.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let id = match &r.object_id {
                Value::Number(n) => n.as_u64(),
                Value::String(s) => parse_id(s),
                _ => None,
            }
            .ok_or_else(|| Error::schema(path, format!("[{i}].object_id"), "not an id"))?;
            let query = r.description.or(r.utterance).ok_or_else(|| Error::schema(path, format!("[{i}].description"), "missing"))?;
            Ok(Annotation { scene_id: r.scene_id, query, target_id: Some(id), gt_box: None, tags: r.tags.into_iter().collect() })
        })
        .collect()
}

/// Picks the loader from the file extension.
pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_referit_csv(path),
        Some("json") => load_scanrefer_json(path),
        _ => Err(Error::schema(path, "extension", "expected .csv or .json")),
    }
}

/// Ground-truth boxes, from a scene-graph file (one scene) or a JSON object
/// mapping scene ids to scene graphs.
#[derive(Debug, Clone, Default)]
pub struct GtBoxes {
    any_scene: BTreeMap<u64, Aabb3>,
    per_scene: BTreeMap<String, BTreeMap<u64, Aabb3>>,
}

fn boxes_of(g: &SceneGraphFile) -> BTreeMap<u64, Aabb3> {
    g.objects.iter().filter_map(|o| Some((o.id, Aabb3::from_center_extent(o.bbox_center, o.bbox_extent)?))).collect()
}

impl GtBoxes {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if let Ok(g) = serde_json::from_str::<SceneGraphFile>(&text) {
            return Ok(Self { any_scene: boxes_of(&g), per_scene: BTreeMap::new() });
        }
        let m: BTreeMap<String, SceneGraphFile> = serde_json::from_str(&text).map_err(|e| Error::schema(path, "gt boxes", e))?;
        Ok(Self { any_scene: BTreeMap::new(), per_scene: m.iter().map(|(k, g)| (k.clone(), boxes_of(g))).collect() })
    }

    pub fn from_graph(g: &SceneGraphFile) -> Self {
        Self { any_scene: boxes_of(g), per_scene: BTreeMap::new() }
    }

    pub fn get(&self, scene: &str, id: u64) -> Option<Aabb3> {
        self.per_scene.get(scene).and_then(|m| m.get(&id)).or_else(|| self.any_scene.get(&id)).copied()
    }
}

/// Cases with a resolvable box; annotations without one are reported by index.
pub fn to_cases(annotations: &[Annotation], gt: Option<&GtBoxes>) -> (Vec<GroundingCase>, Vec<usize>) {
    let mut cases = Vec::new();
    let mut missing = Vec::new();
    for (i, a) in annotations.iter().enumerate() {
        let b = a.gt_box.or_else(|| gt?.get(&a.scene_id, a.target_id?));
        match b {
            Some(gt_box) => cases.push(GroundingCase { query: a.query.clone(), gt_box, tags: a.tags.clone() }),
            None => missing.push(i),
        }
    }
    (cases, missing)
}

/// One line of a predictions JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(default)]
    pub query: String,
    pub final_object_id: Option<u64>,
    pub bbox_center: Option<[f64; 3]>,
    pub bbox_extent: Option<[f64; 3]>,
}

impl Prediction {
    pub fn aabb(&self) -> Option<Aabb3> {
        Aabb3::from_center_extent(self.bbox_center?, self.bbox_extent?)
    }
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::schema(path, format!("line {}", i + 1), e)))
        .collect()
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut s = String::new();
    for p in predictions {
        s.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// CSV rows `subset,count,acc@τ...,recall@1`.
pub fn accuracy_csv(table: &AccuracyTable, recall: Option<f64>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["subset".to_owned(), "count".to_owned()];
    header.extend(table.thresholds.iter().map(|t| format!("acc@{t}")));
    header.push("recall@1".into());
    w.write_record(&header).unwrap();
    let mut row = |name: &str, count: usize, accs: &[f64], r: Option<f64>| {
        let mut rec = vec![name.to_owned(), count.to_string()];
        rec.extend(accs.iter().map(|a| format!("{a:.4}")));
        rec.push(r.map(|r| format!("{r:.4}")).unwrap_or_default());
        w.write_record(&rec).unwrap();
    };
    row("overall", table.count, &table.overall, recall);
    for (tag, (accs, n)) in &table.per_tag {
        row(tag, *n, accs, None);
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Markdown report: overall accuracy and one row per tag.
pub fn accuracy_markdown(title: &str, table: &AccuracyTable, recall: Option<f64>) -> String {
    let mut s = format!("# {title}\n\n");
    let pct = |x: f64| format!("{:.1}", 100.0 * x);
    s.push_str("| Subset | Count |");
    for t in &table.thresholds {
        write!(s, " Acc@{t} |").unwrap();
    }
    s.push_str("\n|---|---:|");
    for _ in &table.thresholds {
        s.push_str("---:|");
    }
    s.push('\n');
    let mut row = |name: &str, n: usize, accs: &[f64]| {
        write!(s, "| {name} | {n} |").unwrap();
        for a in accs {
            write!(s, " {} |", pct(*a)).unwrap();
        }
        s.push('\n');
    };
    row("Overall", table.count, &table.overall);
    for (tag, (accs, n)) in &table.per_tag {
        row(tag, *n, accs);
    }
    if let Some(r) = recall {
        write!(s, "\nRecall@1: {}\n", pct(r)).unwrap();
    }
    s
}

/// Labeled points from CSV rows `x,y,z,label`; an empty label is unlabeled.
pub fn load_labeled_points(path: &Path) -> Result<(Vec<[f64; 3]>, Vec<Option<String>>)> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::schema(path, "csv", e))?;
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::schema(path, format!("row {}", row + 1), e))?;
        if rec.len() < 4 {
            return Err(Error::schema(path, format!("row {}", row + 1), "expected x,y,z,label"));
        }
        let mut p = [0.0; 3];
        for (a, v) in p.iter_mut().enumerate() {
            *v = rec[a].trim().parse().map_err(|e| Error::schema(path, format!("row {}.{}", row + 1, ["x", "y", "z"][a]), e))?;
        }
        pts.push(p);
        let l = rec[3].trim();
        labels.push((!l.is_empty()).then(|| l.to_owned()));
    }
    Ok((pts, labels))
}

pub fn load_class_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let classes: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_owned).collect();
    if classes.is_empty() {
        return Err(Error::schema(path, "classes", "no class names"));
    }
    let unique: BTreeSet<&String> = classes.iter().collect();
    if unique.len() != classes.len() {
        return Err(Error::schema(path, "classes", "duplicate class name"));
    }
    Ok(classes)
}
