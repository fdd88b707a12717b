//! Scene-graph JSON, the `views.json` sidecar and embedding sidecars.
//!
//! Scene-graph schema:
//!
//! ```json
//! {"objects": [{"id": 0, "caption": "a chair", "bbox_center": [x, y, z], "bbox_extent": [dx, dy, dz]}]}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use groundmap_core::mask::PixelRect;
use groundmap_core::scene_graph::SceneNode;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphObject {
    pub id: u64,
    pub caption: String,
    pub bbox_center: [f64; 3],
    pub bbox_extent: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGraphFile {
    pub objects: Vec<GraphObject>,
}

impl SceneGraphFile {
    pub fn from_nodes(nodes: &[SceneNode]) -> Self {
        let objects = nodes
            .iter()
            .map(|n| GraphObject { id: n.id, caption: n.caption.clone(), bbox_center: n.center, bbox_extent: n.extent })
            .collect();
        Self { objects }
    }

    /// Nodes without visual embeddings; an empty caption marks a node invalid.
    pub fn to_nodes(&self) -> Vec<SceneNode> {
        self.objects
            .iter()
            .map(|o| SceneNode {
                id: o.id,
                caption: o.caption.clone(),
                center: o.bbox_center,
                extent: o.bbox_extent,
                visual_embedding: None,
                valid: !o.caption.trim().is_empty(),
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: Self = serde_json::from_str(&text).map_err(|e| Error::schema(path, "objects", e))?;
        let mut seen = std::collections::BTreeSet::new();
        for (i, o) in g.objects.iter().enumerate() {
            if !seen.insert(o.id) {
                return Err(Error::schema(path, format!("objects[{i}].id"), format!("duplicate id {}", o.id)));
            }
            if o.bbox_extent.iter().any(|e| !(*e >= 0.0)) || o.bbox_center.iter().any(|c| !c.is_finite()) {
                return Err(Error::schema(path, format!("objects[{i}].bbox_extent"), "box must be finite with non-negative extent"));
            }
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("graph serializes")).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub id: u64,
    pub frame_index: u32,
    /// Inclusive pixel box `[x0, y0, x1, y1]`.
    pub crop_box: [usize; 4],
}

impl ViewRecord {
    pub fn new(id: u64, frame_index: u32, r: PixelRect) -> Self {
        Self { id, frame_index, crop_box: [r.x0, r.y0, r.x1, r.y1] }
    }
}

pub fn save_views(path: &Path, views: &[ViewRecord]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(views).expect("views serialize")).map_err(|e| Error::io(path, e))
}

pub fn load_views(path: &Path) -> Result<Vec<ViewRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, "views", e))
}

/// A JSON object mapping keys to vectors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingTable(pub BTreeMap<String, Vec<f64>>);

impl EmbeddingTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Self = serde_json::from_str(&text).map_err(|e| Error::schema(path, "embeddings", e))?;
        let mut dim = None;
        for (k, v) in &t.0 {
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) || *dim.get_or_insert(v.len()) != v.len() {
                return Err(Error::schema(path, k.as_str(), "vectors must be finite, non-empty and of one length"));
            }
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self).expect("table serializes")).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.0.get(key).map(Vec::as_slice)
    }
}

/// Attaches `table[id]` as the visual embedding of every node that has one.
pub fn attach_embeddings(nodes: &mut [SceneNode], table: &EmbeddingTable) {
    for n in nodes {
        n.visual_embedding = table.get(&n.id.to_string()).map(<[f64]>::to_vec);
    }
}
