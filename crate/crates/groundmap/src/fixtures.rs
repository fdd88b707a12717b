//! Table-backed describer and embedders, fed by files the extractor emits.
//!
//! Caption fixture: `{"<object id>": "caption", ...}`; an empty caption
//! marks a failed crop. Embedding tables map keys to vectors: object ids for
//! visual embeddings, prompt text for text embeddings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use groundmap_core::scene_graph::{DescribeRequest, Describer, DescriberUnavailable, VisualEmbedder};
use groundmap_core::semantic_query::TextEmbedder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_io::EmbeddingTable;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaptionTable(pub BTreeMap<String, String>);

impl CaptionTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Self = serde_json::from_str(&text).map_err(|e| Error::schema(path, "captions", e))?;
        if let Some(k) = t.0.keys().find(|k| k.parse::<u64>().is_err()) {
            return Err(Error::schema(path, k.as_str(), "keys must be object ids"));
        }
        Ok(t)
    }
}

impl Describer for CaptionTable {
    fn describe(&self, request: &DescribeRequest<'_>) -> Result<String, DescriberUnavailable> {
        match self.0.get(&request.object_id.to_string()) {
            Some(c) if !c.trim().is_empty() => Ok(c.clone()),
            Some(_) => Err(DescriberUnavailable(format!("caption of object {} is flagged empty", request.object_id))),
            None => Err(DescriberUnavailable(format!("no caption for object {}", request.object_id))),
        }
    }
}

impl VisualEmbedder for EmbeddingTable {
    fn embed_crop(&self, request: &DescribeRequest<'_>) -> Result<Vec<f64>, DescriberUnavailable> {
        self.get(&request.object_id.to_string())
            .map(<[f64]>::to_vec)
            .ok_or_else(|| DescriberUnavailable(format!("no embedding for object {}", request.object_id)))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("no embedding for {0:?}")]
pub struct MissingEmbedding(pub String);

impl TextEmbedder for EmbeddingTable {
    type Error = MissingEmbedding;

    fn embed(&self, text: &str) -> Result<Vec<f64>, MissingEmbedding> {
        self.get(text).map(<[f64]>::to_vec).ok_or_else(|| MissingEmbedding(text.to_owned()))
    }
}
