//! Open-vocabulary object labeling by embedding similarity.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::descriptor;
use crate::object_map::ObjectMap;
use crate::scene_graph::SceneNode;

/// Embeds free text into the same space as object visual embeddings.
pub trait TextEmbedder {
    type Error: core::fmt::Debug;

    fn embed(&self, text: &str) -> Result<Vec<f64>, Self::Error>;
}

/// Prompt wrapped around every class name before embedding.
pub fn class_prompt(class_name: &str) -> String {
    format!("an image of {class_name}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedObject {
    pub object_id: u64,
    /// Index into the queried class list.
    pub class_index: usize,
    pub label: String,
    /// Cosine similarity in `[-1, 1]`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Classification {
    pub classified: Vec<ClassifiedObject>,
    /// Nodes without a usable visual embedding.
    pub skipped: Vec<u64>,
}

/// Labels every node with its most similar class prompt; ties go to the
/// first class in input order.
pub fn classify_objects<E: TextEmbedder>(nodes: &[SceneNode], class_names: &[String], embedder: &E) -> Result<Classification, E::Error> {
    let mut texts = Vec::with_capacity(class_names.len());
    for name in class_names {
        texts.push(embedder.embed(&class_prompt(name))?);
    }
    Ok(classify_with_text_embeddings(nodes, class_names, &texts))
}

/// [`classify_objects`] with precomputed class text embeddings.
pub fn classify_with_text_embeddings(nodes: &[SceneNode], class_names: &[String], texts: &[Vec<f64>]) -> Classification {
    let mut out = Classification::default();
    for node in nodes {
        let Some(v) = node.visual_embedding.as_deref().filter(|v| !v.is_empty()) else {
            out.skipped.push(node.id);
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for (c, t) in texts.iter().enumerate() {
            if t.len() != v.len() {
                continue;
            }
            let s = descriptor::cosine_similarity(v, t);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        match best {
            Some((c, score)) => out.classified.push(ClassifiedObject {
                object_id: node.id,
                class_index: c,
                label: class_names[c].clone(),
                score: score.clamp(-1.0, 1.0),
            }),
            None => out.skipped.push(node.id),
        }
    }
    out
}

pub const UNKNOWN_LABEL: &str = "unknown";

/// Per-point labels in map object order, points of unclassified objects
/// labeled [`UNKNOWN_LABEL`].
pub fn label_point_cloud<'a>(map: &ObjectMap, classifications: &'a [ClassifiedObject]) -> Vec<&'a str> {
    let mut labels = Vec::with_capacity(map.total_points());
    for o in map.objects() {
        let label = classifications.iter().find(|c| c.object_id == o.id()).map_or(UNKNOWN_LABEL, |c| c.label.as_str());
        labels.extend(core::iter::repeat_n(label, o.points().len()));
    }
    labels
}
