//! Scene graph nodes plus metric and view-dependent semantic relations.
//!
//! Semantic relations are judged from a virtual camera placed at the room
//! center and aimed at the anchor. With `f` the unit direction from the
//! camera to the anchor and `up` the world up axis:
//!
//! * `right = normalize(f × up)`; the target is right of the anchor when
//!   `(target − anchor)·right > 0`.
//! * the target is in front when it is closer to the camera along `f` than
//!   the anchor is.
//! * above/below compares heights along `up` and ignores the camera.
//!
//! Comparisons use a margin of [`TIE_EPS`]; exact ties resolve to
//! `(right, behind, below)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::geometry::{self, Aabb3, Point3};
use crate::mask::PixelRect;
use crate::object_map::MapObject;
use crate::view_select::BestView;

pub const TIE_EPS: f64 = 1e-6;
pub const WORLD_UP: Point3 = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneNode {
    pub id: u64,
    pub caption: String,
    /// Box center, meters.
    pub center: Point3,
    /// Box size, meters.
    pub extent: Point3,
    pub visual_embedding: Option<Vec<f64>>,
    /// False when the describer failed and the caption is empty.
    pub valid: bool,
}

impl SceneNode {
    pub fn aabb(&self) -> Aabb3 {
        Aabb3::from_center_extent(self.center, self.extent).unwrap_or(Aabb3 { min: self.center, max: self.center })
    }
}

/// Interleaved RGB8 pixels of a crop.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbCrop {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// What a describer gets to see of an object.
#[derive(Debug, Clone, Copy)]
pub struct DescribeRequest<'a> {
    pub object_id: u64,
    pub frame_index: u32,
    pub crop_box: PixelRect,
    pub crop: Option<&'a RgbCrop>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriberUnavailable(pub String);

impl fmt::Display for DescriberUnavailable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "describer unavailable: {}", self.0)
    }
}

impl core::error::Error for DescriberUnavailable {}

/// Produces a caption for an object crop.
pub trait Describer {
    fn describe(&self, request: &DescribeRequest<'_>) -> Result<String, DescriberUnavailable>;
}

/// Encodes an object crop into a text-aligned embedding.
pub trait VisualEmbedder {
    fn embed_crop(&self, request: &DescribeRequest<'_>) -> Result<Vec<f64>, DescriberUnavailable>;
}

/// Builds a graph node from an object's box and best view.
pub fn node_from_object(
    object: &MapObject,
    view: &BestView,
    crop: Option<&RgbCrop>,
    describer: &dyn Describer,
    embedder: Option<&dyn VisualEmbedder>,
) -> SceneNode {
    let request = DescribeRequest { object_id: object.id(), frame_index: view.frame_index, crop_box: view.crop_box, crop };
    let (caption, valid) = match describer.describe(&request) {
        Ok(c) if !c.trim().is_empty() => (c, true),
        _ => (String::new(), false),
    };
    let visual_embedding = embedder.and_then(|e| e.embed_crop(&request).ok()).and_then(|v| crate::descriptor::normalized(v).ok());
    let aabb = object.aabb();
    SceneNode { id: object.id(), caption, center: aabb.center(), extent: aabb.extent(), visual_embedding, valid }
}

/// Euclidean distance between two box centers.
pub fn metric_relation(a: Point3, b: Point3) -> f64 {
    geometry::distance(a, b)
}

/// Center of the box enclosing every node box. When `camera_height` is
/// given it replaces the up-axis coordinate.
pub fn room_center(nodes: &[SceneNode], camera_height: Option<f64>) -> Option<Point3> {
    let mut it = nodes.iter().map(SceneNode::aabb);
    let first = it.next()?;
    let mut c = it.fold(first, |acc, b| acc.union(&b)).center();
    if let Some(h) = camera_height {
        c[2] = h;
    }
    Some(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Horizontal {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Depth {
    Front,
    Behind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Vertical {
    Above,
    Below,
}

impl Horizontal {
    pub fn as_str(self) -> &'static str {
        match self {
            Horizontal::Left => "left",
            Horizontal::Right => "right",
        }
    }
}

impl Depth {
    pub fn as_str(self) -> &'static str {
        match self {
            Depth::Front => "front",
            Depth::Behind => "behind",
        }
    }
}

impl Vertical {
    pub fn as_str(self) -> &'static str {
        match self {
            Vertical::Above => "above",
            Vertical::Below => "below",
        }
    }
}

/// One relation from each of the three pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SemanticTriple {
    pub lr: Horizontal,
    pub fb: Depth,
    pub ab: Vertical,
}

impl fmt::Display for SemanticTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {}", self.lr.as_str(), self.fb.as_str(), self.ab.as_str())
    }
}

/// Which degenerate configuration forced a fallback axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraFallback {
    /// The anchor sits at the camera position; forward defaults to `up × x`.
    AnchorAtCamera,
    /// Forward is (anti)parallel to up; world +x is used as up for `right`.
    DegenerateCamera,
}

/// Virtual observer used for view-dependent relations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualCamera {
    pub position: Point3,
    pub forward: Point3,
    pub right: Point3,
    pub world_up: Point3,
}

impl VirtualCamera {
    /// Camera at `position` looking at `anchor`.
    pub fn look_at(position: Point3, anchor: Point3, world_up: Point3) -> (Self, Option<CameraFallback>) {
        let world_up = geometry::normalize(world_up).unwrap_or(WORLD_UP);
        let mut fallback = None;
        let forward = match geometry::normalize(geometry::sub(anchor, position)) {
            Some(f) => f,
            None => {
                fallback = Some(CameraFallback::AnchorAtCamera);
                geometry::normalize(geometry::cross(world_up, [1.0, 0.0, 0.0]))
                    .or_else(|| geometry::normalize(geometry::cross(world_up, [0.0, 1.0, 0.0])))
                    .expect("up is a unit vector")
            }
        };
        let mut up = world_up;
        if geometry::dot(forward, up).abs() > 0.999 {
            fallback = Some(CameraFallback::DegenerateCamera);
            up = [1.0, 0.0, 0.0];
            if geometry::dot(forward, up).abs() > 0.999 {
                up = [0.0, 1.0, 0.0];
            }
        }
        let right = geometry::normalize(geometry::cross(forward, up)).expect("forward and up are not parallel");
        (Self { position, forward, right, world_up }, fallback)
    }

    pub fn classify(&self, target: Point3, anchor: Point3) -> SemanticTriple {
        let lateral = geometry::dot(geometry::sub(target, anchor), self.right);
        let lr = if lateral < -TIE_EPS { Horizontal::Left } else { Horizontal::Right };
        let depth_t = geometry::dot(geometry::sub(target, self.position), self.forward);
        let depth_a = geometry::dot(geometry::sub(anchor, self.position), self.forward);
        let fb = if depth_t < depth_a - TIE_EPS { Depth::Front } else { Depth::Behind };
        let rise = geometry::dot(geometry::sub(target, anchor), self.world_up);
        let ab = if rise > TIE_EPS { Vertical::Above } else { Vertical::Below };
        SemanticTriple { lr, fb, ab }
    }
}

/// Relation of `target` to `anchor` seen from a camera at `room_center`
/// aimed at the anchor, with world +z up.
pub fn semantic_relation(target: Point3, anchor: Point3, room_center: Point3) -> SemanticTriple {
    VirtualCamera::look_at(room_center, anchor, WORLD_UP).0.classify(target, anchor)
}

/// Metric plus semantic relation between a target and an anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub target_id: u64,
    pub anchor_id: u64,
    pub distance: f64,
    pub semantic: SemanticTriple,
}

impl Edge {
    pub fn between(target: &SceneNode, anchor: &SceneNode, room_center: Point3) -> Self {
        Self {
            target_id: target.id,
            anchor_id: anchor.id,
            distance: metric_relation(target.center, anchor.center),
            semantic: semantic_relation(target.center, anchor.center, room_center),
        }
    }
}

/// Which relation kinds a rendered sentence carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeKinds {
    pub metric: bool,
    pub semantic: bool,
}

impl EdgeKinds {
    pub const NONE: EdgeKinds = EdgeKinds { metric: false, semantic: false };
    pub const ALL: EdgeKinds = EdgeKinds { metric: true, semantic: true };
}

/// The full relation sentence with both relation kinds.
pub fn relation_sentence(target: &SceneNode, anchor: &SceneNode, edge: &Edge) -> String {
    render_relation(target, anchor, edge, EdgeKinds::ALL).expect("all kinds enabled")
}

/// Renders an edge as text. Captions are JSON-string escaped so the sentence
/// can be spliced into a JSON string literal unchanged. Returns `None` when
/// both kinds are disabled.
pub fn render_relation(target: &SceneNode, anchor: &SceneNode, edge: &Edge, kinds: EdgeKinds) -> Option<String> {
    let (ct, ca) = (json_escape(&target.caption), json_escape(&anchor.caption));
    let s = match (kinds.metric, kinds.semantic) {
        (true, true) => format!(
            "The {ct} with id {} is {} and at distance {:.2} m from the {ca} with id {}",
            target.id, edge.semantic, edge.distance, anchor.id
        ),
        (true, false) => {
            format!("The {ct} with id {} is at distance {:.2} m from the {ca} with id {}", target.id, edge.distance, anchor.id)
        }
        (false, true) => format!("The {ct} with id {} is {} from the {ca} with id {}", target.id, edge.semantic, anchor.id),
        (false, false) => return None,
    };
    Some(s)
}

/// Escapes `"`, `\` and control characters as in a JSON string body.
pub fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}
