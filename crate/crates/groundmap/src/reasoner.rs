//! Two-stage deductive grounding.
//!
//! 1. Stage one shows the model only object ids and captions and asks for
//!    the target and anchor ids of the query.
//! 2. Relations are computed for every target × anchor pair and rendered as
//!    sentences attached to the target.
//! 3. Stage two shows the selected objects with boxes and relations and asks
//!    for the final id.
//!
//! A response that is not the requested JSON is salvaged locally (code
//! fences, balanced braces) and otherwise sent back once for repair, so a
//! query costs two calls when clean and at most four.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use groundmap_core::geometry::Point3;
use groundmap_core::scene_graph::{json_escape, render_relation, room_center, Edge, EdgeKinds, SceneNode};
use regex::Regex;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::ReasonerSection;
use crate::llm::{transcript_prompt, LlmEndpoint, LlmError, TranscriptEntry};

pub const STAGE_ONE_SCHEMA: &str = r#"{"target_ids": [int], "anchor_ids": [int]}"#;
pub const STAGE_TWO_SCHEMA: &str = r#"{"final_object_id": int}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Input,
    StageOne,
    StageTwo,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Input => "input",
            Stage::StageOne => "stage_one",
            Stage::StageTwo => "stage_two",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReasonError {
    #[error("the scene graph has no objects")]
    EmptyGraph,
    #[error("the query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("response is not valid {schema} after repair: {response:?}")]
    ParseFailure { schema: &'static str, response: String },
    #[error("no valid target id was selected")]
    EmptyTargets,
    #[error("object id {0} is not in the scene graph")]
    UnknownId(u64),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}: {kind}", stage.label())]
pub struct StageError {
    pub stage: Stage,
    pub kind: ReasonError,
    /// Calls made before the failure.
    pub transcript: Vec<TranscriptEntry>,
}

impl StageError {
    pub fn exit_code(&self) -> u8 {
        let base = match self.stage {
            Stage::Input => return 10,
            Stage::StageOne => 20,
            Stage::StageTwo => 30,
        };
        base + match self.kind {
            ReasonError::Llm(_) => 1,
            ReasonError::ParseFailure { .. } => 2,
            ReasonError::EmptyTargets => 3,
            ReasonError::UnknownId(_) => 4,
            ReasonError::EmptyGraph | ReasonError::EmptyQuery => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StageOneResult {
    pub target_ids: Vec<u64>,
    pub anchor_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelatedObjectEntry {
    pub id: u64,
    pub caption: String,
    pub center: Point3,
    pub extent: Point3,
    /// Relation sentences; `None` for anchors.
    pub relations: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingAnswer {
    pub final_object_id: u64,
    pub bbox_center: Point3,
    pub bbox_extent: Point3,
    /// The id was in the graph but not among the stage-one selection.
    pub out_of_candidates: bool,
    pub selection: StageOneResult,
    /// Target × anchor pairs for which relations were computed.
    pub edge_count: usize,
    pub transcript: Vec<TranscriptEntry>,
}

impl GroundingAnswer {
    pub fn to_json(&self) -> Value {
        json!({
            "final_object_id": self.final_object_id,
            "bbox_center": self.bbox_center,
            "bbox_extent": self.bbox_extent,
        })
    }
}

/// One query's conversation with an endpoint.
pub struct Session<'a> {
    llm: &'a dyn LlmEndpoint,
    prompts: &'a ReasonerSection,
    query: &'a str,
    transcript: Vec<TranscriptEntry>,
}

impl<'a> Session<'a> {
    pub fn new(llm: &'a dyn LlmEndpoint, prompts: &'a ReasonerSection, query: &'a str) -> Self {
        Self { llm, prompts, query, transcript: Vec::new() }
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn into_transcript(self) -> Vec<TranscriptEntry> {
        self.transcript
    }

    fn call(&mut self, stage: &str, system: &str, user_template: &str, payload: &str) -> Result<String, LlmError> {
        let user = user_template.replace("{payload}", payload);
        let start = Instant::now();
        let response = self.llm.complete(system, &user, self.prompts.max_tokens)?;
        self.transcript.push(TranscriptEntry {
            query: self.query.to_owned(),
            stage: stage.to_owned(),
            prompt: transcript_prompt(system, &user),
            response: response.clone(),
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(response)
    }
}

/// Candidate JSON texts hidden in a response, most literal first.
fn salvage_candidates(raw: &str) -> Vec<String> {
    let mut out = vec![raw.trim().to_owned()];
    let fence = Regex::new(r"(?s)```[A-Za-z]*\s*(.*?)```").expect("valid regex");
    for c in fence.captures_iter(raw) {
        out.push(c[1].trim().to_owned());
    }
    if let Some(b) = balanced_object(raw) {
        out.push(b.to_owned());
    }
    if let (Some(s), Some(e)) = (raw.find('{'), raw.rfind('}')) {
        if s < e {
            out.push(raw[s..=e].to_owned());
        }
    }
    out
}

/// The first `{...}` with balanced braces outside string literals.
fn balanced_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
    for (i, ch) in text[start..].char_indices() {
        if in_str {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn local_parse<T>(raw: &str, extract: &impl Fn(&Value) -> Option<T>) -> Option<T> {
    salvage_candidates(raw).iter().find_map(|c| serde_json::from_str::<Value>(c).ok().and_then(|v| extract(&v)))
}

/// Parses `raw` into `T`, salvaging locally first and spending at most one
/// repair call.
pub fn parse_with_repair<T>(
    raw: &str,
    schema: &'static str,
    extract: impl Fn(&Value) -> Option<T>,
    session: &mut Session<'_>,
    repair_stage: &str,
) -> Result<T, ReasonError> {
    if let Some(t) = local_parse(raw, &extract) {
        return Ok(t);
    }
    let payload = json!({"schema": schema, "text": raw}).to_string();
    let (system, user) = (session.prompts.repair_system.clone(), session.prompts.repair_user.clone());
    let fixed = session.call(repair_stage, &system, &user, &payload)?;
    local_parse(&fixed, &extract).ok_or(ReasonError::ParseFailure { schema, response: fixed })
}

/// Any JSON object.
pub fn repair_json(raw: &str, schema: &'static str, session: &mut Session<'_>, repair_stage: &str) -> Result<Value, ReasonError> {
    parse_with_repair(raw, schema, |v| v.is_object().then(|| v.clone()), session, repair_stage)
}

fn as_id(v: &Value) -> Option<u64> {
    v.as_u64().or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
}

fn id_list(v: &Value) -> Option<Vec<u64>> {
    match v {
        Value::Null => Some(Vec::new()),
        Value::Array(a) => a.iter().map(as_id).collect(),
        other => as_id(other).map(|i| vec![i]),
    }
}

fn extract_stage_one(v: &Value) -> Option<StageOneResult> {
    let obj = v.as_object()?;
    Some(StageOneResult {
        target_ids: id_list(obj.get("target_ids")?)?,
        anchor_ids: id_list(obj.get("anchor_ids").unwrap_or(&Value::Null))?,
    })
}

fn extract_stage_two(v: &Value) -> Option<u64> {
    as_id(v.as_object()?.get("final_object_id")?)
}

pub fn stage_one_payload(nodes: &[SceneNode], query: &str) -> String {
    let objects: Vec<Value> = nodes.iter().filter(|n| n.valid).map(|n| json!({"id": n.id, "caption": n.caption})).collect();
    json!({"query": query, "objects": objects}).to_string()
}

/// Asks for target and anchor ids given captions only. Unknown ids are
/// dropped, duplicates removed and ids chosen as targets removed from the
/// anchors.
pub fn stage_one_select(nodes: &[SceneNode], query: &str, session: &mut Session<'_>) -> Result<StageOneResult, ReasonError> {
    let (system, user) = (session.prompts.stage_one_system.clone(), session.prompts.stage_one_user.clone());
    let raw = session.call("stage_one", &system, &user, &stage_one_payload(nodes, query))?;
    let parsed = parse_with_repair(&raw, STAGE_ONE_SCHEMA, extract_stage_one, session, "stage_one_repair")?;
    let known: BTreeSet<u64> = nodes.iter().map(|n| n.id).collect();
    let clean = |ids: Vec<u64>, exclude: &BTreeSet<u64>| {
        let mut seen = BTreeSet::new();
        ids.into_iter()
            .filter(|id| {
                if !known.contains(id) {
                    log::warn!("stage one returned unknown id {id}");
                    return false;
                }
                !exclude.contains(id) && seen.insert(*id)
            })
            .collect::<Vec<_>>()
    };
    let target_ids = clean(parsed.target_ids, &BTreeSet::new());
    let anchor_ids = clean(parsed.anchor_ids, &target_ids.iter().copied().collect());
    if target_ids.is_empty() {
        return Err(ReasonError::EmptyTargets);
    }
    Ok(StageOneResult { target_ids, anchor_ids })
}

/// Target entries carry one relation per anchor; anchors follow without
/// relations. Returns the entries and the number of edges computed.
pub fn build_related_objects(
    result: &StageOneResult,
    nodes: &[SceneNode],
    room: Point3,
    kinds: EdgeKinds,
) -> (Vec<RelatedObjectEntry>, usize) {
    let node = |id: u64| nodes.iter().find(|n| n.id == id).expect("validated id");
    let mut entries = Vec::with_capacity(result.target_ids.len() + result.anchor_ids.len());
    let mut edges = 0;
    for &t in &result.target_ids {
        let target = node(t);
        let mut relations = Vec::with_capacity(result.anchor_ids.len());
        for &a in &result.anchor_ids {
            let anchor = node(a);
            let edge = Edge::between(target, anchor, room);
            edges += 1;
            if let Some(s) = render_relation(target, anchor, &edge, kinds) {
                relations.push(s);
            }
        }
        entries.push(RelatedObjectEntry {
            id: t,
            caption: target.caption.clone(),
            center: target.center,
            extent: target.extent,
            relations: Some(relations),
        });
    }
    for &a in &result.anchor_ids {
        let anchor = node(a);
        entries.push(RelatedObjectEntry {
            id: a,
            caption: anchor.caption.clone(),
            center: anchor.center,
            extent: anchor.extent,
            relations: None,
        });
    }
    (entries, edges)
}

fn vec2(v: Point3) -> String {
    format!("[{:.2}, {:.2}, {:.2}]", v[0], v[1], v[2])
}

/// The stage-two JSON document. Relation sentences are already escaped and
/// are spliced into string literals verbatim.
pub fn stage_two_payload(related: &[RelatedObjectEntry], query: &str) -> String {
    let mut s = String::new();
    write!(s, "{{\"query\": {}, \"objects\": [", Value::from(query)).unwrap();
    for (i, e) in related.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        write!(
            s,
            "{{\"id\": {}, \"caption\": \"{}\", \"center\": {}, \"extent\": {}",
            e.id,
            json_escape(&e.caption),
            vec2(e.center),
            vec2(e.extent)
        )
        .unwrap();
        if let Some(rel) = &e.relations {
            s.push_str(", \"relations\": [");
            for (j, r) in rel.iter().enumerate() {
                if j > 0 {
                    s.push_str(", ");
                }
                write!(s, "\"{r}\"").unwrap();
            }
            s.push(']');
        }
        s.push('}');
    }
    s.push_str("]}");
    s
}

/// Asks for the final id and resolves its box from the graph.
pub fn stage_two_ground(
    related: &[RelatedObjectEntry],
    query: &str,
    nodes: &[SceneNode],
    session: &mut Session<'_>,
) -> Result<(u64, Point3, Point3, bool), ReasonError> {
    let (system, user) = (session.prompts.stage_two_system.clone(), session.prompts.stage_two_user.clone());
    let raw = session.call("stage_two", &system, &user, &stage_two_payload(related, query))?;
    let id = parse_with_repair(&raw, STAGE_TWO_SCHEMA, extract_stage_two, session, "stage_two_repair")?;
    let node = nodes.iter().find(|n| n.id == id).ok_or(ReasonError::UnknownId(id))?;
    let out_of_candidates = !related.iter().any(|e| e.id == id);
    if out_of_candidates {
        log::warn!("final id {id} was not among the selected objects");
    }
    Ok((id, node.center, node.extent, out_of_candidates))
}

/// Grounding options beyond the prompt templates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundOptions {
    pub edges: EdgeKinds,
    /// Replaces the room center height.
    pub camera_height: Option<f64>,
}

impl Default for GroundOptions {
    fn default() -> Self {
        Self { edges: EdgeKinds::ALL, camera_height: None }
    }
}

impl GroundOptions {
    pub fn from_config(cfg: &ReasonerSection) -> Self {
        Self { edges: EdgeKinds { metric: cfg.metric_edges, semantic: cfg.semantic_edges }, camera_height: None }
    }
}

pub fn ground(
    nodes: &[SceneNode],
    query: &str,
    llm: &dyn LlmEndpoint,
    prompts: &ReasonerSection,
    options: GroundOptions,
) -> Result<GroundingAnswer, StageError> {
    let input_err = |kind| StageError { stage: Stage::Input, kind, transcript: Vec::new() };
    if nodes.is_empty() {
        return Err(input_err(ReasonError::EmptyGraph));
    }
    if query.trim().is_empty() {
        return Err(input_err(ReasonError::EmptyQuery));
    }
    let mut session = Session::new(llm, prompts, query);
    let selection = match stage_one_select(nodes, query, &mut session) {
        Ok(s) => s,
        Err(kind) => return Err(StageError { stage: Stage::StageOne, kind, transcript: session.into_transcript() }),
    };
    let room = room_center(nodes, options.camera_height).expect("graph is non-empty");
    let (related, edge_count) = build_related_objects(&selection, nodes, room, options.edges);
    match stage_two_ground(&related, query, nodes, &mut session) {
        Ok((final_object_id, bbox_center, bbox_extent, out_of_candidates)) => Ok(GroundingAnswer {
            final_object_id,
            bbox_center,
            bbox_extent,
            out_of_candidates,
            selection,
            edge_count,
            transcript: session.into_transcript(),
        }),
        Err(kind) => Err(StageError { stage: Stage::StageTwo, kind, transcript: session.into_transcript() }),
    }
}
