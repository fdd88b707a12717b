//! Language-model endpoints: an HTTP chat-completion client, a rule-based
//! mock, transcript replay and a fault-injecting wrapper for tests.

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::EndpointSection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    BadResponse(String),
    #[error("no recorded response for this prompt")]
    ReplayMiss,
    #[error("endpoint not configured: {0}")]
    NotConfigured(String),
}

pub trait LlmEndpoint {
    fn complete(&self, system_prompt: &str, user_prompt: &str, max_tokens: u32) -> Result<String, LlmError>;
}

impl<T: LlmEndpoint + ?Sized> LlmEndpoint for &T {
    fn complete(&self, system_prompt: &str, user_prompt: &str, max_tokens: u32) -> Result<String, LlmError> {
        (**self).complete(system_prompt, user_prompt, max_tokens)
    }
}

/// The text a transcript records as the prompt of one call.
pub fn transcript_prompt(system_prompt: &str, user_prompt: &str) -> String {
    format!("{system_prompt}\n\n{user_prompt}")
}

/// The JSON document embedded in a prompt, from its first `{` to its last `}`.
pub fn prompt_payload(prompt: &str) -> Option<Value> {
    let start = prompt.find('{')?;
    let end = prompt.rfind('}')?;
    serde_json::from_str(prompt.get(start..=end)?).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MockStage {
    Select,
    Ground,
    Repair,
}

/// Deterministic offline endpoint.
///
/// * Selection: an object's category is the last word of its caption. The
///   category mentioned earliest in the query names the targets; objects of
///   every other mentioned category are anchors.
/// * Grounding: a single target is returned as is. Otherwise targets whose
///   relation sentences carry every relation word of the query are kept, a
///   superlative ("closest", "farthest") picks by distance, and the first
///   remaining target wins.
/// * Repair: pulls the schema fields out of free text with regular
///   expressions.
#[derive(Debug, Default, Clone)]
pub struct MockLlm;

const RELATION_WORDS: [&str; 6] = ["left", "right", "front", "behind", "above", "below"];

pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// Last word of a caption, lowercased.
pub fn caption_category(caption: &str) -> Option<String> {
    words(caption).into_iter().rev().find(|w| w.chars().any(char::is_alphabetic))
}

fn mention_position(query: &[String], category: &str) -> Option<usize> {
    let plural = format!("{category}s");
    query.iter().position(|w| w == category || *w == plural)
}

impl MockLlm {
    fn stage(payload: &Value) -> MockStage {
        if payload.get("schema").is_some() && payload.get("text").is_some() {
            return MockStage::Repair;
        }
        let has_center = payload["objects"].as_array().is_some_and(|a| a.iter().any(|o| o.get("center").is_some()));
        if has_center {
            MockStage::Ground
        } else {
            MockStage::Select
        }
    }

    fn select(payload: &Value) -> Value {
        let query = words(payload["query"].as_str().unwrap_or_default());
        let objects: Vec<(u64, Option<String>)> = payload["objects"]
            .as_array()
            .map(|a| {
                a.iter().filter_map(|o| Some((o["id"].as_u64()?, caption_category(o["caption"].as_str().unwrap_or_default())))).collect()
            })
            .unwrap_or_default();
        let mut mentioned: Vec<(usize, String)> =
            objects.iter().filter_map(|(_, c)| c.clone()).filter_map(|c| mention_position(&query, &c).map(|p| (p, c))).collect();
        mentioned.sort();
        mentioned.dedup();
        let Some((_, target_cat)) = mentioned.first().cloned() else {
            return json!({"target_ids": [], "anchor_ids": []});
        };
        let anchor_cats: Vec<&String> = mentioned.iter().map(|(_, c)| c).filter(|c| **c != target_cat).collect();
        let targets: Vec<u64> = objects.iter().filter(|(_, c)| c.as_ref() == Some(&target_cat)).map(|(id, _)| *id).collect();
        let anchors: Vec<u64> =
            objects.iter().filter(|(_, c)| c.as_ref().is_some_and(|c| anchor_cats.contains(&c))).map(|(id, _)| *id).collect();
        json!({"target_ids": targets, "anchor_ids": anchors})
    }

    fn ground(payload: &Value) -> Value {
        let query = words(payload["query"].as_str().unwrap_or_default());
        let wanted: Vec<&str> = RELATION_WORDS.iter().copied().filter(|r| query.iter().any(|w| w == r)).collect();
        let closest = query.iter().any(|w| w == "closest" || w == "nearest");
        let farthest = query.iter().any(|w| w == "farthest" || w == "furthest");
        let objects = payload["objects"].as_array().cloned().unwrap_or_default();
        let mut targets: Vec<(u64, Relations)> = Vec::new();
        for o in &objects {
            let (Some(id), Some(rel)) = (o["id"].as_u64(), o.get("relations").and_then(Value::as_array)) else { continue };
            let parsed = rel.iter().filter_map(Value::as_str).map(|s| parse_relation(s, id)).collect();
            targets.push((id, parsed));
        }
        if targets.is_empty() {
            let first = objects.first().and_then(|o| o["id"].as_u64());
            return json!({ "final_object_id": first });
        }
        let mut pool: Vec<&(u64, Relations)> = targets
            .iter()
            .filter(|(_, rels)| !wanted.is_empty() && rels.iter().any(|(ws, _)| wanted.iter().all(|r| ws.iter().any(|w| w == r))))
            .collect();
        if pool.is_empty() {
            pool = targets.iter().collect();
        }
        let mut pick = pool[0].0;
        if closest || farthest {
            let key = |rels: &[(Vec<String>, Option<f64>)]| {
                let d = rels.iter().filter_map(|(_, d)| *d);
                if closest {
                    d.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))))
                } else {
                    d.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
                }
            };
            let mut best: Option<(f64, u64)> = None;
            for (id, rels) in &pool {
                if let Some(d) = key(rels) {
                    let better = best.is_none_or(|(b, _)| if closest { d < b } else { d > b });
                    if better {
                        best = Some((d, *id));
                    }
                }
            }
            if let Some((_, id)) = best {
                pick = id;
            }
        }
        json!({ "final_object_id": pick })
    }

    fn repair(payload: &Value) -> Value {
        let schema = payload["schema"].as_str().unwrap_or_default();
        let text = payload["text"].as_str().unwrap_or_default();
        if schema.contains("final_object_id") {
            let re = Regex::new(r"(?i)final[_ ]object[_ ]id\D*(\d+)|(\d+)").expect("valid regex");
            return match re.captures(text) {
                Some(c) => {
                    let n: u64 = c.get(1).or_else(|| c.get(2)).unwrap().as_str().parse().unwrap_or(0);
                    json!({ "final_object_id": n })
                }
                None => Value::String(text.to_owned()),
            };
        }
        let list = |key: &str| -> Option<Vec<u64>> {
            let re = Regex::new(&format!(r"(?i){key}\W*\[([^\]]*)\]")).expect("valid regex");
            let c = re.captures(text)?;
            Some(c[1].split(|ch: char| !ch.is_ascii_digit()).filter(|s| !s.is_empty()).filter_map(|s| s.parse().ok()).collect())
        };
        match (list("target_ids"), list("anchor_ids")) {
            (Some(t), a) => json!({"target_ids": t, "anchor_ids": a.unwrap_or_default()}),
            _ => Value::String(text.to_owned()),
        }
    }
}

/// Relation words and distance of a sentence about target `id`.
type Relations = Vec<(Vec<String>, Option<f64>)>;

fn parse_relation(sentence: &str, id: u64) -> (Vec<String>, Option<f64>) {
    let marker = format!(" with id {id} is ");
    let Some(start) = sentence.find(&marker) else { return (Vec::new(), None) };
    let rest = &sentence[start + marker.len()..];
    let segment = rest.find(" from the ").map_or(rest, |e| &rest[..e]);
    let ws: Vec<String> = words(segment).into_iter().filter(|w| RELATION_WORDS.contains(&w.as_str())).collect();
    let distance = segment.split_whitespace().collect::<Vec<_>>().windows(2).find(|w| w[0] == "distance").and_then(|w| w[1].parse().ok());
    (ws, distance)
}

impl LlmEndpoint for MockLlm {
    fn complete(&self, _system: &str, user: &str, _max_tokens: u32) -> Result<String, LlmError> {
        let Some(payload) = prompt_payload(user) else {
            return Ok("I could not find a JSON payload in the prompt.".into());
        };
        let out = match Self::stage(&payload) {
            MockStage::Select => Self::select(&payload),
            MockStage::Ground => Self::ground(&payload),
            MockStage::Repair => Self::repair(&payload),
        };
        Ok(match out {
            Value::String(s) => s,
            v => v.to_string(),
        })
    }
}

/// One persisted LLM call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub query: String,
    pub stage: String,
    pub prompt: String,
    pub response: String,
    pub latency_ms: f64,
}

pub fn write_transcript(path: &Path, entries: &[TranscriptEntry], append: bool) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(path)?;
    for e in entries {
        writeln!(f, "{}", serde_json::to_string(e).expect("entry serializes"))?;
    }
    Ok(())
}

pub fn read_transcript(path: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Answers each prompt with the response recorded for it, in recording order.
#[derive(Debug, Default)]
pub struct ReplayLlm {
    responses: RefCell<HashMap<String, VecDeque<String>>>,
}

impl ReplayLlm {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut map: HashMap<String, VecDeque<String>> = HashMap::new();
        for e in entries {
            map.entry(e.prompt).or_default().push_back(e.response);
        }
        Self { responses: RefCell::new(map) }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(read_transcript(path)?))
    }
}

impl LlmEndpoint for ReplayLlm {
    fn complete(&self, system: &str, user: &str, _max_tokens: u32) -> Result<String, LlmError> {
        self.responses.borrow_mut().get_mut(&transcript_prompt(system, user)).and_then(VecDeque::pop_front).ok_or(LlmError::ReplayMiss)
    }
}

/// How [`FaultyLlm`] damages a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Wraps the JSON in a markdown code fence.
    Fenced,
    /// Rewrites the JSON as prose without braces.
    Prose,
    /// Replaces the response with text holding no usable data.
    Garbage,
}

/// Damages the responses of selected calls (0-based call numbers).
pub struct FaultyLlm<E> {
    inner: E,
    faults: HashMap<usize, Fault>,
    calls: Cell<usize>,
}

impl<E> FaultyLlm<E> {
    pub fn new(inner: E, faults: impl IntoIterator<Item = (usize, Fault)>) -> Self {
        Self { inner, faults: faults.into_iter().collect(), calls: Cell::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<E: LlmEndpoint> LlmEndpoint for FaultyLlm<E> {
    fn complete(&self, system: &str, user: &str, max_tokens: u32) -> Result<String, LlmError> {
        let n = self.calls.get();
        self.calls.set(n + 1);
        let out = self.inner.complete(system, user, max_tokens)?;
        Ok(match self.faults.get(&n) {
            None => out,
            Some(Fault::Fenced) => format!("Here you go:\n```json\n{out}\n```"),
            Some(Fault::Prose) => format!("Sure. {}", out.replace(['{', '}', '"'], "")),
            Some(Fault::Garbage) => "I am not able to answer that.".into(),
        })
    }
}

/// Settings of [`HttpLlm`], usually read from the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

impl HttpSettings {
    pub fn from_env(section: &EndpointSection) -> Result<Self, LlmError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let base_url = var(&section.base_url_env).ok_or_else(|| LlmError::NotConfigured(format!("{} is not set", section.base_url_env)))?;
        let model = var(&section.model_env).ok_or_else(|| LlmError::NotConfigured(format!("{} is not set", section.model_env)))?;
        Ok(Self {
            base_url,
            model,
            api_key: var(&section.api_key_env),
            timeout: Duration::from_millis(section.timeout_ms),
            retries: section.retries,
            backoff: Duration::from_millis(section.backoff_ms),
        })
    }
}

/// POSTs `{base_url}/<path>` with retries on transport errors, 429 and 5xx.
fn post_json(settings: &HttpSettings, path: &str, body: &Value) -> Result<Value, LlmError> {
    let agent: ureq::Agent =
        ureq::Agent::config_builder().timeout_global(Some(settings.timeout)).http_status_as_error(false).build().into();
    let url = format!("{}/{}", settings.base_url.trim_end_matches('/'), path);
    let payload = body.to_string();
    let mut attempt = 0;
    loop {
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &settings.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let err: LlmError = match req.send(payload.as_str()) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().map_err(|e| LlmError::Transport(e.to_string()));
                match (status, text) {
                    (200..=299, Ok(t)) => return serde_json::from_str(&t).map_err(|e| LlmError::BadResponse(e.to_string())),
                    (_, Err(e)) => e,
                    (s, Ok(t)) => LlmError::Status { status: s, body: t },
                }
            }
            Err(e) => LlmError::Transport(e.to_string()),
        };
        let transient = match &err {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        };
        if !transient || attempt >= settings.retries {
            return Err(err);
        }
        log::warn!("{url}: {err}; retrying");
        thread::sleep(settings.backoff * 2u32.pow(attempt));
        attempt += 1;
    }
}

/// Chat-completion client with temperature 0.
#[derive(Debug, Clone)]
pub struct HttpLlm {
    settings: HttpSettings,
}

impl HttpLlm {
    pub fn new(settings: HttpSettings) -> Self {
        Self { settings }
    }
}

impl LlmEndpoint for HttpLlm {
    fn complete(&self, system: &str, user: &str, max_tokens: u32) -> Result<String, LlmError> {
        let body = json!({
            "model": self.settings.model,
            "temperature": 0,
            "max_tokens": max_tokens,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let v = post_json(&self.settings, "chat/completions", &body)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
    }
}

/// Embedding client speaking the `{base_url}/embeddings` exchange.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    settings: HttpSettings,
}

impl HttpEmbedder {
    pub fn new(settings: HttpSettings) -> Self {
        Self { settings }
    }
}

impl groundmap_core::semantic_query::TextEmbedder for HttpEmbedder {
    type Error = LlmError;

    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let v = post_json(&self.settings, "embeddings", &json!({"model": self.settings.model, "input": text}))?;
        v["data"][0]["embedding"]
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| LlmError::BadResponse("missing data[0].embedding".into()))
    }
}
