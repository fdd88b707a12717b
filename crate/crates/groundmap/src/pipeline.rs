//! The command implementations, one function per subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use groundmap_core::dbscan::dbscan_denoise;
use groundmap_core::descriptor;
use groundmap_core::eval::{
    grounding_accuracy, recall_at_1, semseg_metrics, transfer_labels, AccuracyTable, SemsegScores, DEFAULT_THRESHOLDS,
};
use groundmap_core::ingest::{filter_proposals, project_mask_to_points, Detection};
use groundmap_core::object_map::ObjectMap;
use groundmap_core::scene_graph::{node_from_object, Describer, EdgeKinds, SceneNode};
use groundmap_core::semantic_query::{class_prompt, classify_with_text_embeddings, label_point_cloud, Classification, TextEmbedder};
use groundmap_core::view_select::best_view;
use rayon::prelude::*;

use crate::annotations::{self, GtBoxes, Prediction};
use crate::archive::DetectionArchive;
use crate::checkpoint;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fixtures::CaptionTable;
use crate::graph_io::{attach_embeddings, save_views, EmbeddingTable, SceneGraphFile, ViewRecord};
use crate::llm::{write_transcript, HttpEmbedder, HttpLlm, HttpSettings, LlmEndpoint, LlmError, MockLlm, ReplayLlm};
use crate::manifest::{RunManifest, StageClock};
use crate::ply;
use crate::reasoner::{ground, GroundOptions, GroundingAnswer};
use crate::sequence::{write_rgb_png, Sequence};

pub const SEQUENCE_FILE: &str = "sequence.json";
pub const SEMSEG_CAP_M: f64 = 0.05;

/// A sequence argument may name the JSON file or its directory.
pub fn sequence_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(SEQUENCE_FILE)
    } else {
        p.to_path_buf()
    }
}

/// `map.ckpt` → `map.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

fn new_manifest(command: &str, config: &PipelineConfig, inputs: &[(&str, &Path)]) -> RunManifest {
    RunManifest {
        command: command.into(),
        config_hash: config.hash(),
        inputs: inputs.iter().map(|(k, p)| ((*k).to_owned(), p.to_path_buf())).collect(),
        ..RunManifest::default()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub struct MapArgs<'a> {
    pub sequence: &'a Path,
    pub detections: &'a Path,
    pub output: &'a Path,
}

pub struct MapRun {
    pub map: ObjectMap,
    pub manifest: RunManifest,
}

/// Builds the object map frame by frame and writes the checkpoint plus its
/// manifest.
pub fn run_map(args: &MapArgs<'_>, config: &PipelineConfig) -> Result<MapRun> {
    config.validate()?;
    let mut clock = StageClock::new();
    let seq_path = sequence_path(args.sequence);
    let (seq, archive) = clock.time("load", || -> Result<_> {
        let seq = Sequence::load(&seq_path)?;
        let archive = DetectionArchive::open(args.detections)?;
        Ok((seq, archive))
    })?;
    let k = seq.intrinsics();
    if archive.meta().width() != k.width || archive.meta().height() != k.height {
        return Err(Error::schema(args.detections.join("meta.json"), "resolution", "differs from the sequence intrinsics"));
    }
    if let Some(orphan) = archive.frame_indices().find(|&i| seq.pose(i).is_none()) {
        return Err(Error::InFrame {
            frame: orphan,
            source: Box::new(Error::schema(&seq_path, "frames", "detection record has no posed frame")),
        });
    }

    let filter = config.filter.to_core();
    let assoc = config.association.to_core();
    let mut map = ObjectMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut frames = 0;
    let indices: Vec<u32> = seq.frame_indices().collect();
    for fi in indices {
        let in_frame = |e: Error| Error::InFrame { frame: fi, source: Box::new(e) };
        let (frame, record) = clock
            .time("load", || -> Result<_> {
                let record = archive.load(fi)?;
                let frame = match &record {
                    Some(r) if !r.detections.is_empty() => Some(seq.load_frame(fi)?),
                    _ => None,
                };
                Ok((frame, record))
            })
            .map_err(in_frame)?;
        let detections = clock.time("lift", || {
            let (Some(frame), Some(record)) = (&frame, &record) else { return Vec::new() };
            let proposals: Vec<_> = record.detections.iter().map(|d| d.to_proposal()).collect();
            *counts.entry("proposals".into()).or_default() += proposals.len();
            let kept = filter_proposals(proposals, &filter);
            *counts.entry("proposals_filtered".into()).or_default() += kept.len();
            let lifted: Vec<Option<Detection>> = kept
                .into_par_iter()
                .map(|p| {
                    project_mask_to_points(frame, &p.mask, filter.subsample_stride)
                        .and_then(|pts| dbscan_denoise(&pts, filter.dbscan_eps, filter.dbscan_min_pts))
                        .and_then(|pts| Detection::new(p.confidence, p.descriptor, pts))
                        .ok()
                })
                .collect();
            *counts.entry("lift_skipped".into()).or_default() += lifted.iter().filter(|d| d.is_none()).count();
            lifted.into_iter().flatten().collect()
        });
        *counts.entry("detections".into()).or_default() += detections.len();
        let stats = clock.time("integrate", || map.integrate_frame(detections, fi, &assoc));
        *counts.entry("objects_created".into()).or_default() += stats.created;
        *counts.entry("detections_merged".into()).or_default() += stats.merged;
        *counts.entry("detections_skipped".into()).or_default() += stats.skipped;
        *counts.entry("periodic_merges".into()).or_default() += stats.periodic_merges;
        log::debug!("frame {fi}: {stats:?}, {} objects", map.len());
        frames += 1;
    }
    counts.insert("objects_before_postprocess".into(), map.len());
    let removed = clock.time("postprocess", || map.postprocess(&assoc));
    counts.insert("objects_removed_by_postprocess".into(), removed);
    counts.insert("objects".into(), map.len());
    counts.insert("points".into(), map.total_points());
    clock.time("write", || checkpoint::write(args.output, &map, config))?;

    let mut manifest = new_manifest("map", config, &[("sequence", &seq_path), ("detections", args.detections)]);
    manifest.outputs.insert("checkpoint".into(), args.output.to_path_buf());
    manifest.object_counts = counts;
    clock.finish(frames, &mut manifest);
    manifest.save(&manifest_path(args.output))?;
    Ok(MapRun { map, manifest })
}

pub struct GraphArgs<'a> {
    pub checkpoint: &'a Path,
    pub sequence: &'a Path,
    pub captions: Option<&'a Path>,
    pub visual_embeddings: Option<&'a Path>,
    pub crops_dir: Option<&'a Path>,
    pub output: &'a Path,
}

pub struct GraphRun {
    pub nodes: Vec<SceneNode>,
    pub views: Vec<ViewRecord>,
    pub skipped: Vec<u64>,
    pub manifest: RunManifest,
}

/// `graph.json` → `graph.views.json`.
pub fn views_path(graph: &Path) -> PathBuf {
    graph.with_extension("views.json")
}

/// `graph.json` → `graph.embeddings.json`.
pub fn embeddings_path(graph: &Path) -> PathBuf {
    graph.with_extension("embeddings.json")
}

/// Best views, captions and embeddings for every object of a checkpoint.
pub fn run_graph(args: &GraphArgs<'_>, config: &PipelineConfig) -> Result<GraphRun> {
    config.validate()?;
    let mut clock = StageClock::new();
    let seq_path = sequence_path(args.sequence);
    let (map, _) = clock.time("load", || checkpoint::read(args.checkpoint))?;
    let seq = clock.time("load", || Sequence::load(&seq_path))?;
    let captions = match args.captions {
        Some(p) => clock.time("load", || CaptionTable::load(p))?,
        None => CaptionTable::default(),
    };
    let visual = args.visual_embeddings.map(EmbeddingTable::load).transpose()?;
    if let Some(dir) = args.crops_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let view_cfg = config.views.to_core();

    let mut nodes = Vec::new();
    let mut views = Vec::new();
    let mut skipped = Vec::new();
    let mut raycasts = 0;
    for obj in map.objects() {
        let outcome = match clock.time("best_view", || best_view(obj, &seq, &view_cfg)) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("object {}: {e}; skipped", obj.id());
                skipped.push(obj.id());
                continue;
            }
        };
        raycasts += outcome.raycasts;
        let view = outcome.view;
        let crop = match args.crops_dir {
            Some(dir) => clock.time("crop", || -> Result<_> {
                let Some(rgb) = seq.load_rgb(view.frame_index)? else { return Ok(None) };
                let crop = rgb.crop(view.crop_box);
                write_rgb_png(&dir.join(format!("object_{}.png", obj.id())), crop.width, crop.height, &crop.pixels)?;
                Ok(Some(crop))
            })?,
            None => None,
        };
        let describer: &dyn Describer = &captions;
        let node = clock.time("describe", || node_from_object(obj, &view, crop.as_ref(), describer, visual.as_ref().map(|v| v as _)));
        if !node.valid {
            log::warn!("object {}: no caption; node kept as invalid", obj.id());
        }
        views.push(ViewRecord::new(obj.id(), view.frame_index, view.crop_box));
        nodes.push(node);
    }

    clock.time("write", || -> Result<()> {
        SceneGraphFile::from_nodes(&nodes).save(args.output)?;
        save_views(&views_path(args.output), &views)?;
        let table: BTreeMap<String, Vec<f64>> =
            nodes.iter().filter_map(|n| Some((n.id.to_string(), n.visual_embedding.clone()?))).collect();
        if !table.is_empty() {
            EmbeddingTable(table).save(&embeddings_path(args.output))?;
        }
        Ok(())
    })?;

    let mut manifest = new_manifest("graph", config, &[("checkpoint", args.checkpoint), ("sequence", &seq_path)]);
    for (k, p) in [("captions", args.captions), ("visual_embeddings", args.visual_embeddings)] {
        if let Some(p) = p {
            manifest.inputs.insert(k.into(), p.to_path_buf());
        }
    }
    manifest.outputs.insert("graph".into(), args.output.to_path_buf());
    manifest.outputs.insert("views".into(), views_path(args.output));
    manifest.object_counts = BTreeMap::from([
        ("objects".into(), map.len()),
        ("nodes".into(), nodes.len()),
        ("invalid_nodes".into(), nodes.iter().filter(|n| !n.valid).count()),
        ("no_visible_view".into(), skipped.len()),
        ("raycasts".into(), raycasts),
    ]);
    clock.finish(seq.len(), &mut manifest);
    manifest.save(&manifest_path(args.output))?;
    Ok(GraphRun { nodes, views, skipped, manifest })
}

/// Mean camera height over a sequence, for the room-center override.
pub fn mean_camera_height(seq: &Sequence) -> Option<f64> {
    let z: Vec<f64> = seq.frame_indices().filter_map(|i| Some(seq.pose(i)?.position()[2])).collect();
    (!z.is_empty()).then(|| z.iter().sum::<f64>() / z.len() as f64)
}

/// Loads a graph and attaches visual embeddings, defaulting to the sidecar.
pub fn load_graph_nodes(graph: &Path, visual_embeddings: Option<&Path>) -> Result<Vec<SceneNode>> {
    let mut nodes = SceneGraphFile::load(graph)?.to_nodes();
    let sidecar = embeddings_path(graph);
    let path = visual_embeddings.map(Path::to_path_buf).or_else(|| sidecar.exists().then_some(sidecar));
    if let Some(p) = path {
        attach_embeddings(&mut nodes, &EmbeddingTable::load(&p)?);
    }
    Ok(nodes)
}

/// Where text embeddings come from.
#[derive(Debug, Clone)]
pub enum TextEmbeddings {
    /// Table keyed by the exact prompt text.
    Table(PathBuf),
    Http,
}

enum AnyEmbedder {
    Table(EmbeddingTable),
    Http(HttpEmbedder),
}

impl AnyEmbedder {
    fn open(source: &TextEmbeddings, config: &PipelineConfig) -> Result<Self> {
        Ok(match source {
            TextEmbeddings::Table(p) => AnyEmbedder::Table(EmbeddingTable::load(p)?),
            TextEmbeddings::Http => AnyEmbedder::Http(HttpEmbedder::new(http_settings(config)?)),
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        match self {
            AnyEmbedder::Table(t) => t.embed(text).map_err(|e| Error::Endpoint(e.to_string())),
            AnyEmbedder::Http(h) => h.embed(text).map_err(|e| Error::Endpoint(e.to_string())),
        }
    }
}

fn http_settings(config: &PipelineConfig) -> Result<HttpSettings> {
    HttpSettings::from_env(&config.endpoint).map_err(|e| match e {
        LlmError::NotConfigured(m) => Error::Config(m),
        e => Error::Endpoint(e.to_string()),
    })
}

pub struct ClassifyArgs<'a> {
    pub graph: &'a Path,
    pub visual_embeddings: Option<&'a Path>,
    pub classes: &'a Path,
    pub text_embeddings: TextEmbeddings,
    pub output: &'a Path,
    /// With `labeled_points`, writes every map point with its object's class.
    pub checkpoint: Option<&'a Path>,
    pub labeled_points: Option<&'a Path>,
}

/// Open-vocabulary classification; writes `object_id,class,score` rows.
pub fn run_classify(args: &ClassifyArgs<'_>, config: &PipelineConfig) -> Result<Classification> {
    let mut clock = StageClock::new();
    let nodes = clock.time("load", || load_graph_nodes(args.graph, args.visual_embeddings))?;
    let classes = annotations::load_class_list(args.classes)?;
    let embedder = AnyEmbedder::open(&args.text_embeddings, config)?;
    let texts = clock.time("embed", || classes.iter().map(|c| embedder.embed(&class_prompt(c))).collect::<Result<Vec<_>>>())?;
    let result = clock.time("classify", || classify_with_text_embeddings(&nodes, &classes, &texts));
    for id in &result.skipped {
        log::warn!("object {id}: no visual embedding; not classified");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["object_id", "class", "score"]).expect("in-memory write");
    for c in &result.classified {
        w.write_record([c.object_id.to_string(), c.label.clone(), format!("{:.6}", c.score)]).expect("in-memory write");
    }
    write_text(args.output, &String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"))?;

    let mut manifest = new_manifest("classify", config, &[("graph", args.graph), ("classes", args.classes)]);
    manifest.outputs.insert("classes".into(), args.output.to_path_buf());
    if let (Some(ckpt), Some(out)) = (args.checkpoint, args.labeled_points) {
        let (map, _) = checkpoint::read(ckpt)?;
        let labels = label_point_cloud(&map, &result.classified);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x", "y", "z", "label"]).expect("in-memory write");
        let points = map.objects().iter().flat_map(|o| o.points());
        for (p, l) in points.zip(labels) {
            w.write_record([p[0].to_string(), p[1].to_string(), p[2].to_string(), l.to_owned()]).expect("in-memory write");
        }
        write_text(out, &String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"))?;
        manifest.inputs.insert("checkpoint".into(), ckpt.to_path_buf());
        manifest.outputs.insert("labeled_points".into(), out.to_path_buf());
    }
    manifest.object_counts = BTreeMap::from([
        ("nodes".into(), nodes.len()),
        ("classified".into(), result.classified.len()),
        ("skipped".into(), result.skipped.len()),
    ]);
    clock.finish(0, &mut manifest);
    manifest.save(&manifest_path(args.output))?;
    Ok(result)
}

/// Which language model answers grounding prompts.
#[derive(Debug, Clone)]
pub enum EndpointChoice {
    Mock,
    Replay(PathBuf),
    Http,
}

pub fn open_llm(choice: &EndpointChoice, config: &PipelineConfig) -> Result<Box<dyn LlmEndpoint>> {
    Ok(match choice {
        EndpointChoice::Mock => Box::new(MockLlm),
        EndpointChoice::Replay(p) => Box::new(ReplayLlm::from_file(p).map_err(|e| Error::io(p, e))?),
        EndpointChoice::Http => Box::new(HttpLlm::new(http_settings(config)?)),
    })
}

#[derive(Debug, Clone)]
pub enum GroundMethod {
    /// Two-stage deductive reasoning over the graph.
    Deductive(EndpointChoice),
    /// Highest cosine similarity between the query and object embeddings.
    Clip(TextEmbeddings),
}

pub struct GroundArgs<'a> {
    pub graph: &'a Path,
    pub visual_embeddings: Option<&'a Path>,
    pub method: GroundMethod,
    pub edges: Option<EdgeKinds>,
    pub camera_height: Option<f64>,
    /// Camera trajectory; with `graph.use_camera_height` its mean height
    /// replaces the room center height unless `camera_height` is given.
    pub sequence: Option<&'a Path>,
    pub transcript: Option<&'a Path>,
}

/// Picks the valid node whose visual embedding best matches the query text.
pub fn clip_ground<'a>(nodes: &'a [SceneNode], query_embedding: &[f64]) -> Option<&'a SceneNode> {
    let q = descriptor::normalized(query_embedding.to_vec()).ok()?;
    let mut best: Option<(f64, &SceneNode)> = None;
    for n in nodes {
        let Some(v) = n.visual_embedding.as_deref().filter(|v| v.len() == q.len()) else { continue };
        let s = descriptor::cosine_similarity(v, &q);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, n));
        }
    }
    best.map(|(_, n)| n)
}

/// A grounding session over one graph, for one or many queries.
pub struct Grounder {
    nodes: Vec<SceneNode>,
    config: PipelineConfig,
    options: GroundOptions,
    backend: Backend,
}

enum Backend {
    Llm(Box<dyn LlmEndpoint>),
    Clip(AnyEmbedder),
}

impl Grounder {
    pub fn open(args: &GroundArgs<'_>, config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let nodes = load_graph_nodes(args.graph, args.visual_embeddings)?;
        let mut options = GroundOptions::from_config(&config.reasoner);
        if let Some(e) = args.edges {
            options.edges = e;
        }
        options.camera_height = match (args.camera_height, args.sequence) {
            (Some(h), _) => Some(h),
            (None, Some(seq)) if config.graph.use_camera_height => mean_camera_height(&Sequence::load(&sequence_path(seq))?),
            _ => None,
        };
        let backend = match &args.method {
            GroundMethod::Deductive(choice) => Backend::Llm(open_llm(choice, config)?),
            GroundMethod::Clip(source) => Backend::Clip(AnyEmbedder::open(source, config)?),
        };
        Ok(Self { nodes, config: config.clone(), options, backend })
    }

    pub fn nodes(&self) -> &[SceneNode] {
        &self.nodes
    }

    pub fn ground(&self, query: &str) -> Result<GroundingAnswer> {
        match &self.backend {
            Backend::Llm(llm) => Ok(ground(&self.nodes, query, llm.as_ref(), &self.config.reasoner, self.options)?),
            Backend::Clip(embedder) => {
                let q = embedder.embed(query)?;
                let n = clip_ground(&self.nodes, &q)
                    .ok_or_else(|| Error::Endpoint("no object carries a comparable visual embedding".into()))?;
                Ok(GroundingAnswer {
                    final_object_id: n.id,
                    bbox_center: n.center,
                    bbox_extent: n.extent,
                    out_of_candidates: false,
                    selection: Default::default(),
                    edge_count: 0,
                    transcript: Vec::new(),
                })
            }
        }
    }
}

/// Grounds one query, appending its calls to the transcript file.
pub fn run_ground(args: &GroundArgs<'_>, query: &str, config: &PipelineConfig) -> Result<GroundingAnswer> {
    let grounder = Grounder::open(args, config)?;
    let result = grounder.ground(query);
    if let Some(t) = args.transcript {
        let entries = match &result {
            Ok(a) => a.transcript.as_slice(),
            Err(Error::Grounding(e)) => e.transcript.as_slice(),
            Err(_) => &[],
        };
        write_transcript(t, entries, false).map_err(|e| Error::io(t, e))?;
    }
    result
}

pub struct BatchRun {
    pub predictions: Vec<Prediction>,
    pub answers: Vec<Option<GroundingAnswer>>,
    pub manifest: RunManifest,
}

/// Grounds every query of an annotation file; failed queries become null
/// predictions.
pub fn run_ground_batch(args: &GroundArgs<'_>, queries: &Path, output: &Path, config: &PipelineConfig) -> Result<BatchRun> {
    let mut clock = StageClock::new();
    let grounder = clock.time("load", || Grounder::open(args, config))?;
    let anns = annotations::load_annotations(queries)?;
    if let Some(t) = args.transcript {
        write_transcript(t, &[], false).map_err(|e| Error::io(t, e))?;
    }
    let mut predictions = Vec::with_capacity(anns.len());
    let mut answers = Vec::with_capacity(anns.len());
    let mut failures = 0;
    for a in &anns {
        let result = clock.time("ground", || grounder.ground(&a.query));
        let transcript = match &result {
            Ok(ans) => ans.transcript.as_slice(),
            Err(Error::Grounding(e)) => e.transcript.as_slice(),
            Err(_) => &[],
        };
        if let Some(t) = args.transcript {
            write_transcript(t, transcript, true).map_err(|e| Error::io(t, e))?;
        }
        match result {
            Ok(ans) => {
                predictions.push(Prediction {
                    query: a.query.clone(),
                    final_object_id: Some(ans.final_object_id),
                    bbox_center: Some(ans.bbox_center),
                    bbox_extent: Some(ans.bbox_extent),
                });
                answers.push(Some(ans));
            }
            Err(e) => {
                log::warn!("query {:?}: {e}", a.query);
                failures += 1;
                predictions.push(Prediction { query: a.query.clone(), final_object_id: None, bbox_center: None, bbox_extent: None });
                answers.push(None);
            }
        }
    }
    clock.time("write", || annotations::write_predictions(output, &predictions))?;
    let mut manifest = new_manifest("ground", config, &[("graph", args.graph), ("queries", queries)]);
    manifest.outputs.insert("predictions".into(), output.to_path_buf());
    if let Some(t) = args.transcript {
        manifest.outputs.insert("transcript".into(), t.to_path_buf());
    }
    manifest.object_counts =
        BTreeMap::from([("nodes".into(), grounder.nodes().len()), ("queries".into(), anns.len()), ("failed_queries".into(), failures)]);
    clock.finish(0, &mut manifest);
    manifest.save(&manifest_path(output))?;
    Ok(BatchRun { predictions, answers, manifest })
}

pub struct GroundingEvalArgs<'a> {
    pub predictions: &'a Path,
    pub annotations: &'a Path,
    pub gt_boxes: Option<&'a Path>,
    pub out_dir: &'a Path,
}

pub struct GroundingReport {
    pub table: AccuracyTable,
    pub recall_at_1: Option<f64>,
}

/// Acc@τ (overall and per tag) and Recall@1; writes `grounding.csv` and
/// `grounding.md`.
pub fn run_eval_grounding(args: &GroundingEvalArgs<'_>) -> Result<GroundingReport> {
    let preds = annotations::load_predictions(args.predictions)?;
    let anns = annotations::load_annotations(args.annotations)?;
    if preds.len() != anns.len() {
        return Err(groundmap_core::Error::LengthMismatch { expected: anns.len(), found: preds.len() }.into());
    }
    let gt = args.gt_boxes.map(GtBoxes::load).transpose()?;
    let (cases, missing) = annotations::to_cases(&anns, gt.as_ref());
    if let Some(&i) = missing.first() {
        return Err(Error::schema(args.annotations, format!("row {}", i + 1), "no ground-truth box for the target"));
    }
    let boxes: Vec<_> = preds.iter().map(Prediction::aabb).collect();
    let table = grounding_accuracy(&boxes, &cases, &DEFAULT_THRESHOLDS)?;
    let recall = match anns.iter().map(|a| a.target_id).collect::<Option<Vec<u64>>>() {
        Some(ids) => Some(recall_at_1(&preds.iter().map(|p| p.final_object_id).collect::<Vec<_>>(), &ids)?),
        None => None,
    };
    fs::create_dir_all(args.out_dir).map_err(|e| Error::io(args.out_dir, e))?;
    write_text(&args.out_dir.join("grounding.csv"), &annotations::accuracy_csv(&table, recall))?;
    write_text(&args.out_dir.join("grounding.md"), &annotations::accuracy_markdown("Grounding", &table, recall))?;
    Ok(GroundingReport { table, recall_at_1: recall })
}

pub struct SemsegEvalArgs<'a> {
    pub predicted_points: &'a Path,
    pub gt_points: &'a Path,
    pub classes: &'a Path,
    pub out_dir: &'a Path,
}

/// Transfers predicted labels onto the GT cloud and scores them; writes
/// `semseg.csv` and `semseg.md`.
pub fn run_eval_semseg(args: &SemsegEvalArgs<'_>) -> Result<SemsegScores> {
    let classes = annotations::load_class_list(args.classes)?;
    let index = |l: &str| classes.iter().position(|c| c == l).map(|i| i as u32);
    let (pred_pts, pred_labels) = annotations::load_labeled_points(args.predicted_points)?;
    let (gt_pts, gt_labels) = annotations::load_labeled_points(args.gt_points)?;
    let pred_ids: Vec<Option<u32>> = pred_labels.iter().map(|l| l.as_deref().and_then(index)).collect();
    let (gt_pts, gt_ids): (Vec<_>, Vec<u32>) =
        gt_pts.into_iter().zip(&gt_labels).filter_map(|(p, l)| Some((p, index(l.as_deref()?)?))).unzip();
    if gt_ids.len() < gt_labels.len() {
        log::warn!("{} ground-truth points carry no listed class and are ignored", gt_labels.len() - gt_ids.len());
    }
    let transferred = transfer_labels(&pred_pts, &pred_ids, &gt_pts, SEMSEG_CAP_M)?;
    let class_set: Vec<u32> = (0..classes.len() as u32).collect();
    let scores = semseg_metrics(&transferred, &gt_ids, &class_set)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "accuracy", "iou", "frequency"]).expect("in-memory write");
    for (c, (acc, iou, freq)) in &scores.per_class {
        w.write_record([classes[*c as usize].clone(), format!("{acc:.6}"), format!("{iou:.6}"), format!("{freq:.6}")])
            .expect("in-memory write");
    }
    let csv = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    let md = format!(
        "# Semantic segmentation\n\n| mAcc | mIoU | f-mIoU |\n|---:|---:|---:|\n| {:.2} | {:.2} | {:.2} |\n",
        100.0 * scores.m_acc,
        100.0 * scores.m_iou,
        100.0 * scores.fm_iou
    );
    fs::create_dir_all(args.out_dir).map_err(|e| Error::io(args.out_dir, e))?;
    write_text(&args.out_dir.join("semseg.csv"), &csv)?;
    write_text(&args.out_dir.join("semseg.md"), &md)?;
    Ok(scores)
}

/// One PLY per object.
pub fn run_export_ply(checkpoint_path: &Path, out_dir: &Path) -> Result<usize> {
    let (map, _) = checkpoint::read(checkpoint_path)?;
    ply::export_map(&map, out_dir)?;
    Ok(map.len())
}
