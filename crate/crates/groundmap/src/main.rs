use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use groundmap::config::PipelineConfig;
use groundmap::pipeline::{self, EndpointChoice, GroundArgs, GroundMethod, TextEmbeddings};
use groundmap::{Error, Result};
use groundmap_core::scene_graph::EdgeKinds;

#[derive(Parser)]
#[command(name = "groundmap", version, about = "Object-centric 3D maps, scene graphs and language grounding")]
struct Cli {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Endpoint {
    Mock,
    Replay,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum Edges {
    All,
    Metric,
    Semantic,
    None,
}

impl From<Edges> for EdgeKinds {
    fn from(e: Edges) -> Self {
        match e {
            Edges::All => EdgeKinds::ALL,
            Edges::Metric => EdgeKinds { metric: true, semantic: false },
            Edges::Semantic => EdgeKinds { metric: false, semantic: true },
            Edges::None => EdgeKinds::NONE,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build an object map from a posed RGB-D sequence and a detection archive.
    Map {
        /// Sequence JSON, or a directory holding sequence.json.
        #[arg(long)]
        sequence: PathBuf,
        /// Detection archive directory (meta.json plus frame_<n>.det).
        #[arg(long)]
        detections: PathBuf,
        /// Checkpoint to write; the manifest goes next to it.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Select best views and write the scene-graph JSON.
    Graph {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        /// Caption fixture: {"<object id>": "caption"}.
        #[arg(long)]
        captions: Option<PathBuf>,
        /// Visual embedding table keyed by object id.
        #[arg(long)]
        visual_embeddings: Option<PathBuf>,
        /// Write each object's best-view crop here as object_<id>.png.
        #[arg(long)]
        crops_dir: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Label graph objects with the most similar class name.
    Classify {
        #[arg(long)]
        graph: PathBuf,
        /// Class names, one per line.
        #[arg(long)]
        classes: PathBuf,
        #[arg(long)]
        visual_embeddings: Option<PathBuf>,
        /// Text embedding table keyed by prompt; the HTTP endpoint is used when omitted.
        #[arg(long)]
        text_embeddings: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        /// With --labeled-points, the map whose points get labeled.
        #[arg(long, requires = "labeled_points")]
        checkpoint: Option<PathBuf>,
        /// CSV x,y,z,label of every map point.
        #[arg(long, requires = "checkpoint")]
        labeled_points: Option<PathBuf>,
    },
    /// Ground a query (or a file of queries) in a scene graph.
    Ground {
        #[arg(long)]
        graph: PathBuf,
        /// A single query; the answer is printed as JSON.
        #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
        query: Option<String>,
        /// Annotation file (CSV or JSON) of queries; requires --output.
        #[arg(long, requires = "output")]
        queries: Option<PathBuf>,
        /// Predictions JSONL for --queries.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "http")]
        endpoint: Endpoint,
        /// Recorded transcript answering prompts for --endpoint replay.
        #[arg(long, required_if_eq("endpoint", "replay"))]
        replay: Option<PathBuf>,
        /// Transcript JSONL of every call.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Relation kinds included in the second-stage prompt.
        #[arg(long, value_enum)]
        edges: Option<Edges>,
        /// Up-axis coordinate of the virtual camera, meters.
        #[arg(long)]
        camera_height: Option<f64>,
        /// Sequence whose mean camera height is used when `graph.use_camera_height` is set.
        #[arg(long)]
        sequence: Option<PathBuf>,
        /// Rank objects by embedding similarity to the query instead.
        #[arg(long)]
        clip: bool,
        #[arg(long)]
        visual_embeddings: Option<PathBuf>,
        #[arg(long, requires = "clip")]
        text_embeddings: Option<PathBuf>,
    },
    /// Score predictions against annotations.
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
    /// Write one PLY per map object.
    ExportPly {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Acc@0.1/0.25/0.5 and Recall@1, overall and per tag.
    Grounding {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Scene graph, or {scene id: scene graph}, holding target boxes.
        #[arg(long)]
        gt_boxes: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// mAcc, mIoU and f-mIoU of labeled point clouds.
    Semseg {
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn text_source(table: Option<PathBuf>) -> TextEmbeddings {
    table.map_or(TextEmbeddings::Http, TextEmbeddings::Table)
}

fn run(cli: Cli) -> Result<()> {
    let config = PipelineConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Map { sequence, detections, output } => {
            let run = pipeline::run_map(&pipeline::MapArgs { sequence: &sequence, detections: &detections, output: &output }, &config)?;
            log::info!("{} objects from {} frames, {:.1} ms/frame", run.map.len(), run.manifest.frames, run.manifest.mean_ms_per_frame);
        }
        Command::Graph { checkpoint, sequence, captions, visual_embeddings, crops_dir, output } => {
            let args = pipeline::GraphArgs {
                checkpoint: &checkpoint,
                sequence: &sequence,
                captions: captions.as_deref(),
                visual_embeddings: visual_embeddings.as_deref(),
                crops_dir: crops_dir.as_deref(),
                output: &output,
            };
            let run = pipeline::run_graph(&args, &config)?;
            for id in &run.skipped {
                eprintln!("object {id}: no visible view, skipped");
            }
        }
        Command::Classify { graph, classes, visual_embeddings, text_embeddings, output, checkpoint, labeled_points } => {
            let args = pipeline::ClassifyArgs {
                graph: &graph,
                visual_embeddings: visual_embeddings.as_deref(),
                classes: &classes,
                text_embeddings: text_source(text_embeddings),
                output: &output,
                checkpoint: checkpoint.as_deref(),
                labeled_points: labeled_points.as_deref(),
            };
            pipeline::run_classify(&args, &config)?;
        }
        Command::Ground {
            graph,
            query,
            queries,
            output,
            endpoint,
            replay,
            transcript,
            edges,
            camera_height,
            sequence,
            clip,
            visual_embeddings,
            text_embeddings,
        } => {
            let method = if clip {
                GroundMethod::Clip(text_source(text_embeddings))
            } else {
                GroundMethod::Deductive(match endpoint {
                    Endpoint::Mock => EndpointChoice::Mock,
                    Endpoint::Replay => EndpointChoice::Replay(replay.expect("clap enforces --replay")),
                    Endpoint::Http => EndpointChoice::Http,
                })
            };
            let args = GroundArgs {
                graph: &graph,
                visual_embeddings: visual_embeddings.as_deref(),
                method,
                edges: edges.map(Into::into),
                camera_height,
                sequence: sequence.as_deref(),
                transcript: transcript.as_deref(),
            };
            match (query, queries) {
                (Some(q), _) => print_json(&pipeline::run_ground(&args, &q, &config)?.to_json()),
                (None, Some(file)) => {
                    let out = output.expect("clap enforces --output");
                    let run = pipeline::run_ground_batch(&args, &file, &out, &config)?;
                    log::info!("{} queries, {} failed", run.predictions.len(), run.manifest.object_counts["failed_queries"]);
                }
                (None, None) => unreachable!("clap requires --query or --queries"),
            }
        }
        Command::Eval { what: EvalCommand::Grounding { predictions, annotations, gt_boxes, output } } => {
            let args = pipeline::GroundingEvalArgs {
                predictions: &predictions,
                annotations: &annotations,
                gt_boxes: gt_boxes.as_deref(),
                out_dir: &output,
            };
            let r = pipeline::run_eval_grounding(&args)?;
            print!("{}", groundmap::annotations::accuracy_markdown("Grounding", &r.table, r.recall_at_1));
        }
        Command::Eval { what: EvalCommand::Semseg { predicted, gt, classes, output } } => {
            let args = pipeline::SemsegEvalArgs { predicted_points: &predicted, gt_points: &gt, classes: &classes, out_dir: &output };
            let s = pipeline::run_eval_semseg(&args)?;
            println!("mAcc {:.4}  mIoU {:.4}  f-mIoU {:.4}", s.m_acc, s.m_iou, s.fm_iou);
        }
        Command::ExportPly { checkpoint, output } => {
            let n = pipeline::run_export_ply(&checkpoint, &output)?;
            log::info!("{n} objects written to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", report(&e));
            ExitCode::from(e.exit_code())
        }
    }
}

fn report(e: &Error) -> String {
    let mut s = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(inner) = src {
        let t = inner.to_string();
        if !s.contains(&t) {
            s.push_str(": ");
            s.push_str(&t);
        }
        src = inner.source();
    }
    s
}
