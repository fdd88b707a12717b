mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use common::{generate_queries, ten_object_scene, write_mapping_fixture, MappingSpec};
use groundmap::archive::{write_meta, ArchiveMeta};
use groundmap::graph_io::SceneGraphFile;
use groundmap::pipeline::{self, GraphArgs, MapArgs};
use groundmap::sequence::{write_sequence, IntrinsicsRecord, SequenceFile};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_groundmap"));
    for var in ["GROUNDMAP_LLM_BASE_URL", "GROUNDMAP_LLM_MODEL", "GROUNDMAP_LLM_API_KEY"] {
        c.env_remove(var);
    }
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_spec() -> MappingSpec {
    MappingSpec { frames: 6, cols: 3, rows: 2, dim: 16, seed: 11, rgb: true }
}

fn write_graph(dir: &Path) -> PathBuf {
    let path = dir.join("graph.json");
    SceneGraphFile::from_nodes(&ten_object_scene()).save(&path).unwrap();
    path
}

#[test]
fn empty_sequence_yields_empty_map() {
    let dir = tempfile::tempdir().unwrap();
    let intrinsics = IntrinsicsRecord { fx: 100.0, fy: 100.0, cx: 8.0, cy: 6.0, width: 16, height: 12 };
    write_sequence(&dir.path().join("sequence.json"), &SequenceFile { intrinsics, frames: vec![] }).unwrap();
    let det = dir.path().join("detections");
    fs::create_dir_all(&det).unwrap();
    write_meta(&det, &ArchiveMeta { resolution: [16, 12], dim: 4, stride: 14, frame_count: 0 }).unwrap();
    let ckpt = dir.path().join("map.ckpt");
    let o = run(bin().args(["map", "--sequence"]).arg(dir.path()).arg("--detections").arg(&det).arg("-o").arg(&ckpt));
    assert!(o.status.success(), "{}", stderr(&o));
    let (map, _) = groundmap::checkpoint::read(&ckpt).unwrap();
    assert!(map.is_empty());

    let graph = dir.path().join("graph.json");
    let o = run(bin().args(["graph", "--checkpoint"]).arg(&ckpt).arg("--sequence").arg(dir.path()).arg("-o").arg(&graph));
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&graph).unwrap()).unwrap();
    assert_eq!(v, json!({"objects": []}));
}

#[test]
fn corrupt_record_names_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_mapping_fixture(dir.path(), small_spec());
    let rec = fx.detections.join("frame_4.det");
    let bytes = fs::read(&rec).unwrap();
    fs::write(&rec, &bytes[..bytes.len() / 2]).unwrap();
    let o = run(bin()
        .args(["map", "--sequence"])
        .arg(&fx.sequence)
        .arg("--detections")
        .arg(&fx.detections)
        .arg("-o")
        .arg(dir.path().join("m.ckpt")));
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("frame 4"), "{}", stderr(&o));
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn map_writes_checkpoint_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let fx = write_mapping_fixture(dir.path(), spec);
    let ckpt = dir.path().join("map.ckpt");
    let o = run(bin().args(["map", "--sequence"]).arg(&fx.sequence).arg("--detections").arg(&fx.detections).arg("-o").arg(&ckpt));
    assert!(o.status.success(), "{}", stderr(&o));
    let (map, _) = groundmap::checkpoint::read(&ckpt).unwrap();
    assert_eq!(map.len(), spec.objects());
    let m = groundmap::manifest::RunManifest::load(&pipeline::manifest_path(&ckpt)).unwrap();
    assert_eq!(m.command, "map");
    assert_eq!(m.frames, spec.frames as usize);
    assert_eq!(m.object_counts["objects"], spec.objects());
    assert_eq!(m.object_counts["detections"], spec.objects() * spec.frames as usize);
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[filter]\ndbscan_eps = -1.0\n").unwrap();
    let fx = write_mapping_fixture(dir.path(), small_spec());
    let o = run(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["map", "--sequence"])
        .arg(&fx.sequence)
        .arg("--detections")
        .arg(&fx.detections)
        .arg("-o")
        .arg(dir.path().join("m.ckpt")));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn graph_from_fixture_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let fx = write_mapping_fixture(dir.path(), spec);
    let ckpt = dir.path().join("map.ckpt");
    let cfg = Default::default();
    pipeline::run_map(&MapArgs { sequence: &fx.sequence, detections: &fx.detections, output: &ckpt }, &cfg).unwrap();
    let captions: BTreeMap<String, String> =
        (0..spec.objects()).map(|k| (k.to_string(), if k == 2 { String::new() } else { format!("a box number {k}") })).collect();
    let cap_path = dir.path().join("captions.json");
    fs::write(&cap_path, serde_json::to_string(&captions).unwrap()).unwrap();
    let graph = dir.path().join("graph.json");
    let crops = dir.path().join("crops");
    let run = pipeline::run_graph(
        &GraphArgs {
            checkpoint: &ckpt,
            sequence: &fx.sequence,
            captions: Some(&cap_path),
            visual_embeddings: None,
            crops_dir: Some(&crops),
            output: &graph,
        },
        &cfg,
    )
    .unwrap();
    assert_eq!(run.nodes.len(), spec.objects());
    assert!(run.skipped.is_empty());
    assert_eq!(run.nodes.iter().filter(|n| !n.valid).count(), 1);
    let loaded = SceneGraphFile::load(&graph).unwrap().to_nodes();
    assert_eq!(loaded, run.nodes);
    for n in &run.nodes {
        let crop = groundmap::sequence::read_rgb_png(&crops.join(format!("object_{}.png", n.id))).unwrap();
        assert!(crop.width > 0 && crop.height > 0);
    }
    let v: Value = serde_json::from_str(&fs::read_to_string(&graph).unwrap()).unwrap();
    for o in v["objects"].as_array().unwrap() {
        let keys: Vec<&str> = o.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["bbox_center", "bbox_extent", "caption", "id"]);
    }
    assert_eq!(groundmap::graph_io::load_views(&pipeline::views_path(&graph)).unwrap().len(), spec.objects());
}

#[test]
fn http_endpoint_without_env_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path());
    let o = run(bin().args(["ground", "--graph"]).arg(&graph).args(["--query", "the sofa", "--endpoint", "http"]));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("GROUNDMAP_LLM_BASE_URL"), "{}", stderr(&o));
}

#[test]
fn mock_grounding_answers_known_ids() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path());
    let nodes = ten_object_scene();
    for q in generate_queries(&nodes, 46).iter().step_by(9) {
        let o = run(bin().args(["ground", "--graph"]).arg(&graph).args(["--endpoint", "mock", "--query", &q.text]));
        assert!(o.status.success(), "{}", stderr(&o));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["final_object_id"], json!(q.answer), "{}", q.text);
        let n = nodes.iter().find(|n| n.id == q.answer).unwrap();
        assert_eq!(v["bbox_center"], json!(n.center));
        assert_eq!(v["bbox_extent"], json!(n.extent));
    }
}

#[test]
fn recorded_transcript_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path());
    let transcript = dir.path().join("t.jsonl");
    let query = "the chair closest to the sofa";
    let live =
        run(bin().args(["ground", "--graph"]).arg(&graph).args(["--endpoint", "mock", "--query", query, "--transcript"]).arg(&transcript));
    assert!(live.status.success(), "{}", stderr(&live));
    assert_eq!(groundmap::llm::read_transcript(&transcript).unwrap().len(), 2);
    let replay =
        run(bin().args(["ground", "--graph"]).arg(&graph).args(["--endpoint", "replay", "--query", query, "--replay"]).arg(&transcript));
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert_eq!(live.stdout, replay.stdout);

    let other = run(bin()
        .args(["ground", "--graph"])
        .arg(&graph)
        .args(["--endpoint", "replay", "--query", "the lamp above the bed", "--replay"])
        .arg(&transcript));
    assert!(!other.status.success());
}

#[test]
fn batch_grounding_then_perfect_eval() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path());
    let nodes = ten_object_scene();
    let queries = generate_queries(&nodes, 12);
    let anns: Vec<Value> =
        queries.iter().map(|q| json!({"scene_id": "s0", "description": q.text, "object_id": q.answer.to_string()})).collect();
    let ann_path = dir.path().join("ann.json");
    fs::write(&ann_path, serde_json::to_string(&anns).unwrap()).unwrap();
    let gt = dir.path().join("gt.json");
    fs::write(&gt, json!({"s0": SceneGraphFile::from_nodes(&nodes)}).to_string()).unwrap();

    let preds = dir.path().join("preds.jsonl");
    let o =
        run(bin().args(["ground", "--graph"]).arg(&graph).args(["--endpoint", "mock", "--queries"]).arg(&ann_path).arg("-o").arg(&preds));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(groundmap::annotations::load_predictions(&preds).unwrap().len(), queries.len());

    let report = dir.path().join("report");
    let o = run(bin()
        .args(["eval", "grounding", "--predictions"])
        .arg(&preds)
        .arg("--annotations")
        .arg(&ann_path)
        .arg("--gt-boxes")
        .arg(&gt)
        .arg("-o")
        .arg(&report));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(report.join("grounding.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "subset,count,acc@0.1,acc@0.25,acc@0.5,recall@1");
    let overall = lines.next().unwrap();
    assert_eq!(overall, format!("overall,{},1.0000,1.0000,1.0000,1.0000", queries.len()));

    let short = dir.path().join("short.jsonl");
    let text = fs::read_to_string(&preds).unwrap();
    fs::write(&short, text.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    let o = run(bin()
        .args(["eval", "grounding", "--predictions"])
        .arg(&short)
        .arg("--annotations")
        .arg(&ann_path)
        .arg("--gt-boxes")
        .arg(&gt)
        .arg("-o")
        .arg(&report));
    assert!(!o.status.success());
    assert!(stderr(&o).contains(&format!("{}", queries.len())), "{}", stderr(&o));
}

#[test]
fn semseg_eval_of_identical_clouds_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let classes = dir.path().join("classes.txt");
    fs::write(&classes, "# classes\nchair\ntable\n\nwall\n").unwrap();
    let mut rows = String::from("x,y,z,label\n");
    for i in 0..30 {
        let label = ["chair", "table", "wall"][i % 3];
        rows.push_str(&format!("{},{},0,{label}\n", (i % 3) as f64 * 2.0, (i / 3) as f64 * 0.01));
    }
    let pts = dir.path().join("pts.csv");
    fs::write(&pts, &rows).unwrap();
    let out = dir.path().join("semseg");
    let o = run(bin()
        .args(["eval", "semseg", "--predicted"])
        .arg(&pts)
        .arg("--gt")
        .arg(&pts)
        .arg("--classes")
        .arg(&classes)
        .arg("-o")
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "mAcc 1.0000  mIoU 1.0000  f-mIoU 1.0000");
    assert!(fs::read_to_string(out.join("semseg.md")).unwrap().contains("| 100.00 | 100.00 | 100.00 |"));
}

#[test]
fn classify_and_export_ply() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let fx = write_mapping_fixture(dir.path(), spec);
    let ckpt = dir.path().join("map.ckpt");
    let cfg = Default::default();
    pipeline::run_map(&MapArgs { sequence: &fx.sequence, detections: &fx.detections, output: &ckpt }, &cfg).unwrap();
    let graph = dir.path().join("graph.json");
    let captions: BTreeMap<String, String> = (0..spec.objects()).map(|k| (k.to_string(), format!("object {k}"))).collect();
    let cap_path = dir.path().join("captions.json");
    fs::write(&cap_path, serde_json::to_string(&captions).unwrap()).unwrap();
    let visual: BTreeMap<String, Vec<f64>> =
        (0..spec.objects()).map(|k| (k.to_string(), if k % 2 == 0 { vec![1.0, 0.1] } else { vec![0.1, 1.0] })).collect();
    let vis_path = dir.path().join("visual.json");
    fs::write(&vis_path, serde_json::to_string(&visual).unwrap()).unwrap();
    let o = run(bin()
        .args(["graph", "--checkpoint"])
        .arg(&ckpt)
        .arg("--sequence")
        .arg(&fx.sequence)
        .arg("--captions")
        .arg(&cap_path)
        .arg("--visual-embeddings")
        .arg(&vis_path)
        .arg("-o")
        .arg(&graph));
    assert!(o.status.success(), "{}", stderr(&o));

    let classes = dir.path().join("classes.txt");
    fs::write(&classes, "chair\ntable\n").unwrap();
    let text = dir.path().join("text.json");
    fs::write(&text, json!({"an image of chair": [1.0, 0.0], "an image of table": [0.0, 1.0]}).to_string()).unwrap();
    let out = dir.path().join("classes.csv");
    let labeled = dir.path().join("labeled.csv");
    let o = run(bin()
        .args(["classify", "--graph"])
        .arg(&graph)
        .arg("--classes")
        .arg(&classes)
        .arg("--text-embeddings")
        .arg(&text)
        .arg("-o")
        .arg(&out)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--labeled-points")
        .arg(&labeled));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), spec.objects());
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        let id: usize = f[0].parse().unwrap();
        assert_eq!(f[1], if id.is_multiple_of(2) { "chair" } else { "table" });
    }
    let (map, _) = groundmap::checkpoint::read(&ckpt).unwrap();
    let (pts, labels) = groundmap::annotations::load_labeled_points(&labeled).unwrap();
    assert_eq!(pts.len(), map.total_points());
    assert!(labels.iter().all(Option::is_some));

    let plys = dir.path().join("ply");
    let o = run(bin().args(["export-ply", "--checkpoint"]).arg(&ckpt).arg("-o").arg(&plys));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(&plys).unwrap().count(), spec.objects());
    let first = fs::read_dir(&plys).unwrap().next().unwrap().unwrap().path();
    assert!(fs::read_to_string(first).unwrap().starts_with("ply\n"));
}

struct Captured {
    path: String,
    body: Value,
    auth: Option<String>,
}

/// Serves `responses` in order, one per connection, recording each request.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&log);
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap().to_owned();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_owned()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            sink.lock().unwrap().push(Captured { path, body: serde_json::from_slice(&buf).unwrap(), auth });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, log, handle)
}

fn chat(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn http_endpoint_speaks_chat_completions_and_retries() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path());
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[endpoint]\nbackoff_ms = 10\nretries = 2\n").unwrap();
    let stage_one = json!({"target": ["sofa"], "anchors": [], "target_ids": [6], "anchor_ids": []}).to_string();
    let stage_two = json!({"final_object_id": 6, "reason": "only sofa"}).to_string();
    let (url, log, handle) = serve(vec![(503, "{}".into()), (200, chat(&stage_one)), (200, chat(&stage_two))]);
    let o = run(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["ground", "--graph"])
        .arg(&graph)
        .args(["--query", "the sofa", "--endpoint", "http"])
        .env("GROUNDMAP_LLM_BASE_URL", &url)
        .env("GROUNDMAP_LLM_MODEL", "test-model")
        .env("GROUNDMAP_LLM_API_KEY", "k123"));
    handle.join().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["final_object_id"], json!(6));
    let log = log.lock().unwrap();
    assert_eq!(log.len(), 3);
    for c in log.iter() {
        assert_eq!(c.path, "/v1/chat/completions");
        assert_eq!(c.auth.as_deref(), Some("Bearer k123"));
        assert_eq!(c.body["model"], json!("test-model"));
        assert_eq!(c.body["temperature"], json!(0));
        let roles: Vec<&str> = c.body["messages"].as_array().unwrap().iter().map(|m| m["role"].as_str().unwrap()).collect();
        assert_eq!(roles, ["system", "user"]);
    }
    assert_eq!(log[0].body, log[1].body);
}

#[test]
fn http_endpoint_gives_up_after_retries() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path());
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[endpoint]\nbackoff_ms = 5\nretries = 1\n").unwrap();
    let (url, log, handle) = serve(vec![(503, "{}".into()), (503, "{}".into())]);
    let o = run(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["ground", "--graph"])
        .arg(&graph)
        .args(["--query", "the sofa", "--endpoint", "http"])
        .env("GROUNDMAP_LLM_BASE_URL", &url)
        .env("GROUNDMAP_LLM_MODEL", "m"));
    handle.join().unwrap();
    assert_eq!(o.status.code(), Some(21), "{}", stderr(&o));
    assert!(stderr(&o).contains("503"), "{}", stderr(&o));
    assert_eq!(log.lock().unwrap().len(), 2);
}

#[test]
fn sequence_camera_height_matches_explicit_height() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path());
    let intrinsics = IntrinsicsRecord { fx: 100.0, fy: 100.0, cx: 8.0, cy: 6.0, width: 16, height: 12 };
    let frames = [1.6, 2.4]
        .iter()
        .enumerate()
        .map(|(i, z)| groundmap::sequence::FrameEntry {
            index: i as u32,
            pose: [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, *z],
            depth_path: "d.png".into(),
            rgb_path: None,
        })
        .collect();
    let seq = dir.path().join("sequence.json");
    write_sequence(&seq, &SequenceFile { intrinsics, frames }).unwrap();
    let on = dir.path().join("on.toml");
    fs::write(&on, "[graph]\nuse_camera_height = true\n").unwrap();
    let off = dir.path().join("off.toml");
    fs::write(&off, "[graph]\nuse_camera_height = false\n").unwrap();
    let query = "the chair left of the sofa";
    let prompts = |cfg: &Path, extra: &[&std::ffi::OsStr]| {
        let t = dir.path().join("t.jsonl");
        let o = run(bin()
            .arg("--config")
            .arg(cfg)
            .args(["ground", "--graph"])
            .arg(&graph)
            .args(["--endpoint", "mock", "--query", query, "--transcript"])
            .arg(&t)
            .args(extra));
        assert!(o.status.success(), "{}", stderr(&o));
        groundmap::llm::read_transcript(&t).unwrap().into_iter().map(|e| (e.prompt, e.response)).collect::<Vec<_>>()
    };
    let with_seq = ["--sequence".as_ref(), seq.as_os_str()];
    assert_eq!(prompts(&on, &with_seq), prompts(&on, &["--camera-height".as_ref(), "2.0".as_ref()]));
    assert_eq!(prompts(&off, &with_seq), prompts(&off, &[]));
}
