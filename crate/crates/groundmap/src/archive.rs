//! Detection archives: a directory holding `meta.json` and one record per
//! frame, either `frame_<idx>.det` (little-endian binary) or
//! `frame_<idx>.json` (the same fields with base64 payloads).
//!
//! Binary record layout:
//!
//! ```text
//! frame_index: u32, num_detections: u16
//! per detection:
//!   confidence: f32
//!   rle_len: u32
//!   rle: rle_len × u32   (run lengths, row-major, first run is unset pixels)
//!   descriptor: dim × f32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use groundmap_core::ingest::Proposal;
use groundmap_core::mask::Mask;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveMeta {
    /// `[width, height]` in pixels.
    pub resolution: [usize; 2],
    pub dim: usize,
    /// Feature-grid stride of the extractor, pixels.
    pub stride: usize,
    pub frame_count: usize,
}

impl ArchiveMeta {
    pub fn width(&self) -> usize {
        self.resolution[0]
    }

    pub fn height(&self) -> usize {
        self.resolution[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    pub confidence: f32,
    pub mask: Mask,
    pub descriptor: Vec<f32>,
}

impl RawDetection {
    pub fn to_proposal(&self) -> Proposal {
        Proposal {
            mask: self.mask.clone(),
            confidence: self.confidence as f64,
            descriptor: self.descriptor.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u32,
    pub detections: Vec<RawDetection>,
}

pub fn encode_record(record: &FrameRecord) -> Vec<u8> {
    let mut out = Vec::new();
    out.write_u32::<LittleEndian>(record.frame_index).unwrap();
    out.write_u16::<LittleEndian>(record.detections.len() as u16).unwrap();
    for d in &record.detections {
        out.write_f32::<LittleEndian>(d.confidence).unwrap();
        let rle = d.mask.to_rle();
        out.write_u32::<LittleEndian>(rle.len() as u32).unwrap();
        for r in rle {
            out.write_u32::<LittleEndian>(r).unwrap();
        }
        for &x in &d.descriptor {
            out.write_f32::<LittleEndian>(x).unwrap();
        }
    }
    out
}

pub fn decode_record(bytes: &[u8], meta: &ArchiveMeta, file: &Path) -> Result<FrameRecord> {
    let mut c = Cursor::new(bytes);
    let eof = |field: &str| Error::schema(file, field, "unexpected end of record");
    let frame_index = c.read_u32::<LittleEndian>().map_err(|_| eof("frame_index"))?;
    let n = c.read_u16::<LittleEndian>().map_err(|_| eof("num_detections"))?;
    let mut detections = Vec::with_capacity(n as usize);
    for i in 0..n {
        let field = |name: &str| format!("detections[{i}].{name}");
        let confidence = c.read_f32::<LittleEndian>().map_err(|_| eof(&field("confidence")))?;
        let rle_len = c.read_u32::<LittleEndian>().map_err(|_| eof(&field("rle_len")))? as usize;
        if rle_len > meta.width() * meta.height() + 1 {
            return Err(Error::schema(file, field("rle_len"), format!("{rle_len} runs exceed the pixel count")));
        }
        let mut rle = vec![0u32; rle_len];
        c.read_u32_into::<LittleEndian>(&mut rle).map_err(|_| eof(&field("rle")))?;
        let mut descriptor = vec![0f32; meta.dim];
        c.read_f32_into::<LittleEndian>(&mut descriptor).map_err(|_| eof(&field("descriptor")))?;
        detections.push(build_detection(confidence, &rle, descriptor, meta, file, i as usize)?);
    }
    let mut rest = Vec::new();
    c.read_to_end(&mut rest).expect("reading from memory");
    if !rest.is_empty() {
        return Err(Error::schema(file, "record", format!("{} trailing bytes", rest.len())));
    }
    Ok(FrameRecord { frame_index, detections })
}

fn build_detection(confidence: f32, rle: &[u32], descriptor: Vec<f32>, meta: &ArchiveMeta, file: &Path, i: usize) -> Result<RawDetection> {
    let field = |name: &str| format!("detections[{i}].{name}");
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::schema(file, field("confidence"), format!("{confidence} is outside [0, 1]")));
    }
    let mask = Mask::from_rle(meta.width(), meta.height(), rle).map_err(|e| Error::schema(file, field("rle"), e))?;
    if descriptor.len() != meta.dim {
        return Err(Error::schema(file, field("descriptor"), format!("length {} differs from dim {}", descriptor.len(), meta.dim)));
    }
    if descriptor.iter().any(|x| !x.is_finite()) {
        return Err(Error::schema(file, field("descriptor"), "non-finite value"));
    }
    Ok(RawDetection { confidence, mask, descriptor })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    frame_index: u32,
    num_detections: u16,
    detections: Vec<JsonDetection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonDetection {
    confidence: f32,
    rle_len: u32,
    /// Base64 of `rle_len` little-endian u32.
    rle: String,
    /// Base64 of `dim` little-endian f32.
    descriptor: String,
}

pub fn encode_record_json(record: &FrameRecord) -> String {
    let detections = record
        .detections
        .iter()
        .map(|d| {
            let rle = d.mask.to_rle();
            let rle_bytes: Vec<u8> = rle.iter().flat_map(|r| r.to_le_bytes()).collect();
            let desc_bytes: Vec<u8> = d.descriptor.iter().flat_map(|x| x.to_le_bytes()).collect();
            JsonDetection {
                confidence: d.confidence,
                rle_len: rle.len() as u32,
                rle: B64.encode(rle_bytes),
                descriptor: B64.encode(desc_bytes),
            }
        })
        .collect();
    let rec = JsonRecord { frame_index: record.frame_index, num_detections: record.detections.len() as u16, detections };
    serde_json::to_string_pretty(&rec).expect("record serializes")
}

pub fn decode_record_json(text: &str, meta: &ArchiveMeta, file: &Path) -> Result<FrameRecord> {
    let rec: JsonRecord = serde_json::from_str(text).map_err(|e| Error::schema(file, "record", e))?;
    if rec.num_detections as usize != rec.detections.len() {
        return Err(Error::schema(file, "num_detections", format!("{} declared, {} present", rec.num_detections, rec.detections.len())));
    }
    let mut detections = Vec::with_capacity(rec.detections.len());
    for (i, d) in rec.detections.into_iter().enumerate() {
        let field = |name: &str| format!("detections[{i}].{name}");
        let rle_bytes = B64.decode(&d.rle).map_err(|e| Error::schema(file, field("rle"), e))?;
        let desc_bytes = B64.decode(&d.descriptor).map_err(|e| Error::schema(file, field("descriptor"), e))?;
        if rle_bytes.len() != d.rle_len as usize * 4 {
            return Err(Error::schema(file, field("rle_len"), "does not match the rle payload"));
        }
        if desc_bytes.len() % 4 != 0 {
            return Err(Error::schema(file, field("descriptor"), "payload is not a whole number of f32"));
        }
        let rle: Vec<u32> = rle_bytes.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
        let desc: Vec<f32> = desc_bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        detections.push(build_detection(d.confidence, &rle, desc, meta, file, i)?);
    }
    Ok(FrameRecord { frame_index: rec.frame_index, detections })
}

/// An opened archive directory.
#[derive(Debug, Clone)]
pub struct DetectionArchive {
    dir: PathBuf,
    meta: ArchiveMeta,
    files: BTreeMap<u32, PathBuf>,
}

impl DetectionArchive {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ArchiveMeta = serde_json::from_str(&text).map_err(|e| Error::schema(&meta_path, "meta", e))?;
        if meta.width() == 0 || meta.height() == 0 {
            return Err(Error::schema(&meta_path, "resolution", "must be positive"));
        }
        if meta.dim == 0 {
            return Err(Error::schema(&meta_path, "dim", "must be positive"));
        }
        let mut files = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(rest) = name.strip_prefix("frame_") else { continue };
            let (num, ext) = match rest.rsplit_once('.') {
                Some(x) => x,
                None => continue,
            };
            let Ok(idx) = num.parse::<u32>() else { continue };
            match ext {
                "det" => {
                    files.insert(idx, path);
                }
                "json" => {
                    files.entry(idx).or_insert(path);
                }
                _ => {}
            }
        }
        Ok(Self { dir: dir.to_path_buf(), meta, files })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &ArchiveMeta {
        &self.meta
    }

    pub fn frame_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.files.keys().copied()
    }

    /// The record for `frame_index`, or `None` when the archive has no file for it.
    pub fn load(&self, frame_index: u32) -> Result<Option<FrameRecord>> {
        let Some(path) = self.files.get(&frame_index) else { return Ok(None) };
        let rec = if path.extension().is_some_and(|e| e == "det") {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_record(&bytes, &self.meta, path)?
        } else {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            decode_record_json(&text, &self.meta, path)?
        };
        if rec.frame_index != frame_index {
            return Err(Error::schema(path, "frame_index", format!("{} does not match the file name", rec.frame_index)));
        }
        Ok(Some(rec))
    }
}

pub fn write_meta(dir: &Path, meta: &ArchiveMeta) -> Result<()> {
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(meta).expect("meta serializes")).map_err(|e| Error::io(&path, e))
}

pub fn write_record(dir: &Path, record: &FrameRecord) -> Result<PathBuf> {
    let path = dir.join(format!("frame_{}.det", record.frame_index));
    fs::write(&path, encode_record(record)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn write_record_json(dir: &Path, record: &FrameRecord) -> Result<PathBuf> {
    let path = dir.join(format!("frame_{}.json", record.frame_index));
    fs::write(&path, encode_record_json(record)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
