//! Binary map checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "GMAPCKPT", version: u32
//! config_len: u32, config: config_len bytes of JSON
//! next_id: u64, frames_integrated: u64, num_objects: u32
//! per object:
//!   id: u64, num_detections: u32
//!   num_frames: u32, frame_indices: num_frames × u32
//!   dim: u32, descriptor: dim × f64
//!   num_points: u32, points: num_points × 3 × f32
//! sha256 of everything above: 32 bytes
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use groundmap_core::object_map::{MapObject, ObjectMap};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GMAPCKPT";
pub const VERSION: u32 = 1;

pub fn encode(map: &ObjectMap, config: &PipelineConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    let cfg = serde_json::to_vec(config).expect("config serializes");
    out.write_u32::<LittleEndian>(cfg.len() as u32).unwrap();
    out.extend_from_slice(&cfg);
    out.write_u64::<LittleEndian>(map.next_id()).unwrap();
    out.write_u64::<LittleEndian>(map.frames_integrated()).unwrap();
    out.write_u32::<LittleEndian>(map.len() as u32).unwrap();
    for o in map.objects() {
        out.write_u64::<LittleEndian>(o.id()).unwrap();
        out.write_u32::<LittleEndian>(o.num_detections()).unwrap();
        out.write_u32::<LittleEndian>(o.frame_indices().len() as u32).unwrap();
        for &f in o.frame_indices() {
            out.write_u32::<LittleEndian>(f).unwrap();
        }
        out.write_u32::<LittleEndian>(o.descriptor().len() as u32).unwrap();
        for &x in o.descriptor() {
            out.write_f64::<LittleEndian>(x).unwrap();
        }
        out.write_u32::<LittleEndian>(o.points().len() as u32).unwrap();
        for p in o.points() {
            for &c in p {
                out.write_f32::<LittleEndian>(c as f32).unwrap();
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(ObjectMap, PipelineConfig)> {
    let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a map checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch".into()));
    }
    let mut c = Cursor::new(&body[8..]);
    let eof = |field: &str| bad(format!("truncated at {field}"));
    let version = c.read_u32::<LittleEndian>().map_err(|_| eof("version"))?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let cfg_len = c.read_u32::<LittleEndian>().map_err(|_| eof("config_len"))? as usize;
    let mut cfg = vec![0; cfg_len];
    c.read_exact(&mut cfg).map_err(|_| eof("config"))?;
    let config: PipelineConfig = serde_json::from_slice(&cfg).map_err(|e| bad(format!("config: {e}")))?;
    let next_id = c.read_u64::<LittleEndian>().map_err(|_| eof("next_id"))?;
    let frames_integrated = c.read_u64::<LittleEndian>().map_err(|_| eof("frames_integrated"))?;
    let n = c.read_u32::<LittleEndian>().map_err(|_| eof("num_objects"))?;
    let mut objects = Vec::with_capacity(n.min(1 << 16) as usize);
    for i in 0..n {
        let field = |name: &str| format!("objects[{i}].{name}");
        let id = c.read_u64::<LittleEndian>().map_err(|_| eof(&field("id")))?;
        let num_detections = c.read_u32::<LittleEndian>().map_err(|_| eof(&field("num_detections")))?;
        let nf = c.read_u32::<LittleEndian>().map_err(|_| eof(&field("num_frames")))? as usize;
        let mut frames = vec![0u32; nf];
        c.read_u32_into::<LittleEndian>(&mut frames).map_err(|_| eof(&field("frame_indices")))?;
        let dim = c.read_u32::<LittleEndian>().map_err(|_| eof(&field("dim")))? as usize;
        let mut descriptor = vec![0f64; dim];
        c.read_f64_into::<LittleEndian>(&mut descriptor).map_err(|_| eof(&field("descriptor")))?;
        let np = c.read_u32::<LittleEndian>().map_err(|_| eof(&field("num_points")))? as usize;
        let mut flat = vec![0f32; np * 3];
        c.read_f32_into::<LittleEndian>(&mut flat).map_err(|_| eof(&field("points")))?;
        let points = flat.chunks_exact(3).map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect();
        let frames: BTreeSet<u32> = frames.into_iter().collect();
        let obj =
            MapObject::from_parts(id, points, descriptor, num_detections, frames).map_err(|e| bad(format!("{}: {e}", field("id"))))?;
        objects.push(obj);
    }
    if c.position() as usize != body.len() - 8 {
        return Err(bad("trailing bytes".into()));
    }
    let map = ObjectMap::from_parts(objects, next_id, frames_integrated).map_err(|e| bad(e.to_string()))?;
    Ok((map, config))
}

pub fn write(path: &Path, map: &ObjectMap, config: &PipelineConfig) -> Result<()> {
    fs::write(path, encode(map, config)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(ObjectMap, PipelineConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
