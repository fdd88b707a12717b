//! ASCII PLY export, one colored point cloud per object.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use groundmap_core::object_map::{MapObject, ObjectMap};

use crate::error::{Error, Result};

/// A stable, well-spread color per object id.
pub fn object_color(id: u64) -> [u8; 3] {
    let mut x = id.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    let b = x.to_le_bytes();
    [64 + b[0] % 192, 64 + b[1] % 192, 64 + b[2] % 192]
}

pub fn object_to_ply(object: &MapObject) -> String {
    let [r, g, b] = object_color(object.id());
    let mut s = String::new();
    writeln!(s, "ply\nformat ascii 1.0\ncomment object {}", object.id()).unwrap();
    writeln!(s, "element vertex {}", object.points().len()).unwrap();
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for p in object.points() {
        writeln!(s, "{} {} {} {r} {g} {b}", p[0] as f32, p[1] as f32, p[2] as f32).unwrap();
    }
    s
}

/// Writes `object_<id>.ply` for every object and returns the paths.
pub fn export_map(map: &ObjectMap, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::with_capacity(map.len());
    for o in map.objects() {
        let path = dir.join(format!("object_{}.ply", o.id()));
        fs::write(&path, object_to_ply(o)).map_err(|e| Error::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}
