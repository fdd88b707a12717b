//! Posed RGB-D sequences: one JSON file with intrinsics and per-frame poses,
//! depth as 16-bit PNG in millimeters, optional 8-bit RGB PNG.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use groundmap_core::camera::{CameraIntrinsics, DepthImage, Frame, Pose};
use groundmap_core::mask::PixelRect;
use groundmap_core::scene_graph::RgbCrop;
use groundmap_core::view_select::ViewSource;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEPTH_UNITS_PER_METER: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub index: u32,
    /// Row-major `[R | t]`, camera to world.
    pub pose: [f64; 12],
    /// Relative to the sequence file.
    pub depth_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceFile {
    pub intrinsics: IntrinsicsRecord,
    pub frames: Vec<FrameEntry>,
}

/// A parsed and validated sequence; images are read on demand.
#[derive(Debug)]
pub struct Sequence {
    path: PathBuf,
    base: PathBuf,
    intrinsics: CameraIntrinsics,
    entries: BTreeMap<u32, (FrameEntry, Pose)>,
    depth_cache: Mutex<Option<(u32, DepthImage)>>,
}

impl Sequence {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SequenceFile = serde_json::from_str(&text).map_err(|e| Error::schema(path, "sequence", e))?;
        Self::from_file(path, file)
    }

    pub fn from_file(path: &Path, file: SequenceFile) -> Result<Self> {
        let k = file.intrinsics;
        let intrinsics =
            CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height).map_err(|e| Error::schema(path, "intrinsics", e))?;
        let mut entries = BTreeMap::new();
        for (i, f) in file.frames.into_iter().enumerate() {
            let pose = Pose::from_row_major(&f.pose).map_err(|e| Error::schema(path, format!("frames[{i}].pose"), e))?;
            let index = f.index;
            if entries.insert(index, (f, pose)).is_some() {
                return Err(Error::schema(path, format!("frames[{i}].index"), format!("duplicate frame index {index}")));
            }
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { path: path.to_path_buf(), base, intrinsics, entries, depth_cache: Mutex::new(None) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frame_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn pose(&self, index: u32) -> Option<Pose> {
        self.entries.get(&index).map(|e| e.1)
    }

    pub fn load_depth(&self, index: u32) -> Result<DepthImage> {
        let (entry, _) = self.entry(index)?;
        let path = self.base.join(&entry.depth_path);
        let depth = read_depth_png(&path)?;
        if depth.width() != self.intrinsics.width || depth.height() != self.intrinsics.height {
            return Err(Error::schema(&path, "resolution", "depth size differs from the intrinsics"));
        }
        Ok(depth)
    }

    pub fn load_rgb(&self, index: u32) -> Result<Option<RgbImage>> {
        let (entry, _) = self.entry(index)?;
        let Some(rel) = &entry.rgb_path else { return Ok(None) };
        let path = self.base.join(rel);
        let img = read_rgb_png(&path)?;
        if img.width != self.intrinsics.width || img.height != self.intrinsics.height {
            return Err(Error::schema(&path, "resolution", "rgb size differs from the intrinsics"));
        }
        Ok(Some(img))
    }

    pub fn load_frame(&self, index: u32) -> Result<Frame> {
        let (_, pose) = self.entry(index)?;
        let depth = self.load_depth(index)?;
        let mut frame = Frame::new(index, depth, *pose, self.intrinsics).map_err(|source| Error::Frame { frame: index, source })?;
        frame.rgb = self.load_rgb(index)?.map(|i| i.pixels);
        Ok(frame)
    }

    fn entry(&self, index: u32) -> Result<&(FrameEntry, Pose)> {
        self.entries.get(&index).ok_or_else(|| Error::schema(&self.path, "frames", format!("no frame with index {index}")))
    }
}

impl ViewSource for Sequence {
    fn camera(&self, frame_index: u32) -> Option<(Pose, CameraIntrinsics)> {
        self.pose(frame_index).map(|p| (p, self.intrinsics))
    }

    fn depth(&self, frame_index: u32) -> Option<Cow<'_, DepthImage>> {
        let mut cache = self.depth_cache.lock().expect("depth cache lock");
        if let Some((i, d)) = cache.as_ref() {
            if *i == frame_index {
                return Some(Cow::Owned(d.clone()));
            }
        }
        match self.load_depth(frame_index) {
            Ok(d) => {
                *cache = Some((frame_index, d.clone()));
                Some(Cow::Owned(d))
            }
            Err(e) => {
                log::warn!("frame {frame_index}: depth unavailable for the occlusion test: {e}");
                None
            }
        }
    }
}

/// Interleaved RGB8.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn crop(&self, rect: PixelRect) -> RgbCrop {
        let (w, h) = (rect.width(), rect.height());
        let mut pixels = Vec::with_capacity(w * h * 3);
        for y in rect.y0..=rect.y1 {
            let row = (y * self.width + rect.x0) * 3;
            pixels.extend_from_slice(&self.pixels[row..row + w * 3]);
        }
        RgbCrop { width: w, height: h, pixels }
    }
}

fn open_png(path: &Path) -> Result<png::Decoder<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(png::Decoder::new(BufReader::new(file)))
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage> {
    let mut decoder = open_png(path)?;
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::schema(path, "png", e))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Sixteen {
        return Err(Error::schema(path, "png", format!("expected 16-bit grayscale, found {color:?} {depth:?}")));
    }
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::schema(path, "png", "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::schema(path, "png", e))?;
    let raw: Vec<u16> = buf[..info.buffer_size()].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    DepthImage::from_u16(info.width as usize, info.height as usize, &raw, DEPTH_UNITS_PER_METER).map_err(|e| Error::schema(path, "png", e))
}

pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<()> {
    let raw: Vec<u8> = depth
        .as_slice()
        .iter()
        .flat_map(|&m| ((m as f64 * DEPTH_UNITS_PER_METER).round().clamp(0.0, u16::MAX as f64) as u16).to_be_bytes())
        .collect();
    write_png(path, depth.width(), depth.height(), png::ColorType::Grayscale, png::BitDepth::Sixteen, &raw)
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let mut decoder = open_png(path)?;
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::schema(path, "png", e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::schema(path, "png", "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::schema(path, "png", e))?;
    let data = &buf[..info.buffer_size()];
    let pixels: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::schema(path, "png", "palette images are not expanded")),
    };
    Ok(RgbImage { width: info.width as usize, height: info.height as usize, pixels })
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Rgb, png::BitDepth::Eight, pixels)
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| Error::schema(path, "png", e))?;
    writer.write_image_data(data).map_err(|e| Error::schema(path, "png", e))?;
    writer.finish().map_err(|e| Error::schema(path, "png", e))
}

pub fn write_sequence(path: &Path, file: &SequenceFile) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(file).expect("sequence serializes")).map_err(|e| Error::io(path, e))
}
