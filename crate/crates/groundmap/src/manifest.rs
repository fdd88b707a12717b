//! Per-command run manifests: config hash, inputs, stage timings and counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OTHER_STAGE: &str = "other";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub total_ms: f64,
    pub ms_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub frames: usize,
    pub wall_ms: f64,
    pub mean_ms_per_frame: f64,
    pub stage_timings: BTreeMap<String, StageTiming>,
    pub object_counts: BTreeMap<String, usize>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, "manifest", e))
    }

    /// Sum of all stage totals, including the residual stage.
    pub fn covered_ms(&self) -> f64 {
        self.stage_timings.values().map(|t| t.total_ms).sum()
    }
}

/// Accumulates named stage durations against one wall clock.
#[derive(Debug)]
pub struct StageClock {
    start: Instant,
    stages: BTreeMap<String, Duration>,
}

impl Default for StageClock {
    fn default() -> Self {
        Self::new()
    }
}

impl StageClock {
    pub fn new() -> Self {
        Self { start: Instant::now(), stages: BTreeMap::new() }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.stages.entry(stage.to_owned()).or_default() += t.elapsed();
        out
    }

    /// Closes the clock; time outside every named stage goes to [`OTHER_STAGE`].
    pub fn finish(self, frames: usize, manifest: &mut RunManifest) {
        let wall = self.start.elapsed();
        let named: Duration = self.stages.values().sum();
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        let per = |d: Duration| if frames == 0 { 0.0 } else { ms(d) / frames as f64 };
        manifest.frames = frames;
        manifest.wall_ms = ms(wall);
        manifest.mean_ms_per_frame = per(wall);
        manifest.stage_timings = self
            .stages
            .into_iter()
            .chain([(OTHER_STAGE.to_owned(), wall.saturating_sub(named))])
            .map(|(k, d)| (k, StageTiming { total_ms: ms(d), ms_per_frame: per(d) }))
            .collect();
    }
}
