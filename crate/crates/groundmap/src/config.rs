//! Pipeline configuration, read from a single TOML file.

use std::path::Path;

use groundmap_core::ingest::FilterConfig;
use groundmap_core::object_map::AssociationConfig;
use groundmap_core::view_select::ViewConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub filter: FilterSection,
    pub association: AssociationSection,
    pub views: ViewSection,
    pub graph: GraphSection,
    pub reasoner: ReasonerSection,
    pub endpoint: EndpointSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub min_confidence: f64,
    pub min_mask_px: usize,
    pub max_mask_fraction: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub subsample_stride: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        let c = FilterConfig::default();
        Self {
            min_confidence: c.min_confidence,
            min_mask_px: c.min_mask_px,
            max_mask_fraction: c.max_mask_fraction,
            dbscan_eps: c.dbscan_eps,
            dbscan_min_pts: c.dbscan_min_pts,
            subsample_stride: c.subsample_stride,
        }
    }
}

impl FilterSection {
    pub fn to_core(&self) -> FilterConfig {
        FilterConfig {
            min_confidence: self.min_confidence,
            min_mask_px: self.min_mask_px,
            max_mask_fraction: self.max_mask_fraction,
            dbscan_eps: self.dbscan_eps,
            dbscan_min_pts: self.dbscan_min_pts,
            subsample_stride: self.subsample_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationSection {
    pub sigma_vis: f64,
    pub w_new: f64,
    pub merge_period: u32,
    pub sigma_vis_merge: f64,
    pub overlap_thr: f64,
    pub overlap_radius: f64,
    pub aabb_inflate: f64,
    pub post_min_points: usize,
    pub post_min_detections: u32,
    pub post_max_extent: f64,
    /// 0 disables the cap.
    pub max_object_points: usize,
    pub downsample_voxel: f64,
}

impl Default for AssociationSection {
    fn default() -> Self {
        let c = AssociationConfig::default();
        Self {
            sigma_vis: c.sigma_vis,
            w_new: c.w_new,
            merge_period: c.merge_period,
            sigma_vis_merge: c.sigma_vis_merge,
            overlap_thr: c.overlap_thr,
            overlap_radius: c.overlap_radius,
            aabb_inflate: c.aabb_inflate,
            post_min_points: c.post_min_points,
            post_min_detections: c.post_min_detections,
            post_max_extent: c.post_max_extent,
            max_object_points: c.max_object_points.unwrap_or(0),
            downsample_voxel: c.downsample_voxel,
        }
    }
}

impl AssociationSection {
    pub fn to_core(&self) -> AssociationConfig {
        AssociationConfig {
            sigma_vis: self.sigma_vis,
            w_new: self.w_new,
            merge_period: self.merge_period,
            sigma_vis_merge: self.sigma_vis_merge,
            overlap_thr: self.overlap_thr,
            overlap_radius: self.overlap_radius,
            aabb_inflate: self.aabb_inflate,
            post_min_points: self.post_min_points,
            post_min_detections: self.post_min_detections,
            post_max_extent: self.post_max_extent,
            max_object_points: (self.max_object_points > 0).then_some(self.max_object_points),
            downsample_voxel: self.downsample_voxel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSection {
    pub num_views: usize,
    pub splat_radius_px: usize,
    pub tau_occ: f64,
    pub crop_padding_px: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
    pub occlusion_test: bool,
}

impl Default for ViewSection {
    fn default() -> Self {
        let c = ViewConfig::default();
        Self {
            num_views: c.num_views,
            splat_radius_px: c.splat_radius_px,
            tau_occ: c.tau_occ,
            crop_padding_px: c.crop_padding_px,
            kmeans_iterations: c.kmeans_iterations,
            seed: c.seed,
            occlusion_test: c.occlusion_test,
        }
    }
}

impl ViewSection {
    pub fn to_core(&self) -> ViewConfig {
        ViewConfig {
            num_views: self.num_views,
            splat_radius_px: self.splat_radius_px,
            tau_occ: self.tau_occ,
            crop_padding_px: self.crop_padding_px,
            kmeans_iterations: self.kmeans_iterations,
            seed: self.seed,
            occlusion_test: self.occlusion_test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Replaces the room center height with the mean camera height.
    pub use_camera_height: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerSection {
    pub prompt_version: String,
    pub stage_one_system: String,
    pub stage_one_user: String,
    pub stage_two_system: String,
    pub stage_two_user: String,
    pub repair_system: String,
    pub repair_user: String,
    pub max_tokens: u32,
    pub metric_edges: bool,
    pub semantic_edges: bool,
}

pub const STAGE_ONE_SYSTEM: &str = "You select objects in a 3D scene from their descriptions. \
Given a user query and a list of objects with ids and captions, return the ids of the objects the query \
refers to as targets and the ids of the reference objects it mentions as anchors. Answer with strict JSON \
only, in the form {\"target_ids\": [int], \"anchor_ids\": [int]}.";

pub const STAGE_ONE_USER: &str = "Query and scene objects:\n{payload}";

pub const STAGE_TWO_SYSTEM: &str = "You ground a user query in a 3D scene. Each object has an id, a caption, \
a bounding box center and extent in meters, and target objects list their spatial relations to the anchors. \
Pick the single object the query refers to. Answer with strict JSON only, in the form {\"final_object_id\": int}.";

pub const STAGE_TWO_USER: &str = "Query and relevant objects:\n{payload}";

pub const REPAIR_SYSTEM: &str = "You convert text into strict JSON matching a schema. Answer with the JSON object only.";

pub const REPAIR_USER: &str = "Schema and text to convert:\n{payload}";

impl Default for ReasonerSection {
    fn default() -> Self {
        Self {
            prompt_version: "v1".into(),
            stage_one_system: STAGE_ONE_SYSTEM.into(),
            stage_one_user: STAGE_ONE_USER.into(),
            stage_two_system: STAGE_TWO_SYSTEM.into(),
            stage_two_user: STAGE_TWO_USER.into(),
            repair_system: REPAIR_SYSTEM.into(),
            repair_user: REPAIR_USER.into(),
            max_tokens: 512,
            metric_edges: true,
            semantic_edges: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointSection {
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub base_url_env: String,
    pub model_env: String,
    pub api_key_env: String,
}

impl Default for EndpointSection {
    fn default() -> Self {
        Self {
            timeout_ms: 60_000,
            retries: 3,
            backoff_ms: 500,
            base_url_env: "GROUNDMAP_LLM_BASE_URL".into(),
            model_env: "GROUNDMAP_LLM_MODEL".into(),
            api_key_env: "GROUNDMAP_LLM_API_KEY".into(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        let core = |section: &str, e: groundmap_core::Error| Error::Config(format!("[{section}] {e}"));
        self.filter.to_core().validate().map_err(|e| core("filter", e))?;
        self.association.to_core().validate().map_err(|e| core("association", e))?;
        self.views.to_core().validate().map_err(|e| core("views", e))?;
        let r = &self.reasoner;
        for (name, t) in [("stage_one_user", &r.stage_one_user), ("stage_two_user", &r.stage_two_user), ("repair_user", &r.repair_user)] {
            if !t.contains("{payload}") {
                return Err(Error::Config(format!("[reasoner] {name} must contain {{payload}}")));
            }
        }
        if r.max_tokens == 0 {
            return Err(Error::Config("[reasoner] max_tokens must be positive".into()));
        }
        if self.endpoint.retries > 10 {
            return Err(Error::Config("[endpoint] retries must be at most 10".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
