//! TOML configuration with defaults and up-front validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pillars::BevGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub data: DataConfig,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: BevGrid,
    pub z_min: f64,
    pub z_max: f64,
    pub max_points_per_pillar: usize,
    pub num_classes: usize,
    pub num_cameras: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub image_channels_stem: usize,
    pub image_channels: usize,
    pub embed_dim: usize,
    pub query_height: usize,
    pub query_width: usize,
    pub ff_hidden: usize,
    pub camera_bev_channels: usize,
    pub pillar_channels: usize,
    pub lidar_channels: usize,
    pub fused_channels: usize,
    pub head_channels: usize,
    pub refine_hidden: usize,
    pub heatmap_bias: f64,
    /// Drop the LiDAR branch and fuse the camera map alone.
    pub camera_only: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid: BevGrid::default(),
            z_min: -3.0,
            z_max: 3.0,
            max_points_per_pillar: 32,
            num_classes: 1,
            num_cameras: 2,
            image_height: 64,
            image_width: 48,
            image_channels_stem: 16,
            image_channels: 32,
            embed_dim: 32,
            query_height: 16,
            query_width: 16,
            ff_hidden: 64,
            camera_bev_channels: 32,
            pillar_channels: 32,
            lidar_channels: 32,
            fused_channels: 32,
            head_channels: 32,
            refine_hidden: 64,
            heatmap_bias: -2.19,
            camera_only: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub momentum_base: f64,
    pub momentum_max: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub pct_start: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub reg_weight: f64,
    pub stage2_weight: f64,
    /// Stage-one detections used as refinement proposals during training.
    pub proposals: usize,
    pub proposal_threshold: f64,
    /// Center distance within which a proposal is assigned to a ground truth.
    pub proposal_match_radius: f64,
    /// Keep camera-branch parameters fixed.
    pub freeze_cvt: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 0.001,
            momentum_base: 0.85,
            momentum_max: 0.95,
            div_factor: 25.0,
            final_div_factor: 1e4,
            pct_start: 0.4,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            epochs: 15,
            seed: 0,
            reg_weight: 0.25,
            stage2_weight: 1.0,
            proposals: 16,
            proposal_threshold: 0.1,
            proposal_match_radius: 2.0,
            freeze_cvt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub threshold: f64,
    pub top_k: usize,
    pub nms_iou: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { threshold: 0.35, top_k: 100, nms_iou: 0.2 }
    }
}

/// Synthetic scene generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub length: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
    pub points_per_box: usize,
    pub ground_points: usize,
    pub ground_noise: f64,
    /// Keep boxes at least this far (meters) from the ego origin.
    pub min_range: f64,
    /// Keep box centers at least this far (meters) inside the grid edge.
    pub edge_margin: f64,
    pub focal: f64,
    pub max_overlap_iou: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            min_boxes: 1,
            max_boxes: 6,
            length: [3.5, 5.0],
            width: [1.6, 2.1],
            height: [1.4, 1.8],
            points_per_box: 200,
            ground_points: 1500,
            ground_noise: 0.02,
            min_range: 5.0,
            edge_margin: 3.0,
            focal: 16.0,
            max_overlap_iou: 0.05,
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn range_ok(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && 0.0 < r[0] && r[0] <= r[1]
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let (h, w) = (self.grid.rows(), self.grid.cols());
        check(self.z_min < self.z_max, || format!("z range [{}, {}] is empty", self.z_min, self.z_max))?;
        check(self.max_points_per_pillar > 0, || "max_points_per_pillar must be positive".into())?;
        check(self.num_classes > 0, || "num_classes must be positive".into())?;
        check((1..=6).contains(&self.num_cameras), || format!("num_cameras {} outside 1..=6", self.num_cameras))?;
        check(self.image_height.is_multiple_of(8) && self.image_width.is_multiple_of(8) && self.image_height > 0 && self.image_width > 0, || {
            format!("image size {}×{} must be a positive multiple of 8", self.image_height, self.image_width)
        })?;
        let widths = [
            self.image_channels_stem,
            self.image_channels,
            self.embed_dim,
            self.ff_hidden,
            self.camera_bev_channels,
            self.pillar_channels,
            self.lidar_channels,
            self.fused_channels,
            self.head_channels,
            self.refine_hidden,
        ];
        check(widths.iter().all(|&c| c > 0), || "all channel widths must be positive".into())?;
        check(self.image_channels == self.embed_dim, || {
            format!("image_channels {} must equal embed_dim {}", self.image_channels, self.embed_dim)
        })?;
        check(self.query_height > 0 && self.query_width > 0, || "query grid must be non-empty".into())?;
        let ratio_ok = |big: usize, small: usize| big.is_multiple_of(small) && (big / small).is_power_of_two();
        check(ratio_ok(h, self.query_height) && ratio_ok(w, self.query_width), || {
            format!("BEV grid {h}×{w} is not a power-of-two multiple of the query grid {}×{}", self.query_height, self.query_width)
        })?;
        check(h / self.query_height == w / self.query_width, || "query grid must upsample equally along both axes".into())?;
        check(h % 2 == 0 && w % 2 == 0, || "BEV grid dimensions must be even".into())?;
        check(self.heatmap_bias.is_finite(), || "heatmap_bias must be finite".into())?;
        Ok(())
    }

    pub fn upsample_blocks(&self) -> usize {
        (self.grid.rows() / self.query_height).trailing_zeros() as usize
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.lr_max > 0.0 && self.lr_max.is_finite(), || format!("lr_max {} must be positive", self.lr_max))?;
        check(0.0 <= self.momentum_base && self.momentum_base <= self.momentum_max && self.momentum_max < 1.0, || {
            format!("momenta {}/{} must satisfy 0 <= base <= max < 1", self.momentum_base, self.momentum_max)
        })?;
        check(self.div_factor >= 1.0 && self.final_div_factor >= 1.0, || "div factors must be >= 1".into())?;
        check((0.0..=1.0).contains(&self.pct_start), || "pct_start must lie in [0, 1]".into())?;
        check((0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0, || "beta2 in [0, 1) and epsilon > 0 required".into())?;
        check(self.batch_size > 0 && self.epochs > 0, || "batch_size and epochs must be positive".into())?;
        check(self.reg_weight >= 0.0 && self.stage2_weight >= 0.0, || "loss weights must be non-negative".into())?;
        check((0.0..=1.0).contains(&self.proposal_threshold), || "proposal_threshold must lie in [0, 1]".into())?;
        check(self.proposal_match_radius > 0.0, || "proposal_match_radius must be positive".into())?;
        Ok(())
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        check((0.0..=1.0).contains(&self.threshold), || format!("threshold {} outside [0, 1]", self.threshold))?;
        check((0.0..=1.0).contains(&self.nms_iou), || format!("nms_iou {} outside [0, 1]", self.nms_iou))?;
        check(self.top_k > 0, || "top_k must be positive".into())?;
        Ok(())
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.min_boxes <= self.max_boxes, || "min_boxes exceeds max_boxes".into())?;
        check(range_ok(self.length) && range_ok(self.width) && range_ok(self.height), || "box size ranges must be positive and ordered".into())?;
        check(self.ground_noise >= 0.0 && self.min_range >= 0.0 && self.edge_margin >= 0.0, || "noise and margins must be non-negative".into())?;
        check(self.focal > 0.0, || "focal must be positive".into())?;
        check((0.0..=1.0).contains(&self.max_overlap_iou), || "max_overlap_iou must lie in [0, 1]".into())?;
        Ok(())
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.infer.validate()?;
        self.data.validate()?;
        let g = &self.model.grid;
        let half = ((g.x_max - g.x_min).min(g.y_max - g.y_min)) / 2.0;
        check(self.data.edge_margin < half, || format!("edge_margin {} leaves no room inside the grid", self.data.edge_margin))?;
        Ok(())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            Error::parse(origin, line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        assert_eq!(Config::from_toml(&text, "mem").unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = Config::from_toml("[train]\nepochs = 3\n", "mem").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr_max, 0.001);
        assert_eq!(cfg.infer.threshold, 0.35);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        for text in [
            "[model]\nquery_height = 12\n",
            "[model]\nimage_height = 60\n",
            "[train]\nmomentum_base = 0.99\n",
            "[infer]\nthreshold = 1.5\n",
            "[model]\nembed_dim = 16\n",
            "[model.grid]\ncell = 0.7\n",
        ] {
            let err = Config::from_toml(text, "mem").unwrap_err();
            assert_eq!(err.category(), "config", "{text}: {err}");
        }
        let err = Config::from_toml("[train]\nepochs = \"x\"\n", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(Config::from_toml("[model]\nbogus = 1\n", "mem").is_err());
    }
}
