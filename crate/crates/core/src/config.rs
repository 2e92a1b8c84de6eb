//! Run configuration: one TOML document holding every module's settings.
//!
//! Unknown keys are rejected. Missing keys take the desk-scale defaults
//! documented on each field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{FanetError, Result, NUM_LAYERS, STRIDES};

/// Trunk geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Square training/inference input side in pixels; multiple of 128. Default 256.
    pub input_size: usize,
    /// Width of the stride-2 stem conv. Default 16.
    pub stem_channels: usize,
    /// Output widths of the six detection stages. Default `[32, 64, 128, 128, 128, 128]`.
    pub stage_channels: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_size: 256,
            stem_channels: 16,
            stage_channels: vec![32, 64, 128, 128, 128, 128],
        }
    }
}

impl BackboneConfig {
    pub fn with_input_size(&self, input_size: usize) -> Self {
        BackboneConfig {
            input_size,
            ..self.clone()
        }
    }

    /// Feature-map side of each detection layer.
    pub fn grid_sizes(&self) -> [usize; NUM_LAYERS] {
        STRIDES.map(|s| self.input_size / s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % STRIDES[NUM_LAYERS - 1] != 0 {
            return Err(FanetError::config(
                "backbone.input_size",
                format!("{} is not a positive multiple of 128", self.input_size),
            ));
        }
        if self.stage_channels.len() != NUM_LAYERS {
            return Err(FanetError::config(
                "backbone.stage_channels",
                format!("expected {NUM_LAYERS} widths, got {}", self.stage_channels.len()),
            ));
        }
        if self.stem_channels == 0 || self.stage_channels.contains(&0) {
            return Err(FanetError::config("backbone.stage_channels", "widths must be positive"));
        }
        Ok(())
    }
}

/// Agglomeration block settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblockConfig {
    /// Output width X of the shallow branch and of the block. Must be a
    /// multiple of 4 (four equal context branches). Default 32 at desk scale;
    /// [`AblockConfig::full_width`] gives 256.
    pub context_channels: usize,
    /// Use the four-branch context module on the shallow input. When off,
    /// the shallow branch is only its 1x1 entry conv. Default true.
    pub use_context: bool,
}

impl Default for AblockConfig {
    fn default() -> Self {
        AblockConfig {
            context_channels: 32,
            use_context: true,
        }
    }
}

impl AblockConfig {
    /// Full-width block, X = 256.
    pub fn full_width() -> Self {
        AblockConfig {
            context_channels: 256,
            use_context: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_channels == 0 || self.context_channels % 4 != 0 {
            return Err(FanetError::config(
                "ablock.context_channels",
                format!("{} is not a positive multiple of 4", self.context_channels),
            ));
        }
        Ok(())
    }
}

/// Which neck strategy builds the feature hierarchy, and how deep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyConfig {
    /// Registered neck name: `fanet`, `ssd` or `fpn`. Default `fanet`.
    pub neck: String,
    /// Number of hierarchy levels m (1..=3). Default 3.
    pub levels: usize,
    /// Deepest layer agglomerated at the final level. Default 4.
    pub agglomerate_start_layer: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            neck: "fanet".into(),
            levels: 3,
            agglomerate_start_layer: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    /// Square anchor side per detection layer. Default `[16, 32, 64, 128, 256, 512]`.
    pub scales: Vec<f32>,
    /// Jaccard overlap above which an anchor is matched. Default 0.35.
    pub match_threshold: f32,
    /// Box-encoding variances (centre, size). Default `[0.1, 0.2]`.
    pub variances: [f32; 2],
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            scales: vec![16.0, 32.0, 64.0, 128.0, 256.0, 512.0],
            match_threshold: 0.35,
            variances: [0.1, 0.2],
        }
    }
}

/// Named or explicit per-level loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelWeights {
    Preset(WeightPreset),
    Explicit(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightPreset {
    /// Every level weighted 1.
    Uniform,
    /// Every level weighted 1/m.
    Inverse,
}

impl LevelWeights {
    pub fn resolve(&self, levels: usize) -> Result<Vec<f64>> {
        match self {
            LevelWeights::Preset(WeightPreset::Uniform) => Ok(vec![1.0; levels]),
            LevelWeights::Preset(WeightPreset::Inverse) => Ok(vec![1.0 / levels as f64; levels]),
            LevelWeights::Explicit(w) if w.len() == levels => Ok(w.clone()),
            LevelWeights::Explicit(w) => Err(FanetError::config(
                "loss.level_weights",
                format!("{} weights for {levels} levels", w.len()),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Classification weight in the multibox loss. Default 3.
    pub lambda: f64,
    /// Maximum mined negatives per positive. Default 3.
    pub neg_pos_ratio: usize,
    /// Per-level weights of the hierarchical loss. Default `"uniform"`.
    pub level_weights: LevelWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 3.0,
            neg_pos_ratio: 3,
            level_weights: LevelWeights::Preset(WeightPreset::Uniform),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Minimum face probability kept (exclusive). Default 0.05.
    pub score_threshold: f32,
    /// IoU above which a lower-scored box is suppressed. Default 0.3.
    pub nms_threshold: f32,
    /// Maximum detections per image. Default 400.
    pub top_k: usize,
    /// Shorter-side sizes for multi-scale testing. Default `[256, 307]`.
    pub scales: Vec<usize>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            score_threshold: 0.05,
            nms_threshold: 0.3,
            top_k: 400,
            scales: vec![256, 307],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrPhase {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Square crop side as a fraction of the short side, sampled in `[min_crop, max_crop]`.
    pub min_crop: f32,
    pub max_crop: f32,
    /// Horizontal flip probability. Default 0.5.
    pub flip_prob: f32,
    /// Maximum per-channel brightness offset and contrast deviation. Default 0.15.
    pub color_jitter: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            min_crop: 0.3,
            max_crop: 1.0,
            flip_prob: 0.5,
            color_jitter: 0.15,
        }
    }
}

impl AugmentConfig {
    /// Resize only: full crop, no flip, no colour change.
    pub fn identity() -> Self {
        AugmentConfig {
            min_crop: 1.0,
            max_crop: 1.0,
            flip_prob: 0.0,
            color_jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Consecutive `(epochs, lr)` phases.
    pub schedule: Vec<LrPhase>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Steps over which the learning rate ramps linearly from 0. Default 300.
    pub warmup_steps: usize,
    /// Supervise every hierarchy level (true) or only the last one.
    pub use_hl: bool,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // 4e-3 at batch 12, scaled linearly to batch 8; drops keep the 1/10, 1/100 ratios.
        let lr = 4e-3 * 8.0 / 12.0;
        TrainConfig {
            batch_size: 8,
            schedule: vec![
                LrPhase { epochs: 30, lr },
                LrPhase { epochs: 5, lr: lr / 10.0 },
                LrPhase { epochs: 5, lr: lr / 100.0 },
            ],
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_steps: 300,
            use_hl: true,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|p| p.epochs).sum()
    }
}

/// Synthetic data and size buckets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Side of generated images. Default 256.
    pub image_size: usize,
    pub min_faces: usize,
    pub max_faces: usize,
    /// Face sides are log-uniform in `[min_face, max_face]`. Default 4..128.
    pub min_face: f32,
    pub max_face: f32,
    /// Upper bound on non-face shapes per image. Default 6.
    pub max_distractors: usize,
    /// Faces smaller than this are "hard". Default 16 (twice the layer-2 stride).
    pub hard_below: f32,
    /// Faces smaller than this (and not hard) are "medium". Default 64 (twice the layer-4 stride).
    pub medium_below: f32,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            image_size: 256,
            min_faces: 1,
            max_faces: 8,
            min_face: 4.0,
            max_face: 128.0,
            max_distractors: 6,
            hard_below: 2.0 * STRIDES[1] as f32,
            medium_below: 2.0 * STRIDES[3] as f32,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backbone: BackboneConfig,
    pub ablock: AblockConfig,
    pub hierarchy: HierarchyConfig,
    pub anchors: AnchorConfig,
    pub loss: LossConfig,
    pub inference: InferenceConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| FanetError::ConfigParse(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn level_weights(&self) -> Result<Vec<f64>> {
        self.loss.level_weights.resolve(self.hierarchy.levels)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.ablock.validate()?;
        let h = &self.hierarchy;
        if !(1..=3).contains(&h.levels) {
            return Err(FanetError::config(
                "hierarchy.levels",
                format!("{} unsupported (1..=3)", h.levels),
            ));
        }
        if !(1..NUM_LAYERS).contains(&h.agglomerate_start_layer) {
            return Err(FanetError::config(
                "hierarchy.agglomerate_start_layer",
                format!("{} outside 1..={}", h.agglomerate_start_layer, NUM_LAYERS - 1),
            ));
        }
        let a = &self.anchors;
        if a.scales.len() != NUM_LAYERS || a.scales.iter().any(|&s| s <= 0.0) {
            return Err(FanetError::config("anchors.scales", "need six positive scales"));
        }
        if !(0.0..1.0).contains(&a.match_threshold) {
            return Err(FanetError::config("anchors.match_threshold", "must lie in [0, 1)"));
        }
        if a.variances.iter().any(|&v| v <= 0.0) {
            return Err(FanetError::config("anchors.variances", "must be positive"));
        }
        if self.loss.lambda < 0.0 {
            return Err(FanetError::config("loss.lambda", "must be non-negative"));
        }
        self.level_weights()?;
        let inf = &self.inference;
        if !(0.0..=1.0).contains(&inf.score_threshold) {
            return Err(FanetError::config("inference.score_threshold", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&inf.nms_threshold) {
            return Err(FanetError::config("inference.nms_threshold", "must lie in [0, 1]"));
        }
        if inf.top_k == 0 {
            return Err(FanetError::config("inference.top_k", "must be positive"));
        }
        if inf.scales.is_empty() || inf.scales.contains(&0) {
            return Err(FanetError::config("inference.scales", "need at least one positive size"));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(FanetError::config("train.batch_size", "must be positive"));
        }
        if t.schedule.is_empty() {
            return Err(FanetError::config("train.schedule", "must have at least one phase"));
        }
        if t.schedule.iter().any(|p| p.lr < 0.0 || !p.lr.is_finite()) {
            return Err(FanetError::config("train.schedule", "learning rates must be finite and >= 0"));
        }
        let aug = &t.augment;
        if !(0.0 < aug.min_crop && aug.min_crop <= aug.max_crop && aug.max_crop <= 1.0) {
            return Err(FanetError::config(
                "train.augment.min_crop",
                "need 0 < min_crop <= max_crop <= 1",
            ));
        }
        let d = &self.data;
        if d.image_size == 0 {
            return Err(FanetError::config("data.image_size", "must be positive"));
        }
        if d.min_faces == 0 || d.min_faces > d.max_faces {
            return Err(FanetError::config("data.min_faces", "need 1 <= min_faces <= max_faces"));
        }
        if !(d.min_face > 0.0 && d.min_face <= d.max_face && d.max_face <= d.image_size as f32) {
            return Err(FanetError::config(
                "data.min_face",
                "need 0 < min_face <= max_face <= image_size",
            ));
        }
        Ok(())
    }
}

/// toml errors are multi-line with a source excerpt; keep the first line
/// plus the offending key so the CLI can print a single machine-parsable line.
fn one_line(msg: &str) -> String {
    msg.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('|') && !l.chars().all(|c| c == '^' || c == ' '))
        .collect::<Vec<_>>()
        .join("; ")
}
