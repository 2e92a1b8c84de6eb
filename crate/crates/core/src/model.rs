//! The full detector: trunk, neck and one prediction head per
//! `(level, layer)`.

use std::fmt;
use std::path::Path;

use fanet_tensor::ops::narrow_channels;
use fanet_tensor::{load_checkpoint, save_checkpoint, ParamStore, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agglomeration::FeatureHierarchy;
use crate::backbone::Backbone;
use crate::config::RunConfig;
use crate::neck::{Neck, NeckContext, NeckRegistry};
use crate::nn::Conv;
use crate::{FanetError, Result, NUM_LAYERS};

/// Head output channels: 2 class logits then 4 box offsets.
pub const HEAD_CHANNELS: usize = 6;

/// Per-layer head outputs of one level.
pub struct LevelPredictions<T: Scalar> {
    /// `[N, 2, H, W]` per layer; channel 0 is background.
    pub cls: Vec<Tensor<T>>,
    /// `[N, 4, H, W]` per layer.
    pub loc: Vec<Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadLevels {
    /// Every level (hierarchical loss).
    All,
    /// Only the top level (single loss, inference).
    Top,
}

pub struct ModelOutput<T: Scalar> {
    pub hierarchy: FeatureHierarchy<T>,
    /// Indexed by level; `None` where heads were not run.
    pub predictions: Vec<Option<LevelPredictions<T>>>,
}

impl<T: Scalar> ModelOutput<T> {
    pub fn top(&self) -> &LevelPredictions<T> {
        self.predictions.last().and_then(Option::as_ref).expect("top level heads always run")
    }
}

pub struct Detector<T: Scalar = f32> {
    config: RunConfig,
    params: ParamStore<T>,
    backbone: Backbone<T>,
    neck: Box<dyn Neck<T>>,
    heads: Vec<Vec<Conv<T>>>,
}

impl<T: Scalar> Detector<T> {
    pub fn new(config: &RunConfig, seed: u64) -> Result<Self> {
        Self::with_registry(config, seed, &NeckRegistry::builtin())
    }

    pub fn with_registry(config: &RunConfig, seed: u64, registry: &NeckRegistry<T>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&config.backbone, &mut params, &mut rng)?;
        let ctx = NeckContext {
            trunk_channels: config.backbone.stage_channels.clone(),
            ablock: config.ablock.clone(),
            hierarchy: config.hierarchy.clone(),
        };
        let neck = registry.build(&config.hierarchy.neck, &ctx, &mut params, &mut rng)?;
        let channels = neck.channels();
        let mut heads = Vec::with_capacity(channels.len());
        for (k, row) in channels.iter().enumerate() {
            let mut level = Vec::with_capacity(NUM_LAYERS);
            for (l, &c) in row.iter().enumerate() {
                let name = format!("head.level{}.layer{}", k + 1, l + 1);
                level.push(Conv::with_gain(&mut params, &name, c, HEAD_CHANNELS, (3, 3), 1.0, &mut rng)?);
            }
            heads.push(level);
        }
        Ok(Detector {
            config: config.clone(),
            params,
            backbone,
            neck,
            heads,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn neck(&self) -> &dyn Neck<T> {
        self.neck.as_ref()
    }

    pub fn levels(&self) -> usize {
        self.heads.len()
    }

    /// Head convs of one level, per layer.
    pub fn heads(&self, level: usize) -> &[Conv<T>] {
        &self.heads[level]
    }

    /// Hierarchy for a square batch `[N, 3, S, S]`; `S` may differ from the
    /// training size as long as it is a multiple of 128.
    pub fn hierarchy(&self, images: &Tensor<T>) -> Result<FeatureHierarchy<T>> {
        let size = images.shape().get(2).copied().unwrap_or(0);
        let trunk = self.backbone.forward_any_size(images, size)?;
        self.neck.forward(trunk)
    }

    pub fn predict_level(&self, hierarchy: &FeatureHierarchy<T>, level: usize) -> Result<LevelPredictions<T>> {
        let mut cls = Vec::with_capacity(NUM_LAYERS);
        let mut loc = Vec::with_capacity(NUM_LAYERS);
        for (head, map) in self.heads[level].iter().zip(hierarchy.level(level)) {
            let out = head.forward(map)?;
            cls.push(narrow_channels(&out, 0, 2)?);
            loc.push(narrow_channels(&out, 2, 4)?);
        }
        Ok(LevelPredictions { cls, loc })
    }

    pub fn forward(&self, images: &Tensor<T>, which: HeadLevels) -> Result<ModelOutput<T>> {
        let hierarchy = self.hierarchy(images)?;
        let top = self.levels() - 1;
        let predictions = (0..self.levels())
            .map(|k| match which {
                HeadLevels::All => self.predict_level(&hierarchy, k).map(Some),
                HeadLevels::Top if k == top => self.predict_level(&hierarchy, k).map(Some),
                HeadLevels::Top => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelOutput { hierarchy, predictions })
    }

    pub fn param_report(&self) -> ParamReport {
        let top = self.levels() - 1;
        let heads = |keep: &dyn Fn(usize) -> bool| -> usize {
            self.heads
                .iter()
                .enumerate()
                .filter(|(k, _)| keep(*k))
                .flat_map(|(_, row)| row.iter().map(Conv::numel))
                .sum()
        };
        ParamReport {
            backbone: self.backbone.numel(),
            neck: self.neck.numel(),
            heads_inference: heads(&|k| k == top),
            heads_training_only: heads(&|k| k != top),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(save_checkpoint(path, &self.params)?)
    }

    /// Build from `config` and overwrite every parameter from a checkpoint.
    pub fn load(config: &RunConfig, path: impl AsRef<Path>) -> Result<Self> {
        let model = Self::new(config, 0)?;
        load_checkpoint(path.as_ref(), &model.params).map_err(|e| match e {
            fanet_tensor::TensorError::Io(io) => FanetError::Io(io),
            other => FanetError::Tensor(other),
        })?;
        Ok(model)
    }
}

/// Scalar parameter counts by module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub backbone: usize,
    pub neck: usize,
    pub heads_inference: usize,
    /// Heads on levels below the top, used only by the hierarchical loss.
    pub heads_training_only: usize,
}

impl ParamReport {
    /// Parameters used at test time.
    pub fn inference(&self) -> usize {
        self.backbone + self.neck + self.heads_inference
    }

    pub fn total(&self) -> usize {
        self.inference() + self.heads_training_only
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "backbone             {:>10}", self.backbone)?;
        writeln!(f, "neck                 {:>10}", self.neck)?;
        writeln!(f, "heads (inference)    {:>10}", self.heads_inference)?;
        writeln!(f, "heads (training)     {:>10}", self.heads_training_only)?;
        writeln!(f, "inference total      {:>10}", self.inference())?;
        write!(f, "training total       {:>10}", self.total())
    }
}
