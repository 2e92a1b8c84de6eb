//! A-blocks and the level-by-level feature hierarchy.
//!
//! Layers and levels are 0-based in code: layer 0 is the stride-4 map,
//! level 0 is the trunk output.

use fanet_tensor::ops::{cat_channels, concat_channels, upsample_bilinear2x};
use fanet_tensor::{ParamStore, Scalar, Tensor};
use rand::Rng;

use crate::config::{AblockConfig, HierarchyConfig};
use crate::nn::Conv;
use crate::{FanetError, Result, NUM_LAYERS};

/// Channel reduction of the deep branch.
pub const DEEP_REDUCE_DIVISOR: usize = 8;
/// Deepest supported hierarchy.
pub const MAX_LEVELS: usize = 3;

/// Which `(layer, level)` slots are computed by an A-block and which alias
/// the slot one level below.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HierarchySpec {
    pub levels: usize,
    /// 1-based layer index at which agglomeration starts counting down.
    pub agglomerate_start_layer: usize,
    pub layers: usize,
}

impl HierarchySpec {
    pub fn new(levels: usize, agglomerate_start_layer: usize) -> Result<Self> {
        if levels == 0 || levels > MAX_LEVELS {
            return Err(FanetError::config(
                "hierarchy.levels",
                format!("{levels} levels requested, supported range is 1..={MAX_LEVELS}"),
            ));
        }
        if agglomerate_start_layer == 0 || agglomerate_start_layer >= NUM_LAYERS {
            return Err(FanetError::config(
                "hierarchy.agglomerate_start_layer",
                format!("must be in 1..{NUM_LAYERS}, got {agglomerate_start_layer}"),
            ));
        }
        Ok(HierarchySpec {
            levels,
            agglomerate_start_layer,
            layers: NUM_LAYERS,
        })
    }

    pub fn from_config(cfg: &HierarchyConfig) -> Result<Self> {
        Self::new(cfg.levels, cfg.agglomerate_start_layer)
    }

    /// Number of computed slots at `level` (they are layers `0..count`).
    ///
    /// The top level computes the first `agglomerate_start_layer` layers and
    /// every level below it one more, so each layer's final feature comes
    /// from the highest level that still agglomerates it.
    pub fn computed_layers(&self, level: usize) -> usize {
        if level == 0 {
            return self.layers;
        }
        if level >= self.levels {
            return 0;
        }
        (self.agglomerate_start_layer + (self.levels - 1 - level)).min(self.layers - 1)
    }

    pub fn computes(&self, layer: usize, level: usize) -> bool {
        level > 0 && layer < self.computed_layers(level)
    }

    /// Channel count of every slot, `[level][layer]`.
    pub fn channels(&self, trunk: &[usize], x: usize) -> Vec<Vec<usize>> {
        let mut out = vec![trunk.to_vec()];
        for k in 1..self.levels {
            let row = (0..self.layers)
                .map(|l| if self.computes(l, k) { x } else { out[k - 1][l] })
                .collect();
            out.push(row);
        }
        out
    }
}

/// Inception-style enhancer: a 1x1 entry conv to X channels followed by
/// 1x1, 1x3, 3x1 and 3x3 branches of X/4 channels each. Without context
/// only the entry conv runs.
pub struct ContextModule<T: Scalar> {
    entry: Conv<T>,
    branches: Option<[Conv<T>; 4]>,
}

impl<T: Scalar> ContextModule<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        cfg: &AblockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let x = cfg.context_channels;
        let entry = Conv::new(store, &format!("{name}.entry"), in_channels, x, (1, 1), rng)?;
        let branches = if cfg.use_context {
            let mut make = |tag: &str, k| Conv::new(store, &format!("{name}.branch{tag}"), x, x / 4, k, rng);
            Some([make("1x1", (1, 1))?, make("1x3", (1, 3))?, make("3x1", (3, 1))?, make("3x3", (3, 3))?])
        } else {
            None
        };
        Ok(ContextModule { entry, branches })
    }

    pub fn out_channels(&self) -> usize {
        self.entry.out_channels()
    }

    pub fn numel(&self) -> usize {
        self.entry.numel() + self.branches.iter().flatten().map(Conv::numel).sum::<usize>()
    }

    pub fn forward(&self, shallow: &Tensor<T>) -> Result<Tensor<T>> {
        let e = self.entry.forward_relu(shallow)?;
        match &self.branches {
            None => Ok(e),
            Some(branches) => {
                let outs = branches.iter().map(|b| b.forward_relu(&e)).collect::<Result<Vec<_>>>()?;
                Ok(cat_channels(&outs)?)
            }
        }
    }
}

/// Fuses a shallow map with the adjacent deeper map (half resolution).
pub struct ABlock<T: Scalar> {
    context: ContextModule<T>,
    reduce: Conv<T>,
    smooth: Conv<T>,
}

impl<T: Scalar> ABlock<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        shallow_channels: usize,
        deep_channels: usize,
        cfg: &AblockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if deep_channels % DEEP_REDUCE_DIVISOR != 0 {
            return Err(FanetError::config(
                "backbone.stage_channels",
                format!("deep input of {name} has {deep_channels} channels, not divisible by {DEEP_REDUCE_DIVISOR}"),
            ));
        }
        let reduced = deep_channels / DEEP_REDUCE_DIVISOR;
        let context = ContextModule::new(store, &format!("{name}.context"), shallow_channels, cfg, rng)?;
        let reduce = Conv::new(store, &format!("{name}.reduce"), deep_channels, reduced, (1, 1), rng)?;
        let x = cfg.context_channels;
        let smooth = Conv::new(store, &format!("{name}.smooth"), x + reduced, x, (3, 3), rng)?;
        Ok(ABlock { context, reduce, smooth })
    }

    pub fn numel(&self) -> usize {
        self.context.numel() + self.reduce.numel() + self.smooth.numel()
    }

    /// Channel count of the concatenation fed to the smooth conv.
    pub fn concat_channels(&self) -> usize {
        self.context.out_channels() + self.reduce.out_channels()
    }

    /// The pre-smooth concatenation.
    pub fn fuse(&self, shallow: &Tensor<T>, deep: &Tensor<T>) -> Result<Tensor<T>> {
        let (s, d) = (shallow.shape(), deep.shape());
        if s.len() != 4 || d.len() != 4 || s[2] != 2 * d[2] || s[3] != 2 * d[3] {
            return Err(FanetError::config(
                "hierarchy",
                format!("a_block needs a deep map at half the shallow resolution, got shallow {s:?} and deep {d:?}"),
            ));
        }
        let c = self.context.forward(shallow)?;
        let r = upsample_bilinear2x(&self.reduce.forward_relu(deep)?)?;
        Ok(concat_channels(&c, &r)?)
    }

    pub fn forward(&self, shallow: &Tensor<T>, deep: &Tensor<T>) -> Result<Tensor<T>> {
        self.smooth.forward_relu(&self.fuse(shallow, deep)?)
    }
}

/// Feature maps `[level][layer]`. Aliased slots hold a clone of the handle
/// one level below, so they share storage.
pub struct FeatureHierarchy<T: Scalar> {
    maps: Vec<Vec<Tensor<T>>>,
    origin: Vec<Vec<usize>>,
}

impl<T: Scalar> FeatureHierarchy<T> {
    pub fn from_trunk(level0: Vec<Tensor<T>>) -> Self {
        let n = level0.len();
        FeatureHierarchy {
            maps: vec![level0],
            origin: vec![vec![0; n]],
        }
    }

    /// Append a level; `None` slots alias the level below.
    pub fn push_level(&mut self, slots: Vec<Option<Tensor<T>>>) {
        let k = self.maps.len();
        let below = &self.maps[k - 1];
        let mut maps = Vec::with_capacity(slots.len());
        let mut origin = Vec::with_capacity(slots.len());
        for (l, slot) in slots.into_iter().enumerate() {
            match slot {
                Some(t) => {
                    maps.push(t);
                    origin.push(k);
                }
                None => {
                    maps.push(below[l].clone());
                    origin.push(self.origin[k - 1][l]);
                }
            }
        }
        self.maps.push(maps);
        self.origin.push(origin);
    }

    pub fn levels(&self) -> usize {
        self.maps.len()
    }

    pub fn level(&self, k: usize) -> &[Tensor<T>] {
        &self.maps[k]
    }

    pub fn top(&self) -> &[Tensor<T>] {
        &self.maps[self.maps.len() - 1]
    }

    pub fn get(&self, layer: usize, level: usize) -> &Tensor<T> {
        &self.maps[level][layer]
    }

    /// Level at which the tensor in slot `(layer, level)` was produced.
    pub fn origin(&self, layer: usize, level: usize) -> usize {
        self.origin[level][layer]
    }

    pub fn is_alias(&self, layer: usize, level: usize) -> bool {
        self.origin[level][layer] != level
    }

    /// Producing level of each top-level tap, per layer.
    pub fn taps(&self) -> Vec<usize> {
        self.origin[self.maps.len() - 1].clone()
    }
}

/// Apply `blocks[k][l]` (present exactly for computed slots) level by level.
pub fn build_hierarchy<T: Scalar>(
    level0: Vec<Tensor<T>>,
    spec: &HierarchySpec,
    blocks: &[Vec<Option<ABlock<T>>>],
) -> Result<FeatureHierarchy<T>> {
    if level0.len() != spec.layers {
        return Err(FanetError::config(
            "backbone.stage_channels",
            format!("expected {} trunk maps, got {}", spec.layers, level0.len()),
        ));
    }
    let mut h = FeatureHierarchy::from_trunk(level0);
    for k in 1..spec.levels {
        let below = h.level(k - 1);
        let slots = (0..spec.layers)
            .map(|l| match blocks.get(k).and_then(|row| row.get(l)).and_then(Option::as_ref) {
                Some(block) if spec.computes(l, k) => block.forward(&below[l], &below[l + 1]).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        h.push_level(slots);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn staircase_schedule() {
        let s = HierarchySpec::new(3, 4).unwrap();
        assert_eq!(s.computed_layers(1), 5);
        assert_eq!(s.computed_layers(2), 4);
        let s = HierarchySpec::new(2, 4).unwrap();
        assert_eq!(s.computed_layers(1), 4);
        assert!(HierarchySpec::new(4, 4).is_err());
        assert!(HierarchySpec::new(0, 4).is_err());
    }

    #[test]
    fn context_module_shapes_at_full_width() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AblockConfig::full_width();
        let m = ContextModule::new(&mut store, "ctx", 64, &cfg, &mut rng).unwrap();
        let y = m.forward(&Tensor::zeros(&[1, 64, 16, 16])).unwrap();
        assert_eq!(y.shape(), &[1, 256, 16, 16]);
        for b in m.branches.as_ref().unwrap() {
            assert_eq!(b.out_channels(), 64);
        }
    }

    #[test]
    fn a_block_rejects_non_adjacent_resolution() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ABlock::new(&mut store, "a", 8, 16, &AblockConfig::default(), &mut rng).unwrap();
        let err = b.forward(&Tensor::zeros(&[1, 8, 16, 16]), &Tensor::zeros(&[1, 16, 4, 4]));
        assert!(err.is_err());
        assert!(ABlock::new(&mut store, "b", 8, 12, &AblockConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn concat_width_without_context() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AblockConfig {
            use_context: false,
            ..AblockConfig::full_width()
        };
        let b = ABlock::new(&mut store, "a", 64, 256, &cfg, &mut rng).unwrap();
        let y = b.fuse(&Tensor::zeros(&[1, 64, 8, 8]), &Tensor::zeros(&[1, 256, 4, 4])).unwrap();
        assert_eq!(y.shape(), &[1, 288, 8, 8]);
    }
}
