//! Strategies that turn trunk maps into a feature hierarchy, selected by
//! name from a registry.

use std::collections::BTreeMap;

use fanet_tensor::ops::{add, upsample_bilinear2x};
use fanet_tensor::{ParamStore, Scalar, Tensor};
use rand::RngCore;

use crate::agglomeration::{build_hierarchy, ABlock, FeatureHierarchy, HierarchySpec};
use crate::config::{AblockConfig, HierarchyConfig};
use crate::nn::Conv;
use crate::{FanetError, Result, NUM_LAYERS};

/// Everything a neck needs to size its parameters.
#[derive(Clone, Debug)]
pub struct NeckContext {
    pub trunk_channels: Vec<usize>,
    pub ablock: AblockConfig,
    pub hierarchy: HierarchyConfig,
}

pub trait Neck<T: Scalar> {
    fn name(&self) -> &'static str;
    fn levels(&self) -> usize;
    /// Channels of every slot, `[level][layer]`.
    fn channels(&self) -> Vec<Vec<usize>>;
    fn numel(&self) -> usize;
    fn forward(&self, trunk: Vec<Tensor<T>>) -> Result<FeatureHierarchy<T>>;
}

pub type NeckBuilder<T> = fn(&NeckContext, &mut ParamStore<T>, &mut dyn RngCore) -> Result<Box<dyn Neck<T>>>;

pub struct NeckRegistry<T: Scalar> {
    builders: BTreeMap<&'static str, NeckBuilder<T>>,
}

impl<T: Scalar> NeckRegistry<T> {
    pub fn empty() -> Self {
        NeckRegistry {
            builders: BTreeMap::new(),
        }
    }

    /// `ssd` (trunk only), `fanet` (A-block hierarchy), `fpn` (top-down
    /// baseline).
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("ssd", build_ssd::<T>);
        r.register("fanet", build_fanet::<T>);
        r.register("fpn", build_fpn::<T>);
        r
    }

    pub fn register(&mut self, name: &'static str, builder: NeckBuilder<T>) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(
        &self,
        name: &str,
        ctx: &NeckContext,
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Neck<T>>> {
        let builder = self.builders.get(name).ok_or_else(|| FanetError::UnknownStrategy {
            kind: "neck",
            name: name.to_string(),
            known: self.names().join(", "),
        })?;
        builder(ctx, store, rng)
    }
}

fn require_levels(ctx: &NeckContext, neck: &str, levels: usize) -> Result<()> {
    if ctx.hierarchy.levels != levels {
        return Err(FanetError::config(
            "hierarchy.levels",
            format!("neck `{neck}` has exactly {levels} level(s), config asks for {}", ctx.hierarchy.levels),
        ));
    }
    Ok(())
}

struct SsdNeck {
    channels: Vec<usize>,
}

fn build_ssd<T: Scalar>(ctx: &NeckContext, _: &mut ParamStore<T>, _: &mut dyn RngCore) -> Result<Box<dyn Neck<T>>> {
    require_levels(ctx, "ssd", 1)?;
    Ok(Box::new(SsdNeck {
        channels: ctx.trunk_channels.clone(),
    }))
}

impl<T: Scalar> Neck<T> for SsdNeck {
    fn name(&self) -> &'static str {
        "ssd"
    }
    fn levels(&self) -> usize {
        1
    }
    fn channels(&self) -> Vec<Vec<usize>> {
        vec![self.channels.clone()]
    }
    fn numel(&self) -> usize {
        0
    }
    fn forward(&self, trunk: Vec<Tensor<T>>) -> Result<FeatureHierarchy<T>> {
        Ok(FeatureHierarchy::from_trunk(trunk))
    }
}

pub struct FanetNeck<T: Scalar> {
    spec: HierarchySpec,
    channels: Vec<Vec<usize>>,
    blocks: Vec<Vec<Option<ABlock<T>>>>,
}

impl<T: Scalar> FanetNeck<T> {
    pub fn new(ctx: &NeckContext, store: &mut ParamStore<T>, rng: &mut dyn RngCore) -> Result<Self> {
        let spec = HierarchySpec::from_config(&ctx.hierarchy)?;
        let channels = spec.channels(&ctx.trunk_channels, ctx.ablock.context_channels);
        let mut blocks: Vec<Vec<Option<ABlock<T>>>> = vec![(0..NUM_LAYERS).map(|_| None).collect()];
        for k in 1..spec.levels {
            let mut row = Vec::with_capacity(NUM_LAYERS);
            for l in 0..NUM_LAYERS {
                row.push(if spec.computes(l, k) {
                    let name = format!("neck.level{}.layer{}", k + 1, l + 1);
                    let (c, n) = (channels[k - 1][l], channels[k - 1][l + 1]);
                    Some(ABlock::new(store, &name, c, n, &ctx.ablock, rng)?)
                } else {
                    None
                });
            }
            blocks.push(row);
        }
        Ok(FanetNeck { spec, channels, blocks })
    }

    pub fn spec(&self) -> &HierarchySpec {
        &self.spec
    }

    pub fn block(&self, layer: usize, level: usize) -> Option<&ABlock<T>> {
        self.blocks.get(level)?.get(layer)?.as_ref()
    }
}

fn build_fanet<T: Scalar>(
    ctx: &NeckContext,
    store: &mut ParamStore<T>,
    rng: &mut dyn RngCore,
) -> Result<Box<dyn Neck<T>>> {
    Ok(Box::new(FanetNeck::new(ctx, store, rng)?))
}

impl<T: Scalar> Neck<T> for FanetNeck<T> {
    fn name(&self) -> &'static str {
        "fanet"
    }
    fn levels(&self) -> usize {
        self.spec.levels
    }
    fn channels(&self) -> Vec<Vec<usize>> {
        self.channels.clone()
    }
    fn numel(&self) -> usize {
        self.blocks.iter().flatten().flatten().map(ABlock::numel).sum()
    }
    fn forward(&self, trunk: Vec<Tensor<T>>) -> Result<FeatureHierarchy<T>> {
        build_hierarchy(trunk, &self.spec, &self.blocks)
    }
}

/// Top-down pathway with lateral 1x1 convs and a 3x3 smooth conv per
/// layer; the second level holds the merged maps.
struct FpnNeck<T: Scalar> {
    lateral: Vec<Conv<T>>,
    smooth: Vec<Conv<T>>,
    channels: Vec<Vec<usize>>,
}

fn build_fpn<T: Scalar>(
    ctx: &NeckContext,
    store: &mut ParamStore<T>,
    rng: &mut dyn RngCore,
) -> Result<Box<dyn Neck<T>>> {
    require_levels(ctx, "fpn", 2)?;
    let x = ctx.ablock.context_channels;
    let mut lateral = Vec::new();
    let mut smooth = Vec::new();
    for (l, &c) in ctx.trunk_channels.iter().enumerate() {
        lateral.push(Conv::new(store, &format!("neck.fpn.lateral{}", l + 1), c, x, (1, 1), rng)?);
        smooth.push(Conv::new(store, &format!("neck.fpn.smooth{}", l + 1), x, x, (3, 3), rng)?);
    }
    Ok(Box::new(FpnNeck {
        lateral,
        smooth,
        channels: vec![ctx.trunk_channels.clone(), vec![x; NUM_LAYERS]],
    }))
}

impl<T: Scalar> Neck<T> for FpnNeck<T> {
    fn name(&self) -> &'static str {
        "fpn"
    }
    fn levels(&self) -> usize {
        2
    }
    fn channels(&self) -> Vec<Vec<usize>> {
        self.channels.clone()
    }
    fn numel(&self) -> usize {
        self.lateral.iter().chain(&self.smooth).map(Conv::numel).sum()
    }
    fn forward(&self, trunk: Vec<Tensor<T>>) -> Result<FeatureHierarchy<T>> {
        let mut merged: Vec<Option<Tensor<T>>> = vec![None; trunk.len()];
        let mut above: Option<Tensor<T>> = None;
        for l in (0..trunk.len()).rev() {
            let lat = self.lateral[l].forward_relu(&trunk[l])?;
            let m = match &above {
                Some(a) => add(&lat, &upsample_bilinear2x(a)?)?,
                None => lat,
            };
            let p = self.smooth[l].forward_relu(&m)?;
            above = Some(p.clone());
            merged[l] = Some(p);
        }
        let mut h = FeatureHierarchy::from_trunk(trunk);
        h.push_level(merged);
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(levels: usize) -> NeckContext {
        NeckContext {
            trunk_channels: vec![8, 8, 16, 16, 16, 16],
            ablock: AblockConfig {
                context_channels: 8,
                use_context: true,
            },
            hierarchy: HierarchyConfig {
                levels,
                ..HierarchyConfig::default()
            },
        }
    }

    fn trunk() -> Vec<Tensor<f32>> {
        [8, 8, 16, 16, 16, 16]
            .iter()
            .zip([32, 16, 8, 4, 2, 1])
            .map(|(&c, s)| Tensor::full(&[1, c, s, s], 0.3))
            .collect()
    }

    #[test]
    fn unknown_neck_lists_known_names() {
        let r = NeckRegistry::<f32>::builtin();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = r.build("bifpn", &ctx(1), &mut store, &mut rng).err().unwrap().to_string();
        assert!(err.contains("bifpn") && err.contains("fanet, fpn, ssd"), "{err}");
    }

    #[test]
    fn every_builtin_preserves_resolution() {
        let r = NeckRegistry::<f32>::builtin();
        for (name, levels) in [("ssd", 1), ("fanet", 3), ("fpn", 2)] {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let neck = r.build(name, &ctx(levels), &mut store, &mut rng).unwrap();
            let h = neck.forward(trunk()).unwrap();
            assert_eq!(h.levels(), levels);
            let channels = neck.channels();
            for k in 0..levels {
                for l in 0..NUM_LAYERS {
                    let t = h.get(l, k);
                    assert_eq!(t.shape()[2..], h.get(l, 0).shape()[2..], "{name} ({l},{k})");
                    assert_eq!(t.dim(1), channels[k][l]);
                }
            }
            assert_eq!(neck.numel(), store.numel());
        }
    }

    #[test]
    fn level_count_is_checked() {
        let r = NeckRegistry::<f32>::builtin();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(r.build("fpn", &ctx(3), &mut store, &mut rng).is_err());
        assert!(r.build("ssd", &ctx(2), &mut store, &mut rng).is_err());
    }
}
