//! VGG-style trunk producing the first hierarchy level: six maps at strides
//! 4..128.

use fanet_tensor::ops::maxpool2x2;
use fanet_tensor::{ParamStore, Scalar, Tensor};
use rand::Rng;

use crate::config::BackboneConfig;
use crate::nn::Conv;
use crate::{FanetError, Result, NUM_LAYERS};

/// Stem (conv-relu-pool, stride 2) followed by six conv-relu-conv-relu-pool
/// stages; the output of stage `l` is the level-1 map of layer `l`.
pub struct Backbone<T: Scalar> {
    config: BackboneConfig,
    stem: Conv<T>,
    stages: Vec<[Conv<T>; 2]>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new<R: Rng + ?Sized>(config: &BackboneConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = Conv::new(store, "trunk.stem", 3, config.stem_channels, (3, 3), rng)?;
        let mut stages = Vec::with_capacity(NUM_LAYERS);
        let mut cin = config.stem_channels;
        for (l, &cout) in config.stage_channels.iter().enumerate() {
            let a = Conv::new(store, &format!("trunk.stage{}.conv1", l + 1), cin, cout, (3, 3), rng)?;
            let b = Conv::new(store, &format!("trunk.stage{}.conv2", l + 1), cout, cout, (3, 3), rng)?;
            stages.push([a, b]);
            cin = cout;
        }
        Ok(Backbone {
            config: config.clone(),
            stem,
            stages,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn numel(&self) -> usize {
        self.stem.numel() + self.stages.iter().flatten().map(Conv::numel).sum::<usize>()
    }

    /// Level-1 maps for an `[N, 3, S, S]` batch with `S == input_size`.
    pub fn forward_trunk(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.forward_any_size(image, self.config.input_size)
    }

    /// Same as [`forward_trunk`](Self::forward_trunk) for another square size
    /// that is a multiple of the largest stride (multi-scale testing).
    pub fn forward_any_size(&self, image: &Tensor<T>, size: usize) -> Result<Vec<Tensor<T>>> {
        let expected = [image.shape().first().copied().unwrap_or(0), 3, size, size];
        if image.ndim() != 4 || image.shape()[1..] != expected[1..] {
            return Err(FanetError::config(
                "backbone.input_size",
                format!("input {:?} does not match [N, 3, {size}, {size}]", image.shape()),
            ));
        }
        self.config.with_input_size(size).validate()?;
        let mut x = maxpool2x2(&self.stem.forward_relu(image)?)?;
        let mut taps = Vec::with_capacity(NUM_LAYERS);
        for [a, b] in &self.stages {
            x = maxpool2x2(&b.forward_relu(&a.forward_relu(&x)?)?)?;
            taps.push(x.clone());
        }
        Ok(taps)
    }
}
