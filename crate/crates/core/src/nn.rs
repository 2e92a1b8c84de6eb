use fanet_tensor::ops::{conv2d, relu, Conv2dOpts};
use fanet_tensor::{xavier_uniform, ParamStore, Scalar, Tensor};
use rand::Rng;

use crate::Result;

/// Weight scale for convolutions followed by a ReLU.
pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// Convolution layer with Xavier-initialised weights and zero bias.
/// 3x3, 1x3 and 3x1 kernels use "same" padding; 1x1 uses none.
pub struct Conv<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    opts: Conv2dOpts,
}

impl<T: Scalar> Conv<T> {
    /// Convolution feeding a ReLU (weights scaled by [`RELU_GAIN`]).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_gain(store, name, in_channels, out_channels, kernel, RELU_GAIN, rng)
    }

    pub fn with_gain<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        (kh, kw): (usize, usize),
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = [out_channels, in_channels, kh, kw];
        let gain = T::cast(gain);
        let w: Vec<T> = xavier_uniform::<T, R>(&shape, rng).into_iter().map(|v| v * gain).collect();
        let weight = store.add(format!("{name}.weight"), &shape, w)?;
        let bias = store.add(format!("{name}.bias"), &[out_channels], vec![T::zero(); out_channels])?;
        Ok(Conv {
            weight,
            bias,
            opts: Conv2dOpts::same(kh, kw),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn numel(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(conv2d(x, &self.weight, Some(&self.bias), self.opts)?)
    }

    pub fn forward_relu(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu(&self.forward(x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_count_of_3x3_conv() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv::new(&mut store, "c", 4, 8, (3, 3), &mut rng).unwrap();
        assert_eq!(conv.numel(), 8 * 4 * 9 + 8);
        assert_eq!(store.numel(), 296);
    }

    #[test]
    fn asymmetric_kernels_keep_size() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::zeros(&[1, 2, 5, 7]);
        for k in [(1, 3), (3, 1), (3, 3), (1, 1)] {
            let conv = Conv::new(&mut store, &format!("c{}{}", k.0, k.1), 2, 3, k, &mut rng).unwrap();
            assert_eq!(conv.forward(&x).unwrap().shape(), &[1, 3, 5, 7]);
        }
    }
}
