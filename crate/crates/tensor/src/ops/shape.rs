use super::expect_nchw;
use crate::{GradFn, Result, Scalar, Tensor, TensorError};

/// Channel-wise concatenation of `a` then `b`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    cat_channels(&[a.clone(), b.clone()])
}

/// Channel-wise concatenation of any number of maps with equal N, H, W.
pub fn cat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::shape("concat_channels", "nothing to concatenate"))?;
    let [n, _, h, w] = expect_nchw("concat_channels", first)?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = expect_nchw("concat_channels", p)?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(TensorError::shape(
                "concat_channels",
                format!(
                    "spatial/batch mismatch {:?} vs {:?}; upsample the coarser map first",
                    first.shape(),
                    p.shape()
                ),
            ));
        }
        channels.push(pc);
    }
    let total: usize = channels.iter().sum();
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for (p, &c) in parts.iter().zip(&channels) {
            out.extend_from_slice(&p.data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    Ok(Tensor::from_op(
        vec![n, total, h, w],
        out,
        Box::new(CatBackward {
            parts: parts.to_vec(),
            channels,
            n,
            hw,
        }),
    ))
}

struct CatBackward<T: Scalar> {
    parts: Vec<Tensor<T>>,
    channels: Vec<usize>,
    n: usize,
    hw: usize,
}

impl<T: Scalar> GradFn<T> for CatBackward<T> {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn inputs(&self) -> Vec<Tensor<T>> {
        self.parts.clone()
    }

    fn backward(&self, grad_out: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let total: usize = self.channels.iter().sum();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.parts.len());
        for (&c, &need) in self.channels.iter().zip(needs) {
            if need {
                let mut g = Vec::with_capacity(self.n * c * self.hw);
                for b in 0..self.n {
                    let start = (b * total + offset) * self.hw;
                    g.extend_from_slice(&grad_out[start..start + c * self.hw]);
                }
                grads.push(Some(g));
            } else {
                grads.push(None);
            }
            offset += c;
        }
        grads
    }
}

/// Channels `start..start + len` of an NCHW map.
pub fn narrow_channels<T: Scalar>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = expect_nchw("narrow_channels", input)?;
    if start + len > c {
        return Err(TensorError::shape(
            "narrow_channels",
            format!("channels {start}..{} out of range for {c}", start + len),
        ));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    {
        let x = input.data();
        for b in 0..n {
            let s = (b * c + start) * hw;
            out.extend_from_slice(&x[s..s + len * hw]);
        }
    }
    Ok(Tensor::from_op(
        vec![n, len, h, w],
        out,
        Box::new(NarrowBackward {
            input: input.clone(),
            start,
            len,
        }),
    ))
}

struct NarrowBackward<T: Scalar> {
    input: Tensor<T>,
    start: usize,
    len: usize,
}

impl<T: Scalar> GradFn<T> for NarrowBackward<T> {
    fn name(&self) -> &'static str {
        "narrow_channels"
    }

    fn inputs(&self) -> Vec<Tensor<T>> {
        vec![self.input.clone()]
    }

    fn backward(&self, grad_out: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = self.input.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let mut dx = vec![T::zero(); self.input.numel()];
        for b in 0..n {
            let dst = (b * c + self.start) * hw;
            let src = b * self.len * hw;
            dx[dst..dst + self.len * hw].copy_from_slice(&grad_out[src..src + self.len * hw]);
        }
        vec![Some(dx)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::dot;

    #[test]
    fn full_scale_widths() {
        let a = Tensor::<f32>::zeros(&[1, 256, 8, 8]);
        let b = Tensor::<f32>::zeros(&[1, 32, 8, 8]);
        assert_eq!(concat_channels(&a, &b).unwrap().shape(), &[1, 288, 8, 8]);
    }

    #[test]
    fn zero_channel_part_is_identity() {
        let a = Tensor::<f32>::new(&[2, 2, 1, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let empty = Tensor::<f32>::zeros(&[2, 0, 1, 2]);
        let y = concat_channels(&a, &empty).unwrap();
        assert_eq!(y.shape(), a.shape());
        assert_eq!(y.to_vec(), a.to_vec());
    }

    #[test]
    fn batch_layout_interleaves_parts() {
        let a = Tensor::<f32>::new(&[2, 1, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::new(&[2, 1, 1, 1], vec![10.0, 20.0]).unwrap();
        assert_eq!(concat_channels(&a, &b).unwrap().to_vec(), vec![1.0, 10.0, 2.0, 20.0]);
    }

    #[test]
    fn spatial_mismatch_suggests_upsampling() {
        let a = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let b = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let err = concat_channels(&a, &b).unwrap_err().to_string();
        assert!(err.contains("upsample"), "{err}");
    }

    #[test]
    fn slice_gradient_is_one_hot() {
        let a = Tensor::<f64>::leaf(&[1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::leaf(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let y = concat_channels(&a, &b).unwrap();
        // Select channel 2, which came from b.
        dot(&y, &[0.0, 0.0, 1.0]).unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 0.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn narrow_then_concat_round_trips() {
        let x = Tensor::<f32>::new(&[2, 3, 1, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let lo = narrow_channels(&x, 0, 1).unwrap();
        let hi = narrow_channels(&x, 1, 2).unwrap();
        assert_eq!(concat_channels(&lo, &hi).unwrap().to_vec(), x.to_vec());
    }
}
