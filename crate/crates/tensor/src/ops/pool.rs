use super::expect_nchw;
use crate::{kink, GradFn, Result, Scalar, Tensor, TensorError};

/// 2x2 max pooling with stride 2. Ties resolve to the first element in
/// row-major window order, and the gradient follows that element.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = expect_nchw("maxpool2x2", input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::shape(
            "maxpool2x2",
            format!("spatial size {h}x{w} must be even"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    {
        let x = input.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let top = base + 2 * oy * w + 2 * ox;
                    let window = [top, top + 1, top + w, top + w + 1];
                    let mut best = window[0];
                    for &i in &window[1..] {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
    }
    if kink::is_active() {
        kink::record(&argmax[..]);
    }
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        Box::new(MaxPoolBackward {
            input: input.clone(),
            argmax,
        }),
    ))
}

struct MaxPoolBackward<T: Scalar> {
    input: Tensor<T>,
    argmax: Vec<u32>,
}

impl<T: Scalar> GradFn<T> for MaxPoolBackward<T> {
    fn name(&self) -> &'static str {
        "maxpool2x2"
    }

    fn inputs(&self) -> Vec<Tensor<T>> {
        vec![self.input.clone()]
    }

    fn backward(&self, grad_out: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); self.input.numel()];
        for (&i, &g) in self.argmax.iter().zip(grad_out) {
            dx[i as usize] += g;
        }
        vec![Some(dx)]
    }
}
