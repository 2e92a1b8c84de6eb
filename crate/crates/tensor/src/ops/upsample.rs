use super::expect_nchw;
use crate::{GradFn, Result, Scalar, Tensor};

/// Source taps for one output coordinate of a 2x bilinear resize with
/// half-pixel centres (`align_corners = false`): `(lo, hi, w_lo, w_hi)`.
pub fn upsample_weights(in_len: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * in_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = src - lo as f64;
            (lo, hi, 1.0 - frac, frac)
        })
        .collect()
}

struct Taps<T> {
    rows: Vec<(usize, usize, T, T)>,
    cols: Vec<(usize, usize, T, T)>,
}

impl<T: Scalar> Taps<T> {
    fn new(h: usize, w: usize) -> Self {
        let cast = |v: Vec<(usize, usize, f64, f64)>| {
            v.into_iter()
                .map(|(a, b, wa, wb)| (a, b, T::cast(wa), T::cast(wb)))
                .collect()
        };
        Taps {
            rows: cast(upsample_weights(h)),
            cols: cast(upsample_weights(w)),
        }
    }
}

/// 2x bilinear upsampling (half-pixel centres, edge clamped).
pub fn upsample_bilinear2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = expect_nchw("upsample_bilinear2x", input)?;
    let (ho, wo) = (2 * h, 2 * w);
    let taps = Taps::<T>::new(h, w);
    let mut out = vec![T::zero(); n * c * ho * wo];
    {
        let x = input.data();
        // Interpolate along x into a scratch plane, then along y.
        let mut wide = vec![T::zero(); h * wo];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                for (ox, &(l, r, wl, wr)) in taps.cols.iter().enumerate() {
                    wide[y * wo + ox] = wl * row[l] + wr * row[r];
                }
            }
            let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for (oy, &(t, b, wt, wb)) in taps.rows.iter().enumerate() {
                for ox in 0..wo {
                    dst[oy * wo + ox] = wt * wide[t * wo + ox] + wb * wide[b * wo + ox];
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        Box::new(UpsampleBackward {
            input: input.clone(),
            taps,
        }),
    ))
}

struct UpsampleBackward<T: Scalar> {
    input: Tensor<T>,
    taps: Taps<T>,
}

impl<T: Scalar> GradFn<T> for UpsampleBackward<T> {
    fn name(&self) -> &'static str {
        "upsample_bilinear2x"
    }

    fn inputs(&self) -> Vec<Tensor<T>> {
        vec![self.input.clone()]
    }

    fn backward(&self, grad_out: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let [n, c, h, w] = expect_nchw("upsample_bilinear2x", &self.input).expect("nchw");
        let (ho, wo) = (2 * h, 2 * w);
        let mut dx = vec![T::zero(); n * c * h * w];
        let mut wide = vec![T::zero(); h * wo];
        for plane in 0..n * c {
            let g = &grad_out[plane * ho * wo..(plane + 1) * ho * wo];
            wide.fill(T::zero());
            for (oy, &(t, b, wt, wb)) in self.taps.rows.iter().enumerate() {
                for ox in 0..wo {
                    let v = g[oy * wo + ox];
                    wide[t * wo + ox] += wt * v;
                    wide[b * wo + ox] += wb * v;
                }
            }
            let d = &mut dx[plane * h * w..(plane + 1) * h * w];
            for y in 0..h {
                for (ox, &(l, r, wl, wr)) in self.taps.cols.iter().enumerate() {
                    let v = wide[y * wo + ox];
                    d[y * w + l] += wl * v;
                    d[y * w + r] += wr * v;
                }
            }
        }
        vec![Some(dx)]
    }
}
