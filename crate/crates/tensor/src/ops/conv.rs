use crate::gemm::{gemm, Mat};
use crate::{GradFn, Result, Scalar, Tensor, TensorError};

/// Stride and zero padding of a 2-D convolution. Padding is per axis so the
/// 1x3 and 3x1 kernels of the context module can keep their spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl Conv2dOpts {
    pub fn new(stride: usize, pad: usize) -> Self {
        Conv2dOpts {
            stride,
            pad_h: pad,
            pad_w: pad,
        }
    }

    /// Stride 1 with padding that preserves spatial size for odd kernels.
    pub fn same(kh: usize, kw: usize) -> Self {
        Conv2dOpts {
            stride: 1,
            pad_h: kh / 2,
            pad_w: kw / 2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    opts: Conv2dOpts,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1x1, stride-1, unpadded conv reads its input directly as the patch matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.opts.stride == 1
            && self.opts.pad_h == 0
            && self.opts.pad_w == 0
    }
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOpts,
) -> Result<Geometry> {
    let err = |d: String| Err(TensorError::shape("conv2d", d));
    if input.ndim() != 4 {
        return err(format!("input must be NCHW, got {:?}", input.shape()));
    }
    if weight.ndim() != 4 {
        return err(format!("weight must be OCkhkw, got {:?}", weight.shape()));
    }
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let (o, wc, kh, kw) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
    if wc != c {
        return err(format!("weight expects {wc} input channels, input has {c}"));
    }
    if !matches!(kh, 1 | 3) || !matches!(kw, 1 | 3) {
        return err(format!("unsupported kernel {kh}x{kw}"));
    }
    if opts.stride == 0 {
        return err("stride must be positive".into());
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return err(format!("bias shape {:?} for {o} output channels", b.shape()));
        }
    }
    let span_h = h + 2 * opts.pad_h;
    let span_w = w + 2 * opts.pad_w;
    if span_h < kh || span_w < kw {
        return err(format!("kernel {kh}x{kw} larger than padded input {span_h}x{span_w}"));
    }
    if (span_h - kh) % opts.stride != 0 || (span_w - kw) % opts.stride != 0 {
        return err(format!(
            "output size not integral for input {h}x{w}, kernel {kh}x{kw}, {opts:?}"
        ));
    }
    Ok(Geometry {
        n,
        c,
        h,
        w,
        o,
        kh,
        kw,
        ho: (span_h - kh) / opts.stride + 1,
        wo: (span_w - kw) / opts.stride + 1,
        opts,
    })
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kj - pad`
/// lies inside `0..w`.
fn valid_cols(g: &Geometry, kj: usize) -> (usize, usize) {
    let (s, pw) = (g.opts.stride, g.opts.pad_w);
    let lo = if kj >= pw { 0 } else { (pw - kj).div_ceil(s) };
    let hi = if g.w + pw <= kj { 0 } else { ((g.w - 1 + pw - kj) / s + 1).min(g.wo) };
    (lo, hi.max(lo))
}

/// Gather the receptive-field patches of image `b` into columns
/// `b * Ho*Wo ..` of a `[C*kh*kw, N*Ho*Wo]` matrix.
fn im2col<T: Scalar>(g: &Geometry, x: &[T], b: usize, cols: &mut [T]) {
    let (s, ph, pw) = (g.opts.stride, g.opts.pad_h as isize, g.opts.pad_w);
    let (pix, ld) = (g.out_pixels(), g.n * g.out_pixels());
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ld + b * pix..row * ld + (b + 1) * pix];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.ho {
                    let iy = (oy * s) as isize + ki as isize - ph;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    let start = lo * s + kj - pw;
                    if s == 1 {
                        out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (v, &x) in out_row[lo..hi].iter_mut().zip(src[start..].iter().step_by(s)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add columns of image `b` back onto its grid (adjoint of `im2col`).
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], b: usize, dx: &mut [T]) {
    let (s, ph, pw) = (g.opts.stride, g.opts.pad_h as isize, g.opts.pad_w);
    let (pix, ld) = (g.out_pixels(), g.n * g.out_pixels());
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ld + b * pix..row * ld + (b + 1) * pix];
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                let start = lo * s + kj - pw;
                for oy in 0..g.ho {
                    let iy = (oy * s) as isize + ki as isize - ph;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let v = &src[oy * g.wo + lo..oy * g.wo + hi];
                    if s == 1 {
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(v) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[start..].iter_mut().step_by(s).zip(v) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Pixel-major patches of image `b`: rows `b * Ho*Wo ..` of a
/// `[N*Ho*Wo, C*kh*kw]` matrix.
fn im2row<T: Scalar>(g: &Geometry, x: &[T], b: usize, rows: &mut [T]) {
    let (s, ph, pw) = (g.opts.stride as isize, g.opts.pad_h as isize, g.opts.pad_w as isize);
    let (k, pix) = (g.patch_len(), g.out_pixels());
    let (h, w) = (g.h as isize, g.w as isize);
    for oy in 0..g.ho {
        let y0 = oy as isize * s - ph;
        for ox in 0..g.wo {
            let x0 = ox as isize * s - pw;
            let dst = &mut rows[(b * pix + oy * g.wo + ox) * k..(b * pix + oy * g.wo + ox + 1) * k];
            let inside = y0 >= 0 && x0 >= 0 && y0 + g.kh as isize <= h && x0 + g.kw as isize <= w;
            let mut i = 0;
            for c in 0..g.c {
                let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
                for ki in 0..g.kh as isize {
                    let iy = y0 + ki;
                    if inside {
                        let at = (iy * w + x0) as usize;
                        if g.kw == 3 {
                            dst[i] = plane[at];
                            dst[i + 1] = plane[at + 1];
                            dst[i + 2] = plane[at + 2];
                        } else {
                            dst[i] = plane[at];
                        }
                        i += g.kw;
                        continue;
                    }
                    for kj in 0..g.kw as isize {
                        let ix = x0 + kj;
                        dst[i] = if iy < 0 || iy >= h || ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            plane[(iy * w + ix) as usize]
                        };
                        i += 1;
                    }
                }
            }
        }
    }
}

/// `[N, C, P]` to `[C, N*P]`.
fn to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize, out: &mut [T]) {
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * p + b * p..ch * n * p + (b + 1) * p].copy_from_slice(&x[(b * c + ch) * p..(b * c + ch + 1) * p]);
        }
    }
}

/// `[C, N*P]` to `[N, C, P]`.
fn to_batch_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize, out: &mut [T]) {
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * p..(b * c + ch + 1) * p].copy_from_slice(&x[ch * n * p + b * p..ch * n * p + (b + 1) * p]);
        }
    }
}

/// Patch matrix `[C*kh*kw, N*Ho*Wo]` for the whole batch.
fn lower<T: Scalar>(g: &Geometry, x: &[T]) -> Vec<T> {
    let image_len = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); g.patch_len() * g.n * g.out_pixels()];
    if g.is_pointwise() {
        to_channel_major(x, g.n, g.c, g.out_pixels(), &mut cols);
    } else {
        for b in 0..g.n {
            im2col(g, &x[b * image_len..(b + 1) * image_len], b, &mut cols);
        }
    }
    cols
}

/// 2-D cross-correlation, NCHW input, OCkhkw weights.
///
/// The batch is lowered to one patch matrix and multiplied against the
/// flattened kernel bank; `conv2d_reference` is the direct loop it is
/// tested against.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOpts,
) -> Result<Tensor<T>> {
    let g = geometry(input, weight, bias, opts)?;
    let (pix, k, cols_n) = (g.out_pixels(), g.patch_len(), g.n * g.out_pixels());
    let mut out = vec![T::zero(); g.n * g.o * pix];
    {
        let cols = lower(&g, &input.data());
        let mut y = vec![T::zero(); g.o * cols_n];
        gemm(Mat::new(&weight.data(), g.o, k), Mat::new(&cols, k, cols_n), T::zero(), &mut y);
        if let Some(bias) = bias {
            for (oc, &bv) in bias.data().iter().enumerate() {
                for v in &mut y[oc * cols_n..(oc + 1) * cols_n] {
                    *v += bv;
                }
            }
        }
        to_batch_major(&y, g.n, g.o, pix, &mut out);
    }
    let mut inputs = vec![input.clone(), weight.clone()];
    inputs.extend(bias.cloned());
    Ok(Tensor::from_op(
        vec![g.n, g.o, g.ho, g.wo],
        out,
        Box::new(Conv2dBackward { inputs, g }),
    ))
}

struct Conv2dBackward<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    g: Geometry,
}

impl<T: Scalar> GradFn<T> for Conv2dBackward<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn inputs(&self) -> Vec<Tensor<T>> {
        self.inputs.clone()
    }

    fn backward(&self, grad_out: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let g = &self.g;
        let (pix, k, cols_n) = (g.out_pixels(), g.patch_len(), g.n * g.out_pixels());
        let image_len = g.c * g.h * g.w;
        let mut gy = vec![T::zero(); g.o * cols_n];
        to_channel_major(grad_out, g.n, g.o, pix, &mut gy);

        let dw = needs[1].then(|| {
            let x = self.inputs[0].data();
            let mut rows = vec![T::zero(); cols_n * k];
            for b in 0..g.n {
                im2row(g, &x[b * image_len..(b + 1) * image_len], b, &mut rows);
            }
            let mut dw = vec![T::zero(); g.o * k];
            gemm(Mat::new(&gy, g.o, cols_n), Mat::new(&rows, cols_n, k), T::zero(), &mut dw);
            dw
        });
        let dx = needs[0].then(|| {
            let mut dcols = vec![T::zero(); k * cols_n];
            gemm(Mat::new(&self.inputs[1].data(), g.o, k).t(), Mat::new(&gy, g.o, cols_n), T::zero(), &mut dcols);
            let mut dx = vec![T::zero(); g.n * image_len];
            if g.is_pointwise() {
                to_batch_major(&dcols, g.n, g.c, pix, &mut dx);
            } else {
                for b in 0..g.n {
                    col2im(g, &dcols, b, &mut dx[b * image_len..(b + 1) * image_len]);
                }
            }
            dx
        });
        let db = needs
            .get(2)
            .copied()
            .unwrap_or(false)
            .then(|| (0..g.o).map(|oc| gy[oc * cols_n..(oc + 1) * cols_n].iter().copied().sum::<T>()).collect());
        let mut grads = vec![dx, dw];
        if self.inputs.len() == 3 {
            grads.push(db);
        }
        grads
    }
}

/// Direct seven-loop convolution. Slow; kept as the correctness reference
/// for [`conv2d`].
pub fn conv2d_reference<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOpts,
) -> Result<Tensor<T>> {
    let g = geometry(input, weight, bias, opts)?;
    let x = input.data();
    let w = weight.data();
    let bias = bias.map(|b| b.to_vec());
    let mut out = vec![T::zero(); g.n * g.o * g.ho * g.wo];
    for b in 0..g.n {
        for oc in 0..g.o {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = bias.as_ref().map_or(T::zero(), |bv| bv[oc]);
                    for c in 0..g.c {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let iy = (oy * g.opts.stride + ki) as isize - g.opts.pad_h as isize;
                                let ix = (ox * g.opts.stride + kj) as isize - g.opts.pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((b * g.c + c) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = w[((oc * g.c + c) * g.kh + ki) * g.kw + kj];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * g.o + oc) * g.ho + oy) * g.wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[g.n, g.o, g.ho, g.wo], out)
}
