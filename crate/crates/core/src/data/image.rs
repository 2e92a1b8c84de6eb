use std::path::Path;

use fanet_tensor::{Scalar, Tensor};

use crate::{FanetError, Result};

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    /// From planar `[3, H, W]` values in `[0, 1]`.
    pub fn from_planar(width: usize, height: usize, planes: &[f32]) -> Self {
        let hw = width * height;
        let mut img = Image::new(width, height);
        for p in 0..hw {
            for c in 0..3 {
                img.data[p * 3 + c] = quantize(planes[c * hw + p]);
            }
        }
        img
    }

    /// Planar `[3, H, W]` values in `[0, 1]`.
    pub fn to_planar(&self) -> Vec<f32> {
        let hw = self.width * self.height;
        let mut out = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                out[c * hw + p] = self.data[p * 3 + c] as f32 / 255.0;
            }
        }
        out
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample of channel `c` at continuous pixel coordinates
    /// (pixel centres at `i + 0.5`), clamped at the border.
    pub fn sample(&self, x: f32, y: f32, c: usize) -> f32 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f32);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f32);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
        let at = |x: usize, y: usize| self.data[(y * self.width + x) * 3 + c] as f32 / 255.0;
        let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
        let bottom = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Bilinear resize; a same-size resize is an exact copy.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let mut out = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let (px, py) = ((x as f32 + 0.5) * sx, (y as f32 + 0.5) * sy);
                let rgb = [0, 1, 2].map(|c| quantize(self.sample(px, py, c)));
                out.set_pixel(x, y, rgb);
            }
        }
        out
    }

    /// Copy into the top-left corner of a `side x side` canvas filled with
    /// mid-grey.
    pub fn pad_to_square(&self, side: usize) -> Image {
        let mut out = Image {
            width: side,
            height: side,
            data: vec![128; side * side * 3],
        };
        for y in 0..self.height.min(side) {
            for x in 0..self.width.min(side) {
                out.set_pixel(x, y, self.pixel(x, y));
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer(path, &self.data, self.width as u32, self.height as u32, image::ColorType::Rgb8)
            .map_err(|e| FanetError::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| FanetError::Image(format!("{}: {e}", path.display())))?;
        let rgb = img.to_rgb8();
        Ok(Image {
            width: rgb.width() as usize,
            height: rgb.height() as usize,
            data: rgb.into_raw(),
        })
    }
}

/// Stack equally sized images into `[N, 3, H, W]`, centred to `[-0.5, 0.5]`.
pub fn batch_tensor<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let (w, h) = images.first().map_or((0, 0), |i| (i.width, i.height));
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(FanetError::Image(format!(
                "batch mixes {}x{} and {w}x{h} images",
                img.width, img.height
            )));
        }
        data.extend(img.to_planar().into_iter().map(|v| T::cast(v as f64 - 0.5)));
    }
    Ok(Tensor::new(&[images.len(), 3, h, w], data)?)
}
