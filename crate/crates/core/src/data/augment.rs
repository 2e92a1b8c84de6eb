use rand::Rng;

use super::image::quantize;
use super::{Image, Sample};
use crate::anchors::BBox;
use crate::config::AugmentConfig;

/// Random square crop resized to `out_size`, horizontal flip and
/// per-channel brightness/contrast jitter. Faces whose centre leaves the
/// crop are dropped; the rest are clipped to it.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, out_size: usize, rng: &mut R) -> Sample {
    let img = &sample.image;
    let short = img.width.min(img.height) as f32;
    let ratio = if cfg.max_crop > cfg.min_crop {
        rng.gen_range(cfg.min_crop..=cfg.max_crop)
    } else {
        cfg.max_crop
    };
    let side = (ratio * short).clamp(1.0, short);
    let x0 = rng.gen_range(0.0..=img.width as f32 - side);
    let y0 = rng.gen_range(0.0..=img.height as f32 - side);
    let flip = rng.gen_bool(cfg.flip_prob.clamp(0.0, 1.0) as f64);
    let j = cfg.color_jitter;
    let jitter: [(f32, f32); 3] = if j > 0.0 {
        [0, 1, 2].map(|_| (rng.gen_range(1.0 - j..=1.0 + j), rng.gen_range(-j / 2.0..=j / 2.0)))
    } else {
        [(1.0, 0.0); 3]
    };

    let scale = out_size as f32 / side;
    let crop = BBox::new(x0, y0, x0 + side, y0 + side);
    let faces = sample
        .faces
        .iter()
        .filter(|f| {
            let (cx, cy) = f.center();
            cx >= crop.xmin && cx < crop.xmax && cy >= crop.ymin && cy < crop.ymax
        })
        .filter_map(|f| {
            let b = BBox::new(f.xmin.max(x0), f.ymin.max(y0), f.xmax.min(x0 + side), f.ymax.min(y0 + side));
            let b = b.translated(-x0, -y0).scaled(scale, scale);
            let b = if flip { b.flipped(out_size as f32) } else { b };
            b.clip(out_size as f32, out_size as f32)
        })
        .collect();

    let identity = side == img.width as f32 && side == img.height as f32 && out_size == img.width;
    let mut out = Image::new(out_size, out_size);
    for y in 0..out_size {
        for x in 0..out_size {
            let src_x = if flip { out_size - 1 - x } else { x };
            for (c, &(contrast, bright)) in jitter.iter().enumerate() {
                let v = if identity {
                    img.data[(y * img.width + src_x) * 3 + c] as f32 / 255.0
                } else {
                    let px = x0 + (src_x as f32 + 0.5) / scale;
                    let py = y0 + (y as f32 + 0.5) / scale;
                    img.sample(px, py, c)
                };
                let v = if j > 0.0 { (v - 0.5) * contrast + 0.5 + bright } else { v };
                out.data[(y * out_size + x) * 3 + c] = quantize(v);
            }
        }
    }
    Sample { image: out, faces }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use crate::data::generate_sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Sample {
        generate_sample(
            5,
            0,
            &DataConfig {
                image_size: 128,
                ..DataConfig::default()
            },
        )
    }

    #[test]
    fn identity_augment_is_resize_only() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = augment(&s, &AugmentConfig::identity(), 128, &mut rng);
        assert_eq!(same, s);
        let half = augment(&s, &AugmentConfig::identity(), 64, &mut rng);
        for (a, b) in half.faces.iter().zip(&s.faces) {
            assert_eq!(*a, b.scaled(0.5, 0.5));
        }
    }

    #[test]
    fn flip_reflects_boxes() {
        let s = sample();
        let cfg = AugmentConfig {
            flip_prob: 1.0,
            ..AugmentConfig::identity()
        };
        let out = augment(&s, &cfg, 128, &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in out.faces.iter().zip(&s.faces) {
            assert_eq!(a.xmin, 128.0 - b.xmax);
            assert_eq!(a.xmax, 128.0 - b.xmin);
        }
        assert_eq!(out.image.pixel(0, 5), s.image.pixel(127, 5));
    }
}
