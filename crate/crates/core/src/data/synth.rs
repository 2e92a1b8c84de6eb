//! Procedural images: textured noise, distractor shapes and face motifs
//! (an ellipse with two eyes and a mouth).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Image, Sample};
use crate::anchors::{jaccard, BBox};
use crate::config::DataConfig;

const SUPERSAMPLE: usize = 3;
const MAX_FACE_OVERLAP: f32 = 0.2;
const PLACEMENT_TRIES: usize = 30;

struct Canvas {
    size: usize,
    planes: Vec<f32>,
}

impl Canvas {
    /// Paint every pixel whose supersampled coverage by `shape` is nonzero,
    /// blending by coverage. `shape` returns a colour or `None` per point.
    fn paint(&mut self, bounds: &BBox, shape: impl Fn(f32, f32) -> Option<[f32; 3]>) {
        let n = self.size as isize;
        let x0 = (bounds.xmin.floor() as isize).clamp(0, n);
        let x1 = (bounds.xmax.ceil() as isize).clamp(0, n);
        let y0 = (bounds.ymin.floor() as isize).clamp(0, n);
        let y1 = (bounds.ymax.ceil() as isize).clamp(0, n);
        let hw = self.size * self.size;
        let k = SUPERSAMPLE as f32;
        for y in y0..y1 {
            for x in x0..x1 {
                let mut acc = [0.0f32; 3];
                let mut hits = 0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f32 + (sx as f32 + 0.5) / k;
                        let py = y as f32 + (sy as f32 + 0.5) / k;
                        if let Some(c) = shape(px, py) {
                            hits += 1;
                            for i in 0..3 {
                                acc[i] += c[i];
                            }
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let cover = hits as f32 / (k * k);
                let p = y as usize * self.size + x as usize;
                for (i, a) in acc.iter().enumerate() {
                    let v = &mut self.planes[i * hw + p];
                    *v = *v * (1.0 - cover) + a / hits as f32 * cover;
                }
            }
        }
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f32, hi: f32) -> f32 {
    if hi <= lo {
        return lo;
    }
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

fn background<R: Rng>(rng: &mut R, size: usize) -> Canvas {
    let grid = rng.gen_range(3..=8usize);
    let hw = size * size;
    let mut planes = vec![0.0; 3 * hw];
    for c in 0..3 {
        let base: f32 = rng.gen_range(0.2..0.8);
        let coarse: Vec<f32> = (0..(grid + 1) * (grid + 1)).map(|_| rng.gen_range(-0.25..0.25)).collect();
        for y in 0..size {
            for x in 0..size {
                let gx = x as f32 / size as f32 * grid as f32;
                let gy = y as f32 / size as f32 * grid as f32;
                let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
                let (tx, ty) = (gx - ix as f32, gy - iy as f32);
                let at = |i: usize, j: usize| coarse[j * (grid + 1) + i];
                let v = (at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx) * (1.0 - ty)
                    + (at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx) * ty;
                planes[c * hw + y * size + x] = base + v;
            }
        }
    }
    Canvas { size, planes }
}

fn random_colour<R: Rng>(rng: &mut R) -> [f32; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

fn draw_distractor<R: Rng>(rng: &mut R, canvas: &mut Canvas, cfg: &DataConfig) {
    let s = log_uniform(rng, cfg.min_face, cfg.max_face.min(canvas.size as f32));
    let w = s * rng.gen_range(0.3..1.0);
    let h = s * rng.gen_range(0.3..1.0);
    let cx = rng.gen_range(0.0..canvas.size as f32);
    let cy = rng.gen_range(0.0..canvas.size as f32);
    let b = BBox::from_center(cx, cy, w, h);
    let colour = random_colour(rng);
    match rng.gen_range(0..3) {
        0 => canvas.paint(&b, |_, _| Some(colour)),
        1 => canvas.paint(&b, |x, y| {
            let (u, v) = ((x - cx) / (w / 2.0), (y - cy) / (h / 2.0));
            (u * u + v * v <= 1.0).then_some(colour)
        }),
        _ => canvas.paint(&b, |x, y| {
            // Upward triangle.
            let v = (y - b.ymin) / h;
            ((x - cx).abs() <= v * w / 2.0).then_some(colour)
        }),
    }
}

fn draw_face(canvas: &mut Canvas, face: &BBox, skin: [f32; 3], feature: [f32; 3]) {
    let (cx, cy) = face.center();
    let (rx, ry) = (face.width() / 2.0, face.height() / 2.0);
    canvas.paint(face, |x, y| {
        let (u, v) = ((x - cx) / rx, (y - cy) / ry);
        if u * u + v * v > 1.0 {
            return None;
        }
        let eye = |ex: f32| {
            let (du, dv) = (u - ex, v + 0.25);
            du * du + dv * dv <= 0.17 * 0.17
        };
        let mouth = u.abs() <= 0.4 && (v - 0.45).abs() <= 0.09;
        Some(if eye(-0.38) || eye(0.38) || mouth { feature } else { skin })
    });
}

/// Image `index` of the dataset with the given seed. Each image has its own
/// random stream, so any image can be regenerated on its own.
pub fn generate_sample(seed: u64, index: u64, cfg: &DataConfig) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let size = cfg.image_size;
    let mut canvas = background(&mut rng, size);
    for _ in 0..rng.gen_range(0..=cfg.max_distractors) {
        draw_distractor(&mut rng, &mut canvas, cfg);
    }
    let count = rng.gen_range(cfg.min_faces..=cfg.max_faces);
    let max_side = cfg.max_face.min(size as f32);
    let mut faces: Vec<BBox> = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..PLACEMENT_TRIES {
            let side = log_uniform(&mut rng, cfg.min_face, max_side);
            let narrow = side * rng.gen_range(0.75..1.0);
            let (w, h) = if rng.gen_bool(0.5) { (narrow, side) } else { (side, narrow) };
            let x = rng.gen_range(0.0..=size as f32 - w);
            let y = rng.gen_range(0.0..=size as f32 - h);
            let face = BBox::new(x, y, x + w, y + h);
            if faces.iter().all(|f| jaccard(f, &face) <= MAX_FACE_OVERLAP) {
                let skin = [rng.gen_range(0.7..0.98), rng.gen_range(0.5..0.8), rng.gen_range(0.35..0.65)];
                let feature = [rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.2)];
                draw_face(&mut canvas, &face, skin, feature);
                faces.push(face);
                break;
            }
        }
    }
    for v in canvas.planes.iter_mut() {
        *v += rng.gen_range(-0.04..0.04);
    }
    Sample {
        image: Image::from_planar(size, size, &canvas.planes),
        faces,
    }
}

pub fn generate_dataset(seed: u64, count: usize, cfg: &DataConfig) -> Vec<Sample> {
    (0..count as u64).map(|i| generate_sample(seed, i, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataConfig {
        DataConfig {
            image_size: 128,
            ..DataConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_dataset(3, 4, &small());
        let b = generate_dataset(3, 4, &small());
        assert_eq!(a, b);
        assert_ne!(a[0], generate_sample(4, 0, &small()));
    }

    #[test]
    fn faces_valid_and_in_bounds() {
        let cfg = small();
        for s in generate_dataset(1, 30, &cfg) {
            assert!(!s.faces.is_empty() && s.faces.len() <= cfg.max_faces);
            for f in &s.faces {
                assert!(f.is_valid());
                assert!(f.xmin >= 0.0 && f.ymin >= 0.0 && f.xmax <= 128.0 && f.ymax <= 128.0);
                assert!(f.side() >= cfg.min_face * 0.999);
            }
        }
    }
}
