//! Decoding, non-maximum suppression and single/multi-scale detection.

use std::io::Write;

use fanet_tensor::Scalar;

use crate::anchors::{generate_anchors, jaccard, AnchorSet, BBox, BoxCoder};
use crate::config::InferenceConfig;
use crate::data::{batch_tensor, Image};
use crate::model::{Detector, HeadLevels, LevelPredictions};
use crate::{Result, STRIDES};

/// Scored boxes of one image, sorted by descending score.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Detections {
    pub boxes: Vec<BBox>,
    pub scores: Vec<f32>,
}

impl Detections {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    fn select(&self, keep: &[usize]) -> Detections {
        Detections {
            boxes: keep.iter().map(|&i| self.boxes[i]).collect(),
            scores: keep.iter().map(|&i| self.scores[i]).collect(),
        }
    }
}

/// Indices sorted by descending score, lower index first on ties.
fn by_score(scores: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy NMS: walk boxes by descending score and keep each one whose IoU
/// with every kept box is at most `iou_threshold`.
pub fn nms(boxes: &[BBox], scores: &[f32], iou_threshold: f32) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for i in by_score(scores) {
        if keep.iter().all(|&k| jaccard(&boxes[k], &boxes[i]) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

/// Face probability of a `(z_background, z_face)` logit pair.
pub fn face_score(z0: f32, z1: f32) -> f32 {
    1.0 / (1.0 + (z0 - z1).exp())
}

/// Scores above the threshold, decoded and clipped to `width x height`,
/// before NMS. Boxes clipped to nothing are dropped.
pub fn decode_candidates<T: Scalar>(
    preds: &LevelPredictions<T>,
    image: usize,
    anchors: &AnchorSet,
    coder: &BoxCoder,
    score_threshold: f32,
    (width, height): (f32, f32),
) -> Detections {
    let mut out = Detections::default();
    let mut a = 0;
    for (cls, loc) in preds.cls.iter().zip(&preds.loc) {
        let hw = cls.dim(2) * cls.dim(3);
        let (c, l) = (cls.data(), loc.data());
        for p in 0..hw {
            let at = |data: &[T], ch: usize, channels: usize| data[(image * channels + ch) * hw + p].to_f32().unwrap();
            let score = face_score(at(&c, 0, 2), at(&c, 1, 2));
            if score > score_threshold {
                let t = [at(&l, 0, 4), at(&l, 1, 4), at(&l, 2, 4), at(&l, 3, 4)];
                if let Some(b) = coder.decode(&anchors.boxes[a + p], &t).clip(width, height) {
                    out.boxes.push(b);
                    out.scores.push(score);
                }
            }
        }
        a += hw;
    }
    out
}

/// NMS followed by the `top_k` best.
pub fn suppress(candidates: &Detections, cfg: &InferenceConfig) -> Detections {
    let mut keep = nms(&candidates.boxes, &candidates.scores, cfg.nms_threshold);
    keep.truncate(cfg.top_k);
    candidates.select(&keep)
}

/// Run the top-level heads on a batch of square images of one size.
pub fn detect_batch<T: Scalar>(model: &Detector<T>, images: &[&Image], cfg: &InferenceConfig) -> Result<Vec<Detections>> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let size = first.width;
    let x = batch_tensor::<T>(images)?;
    let out = model.forward(&x, HeadLevels::Top)?;
    let anchors = generate_anchors(size, &model.config().anchors.scales)?;
    let coder = BoxCoder::from_config(&model.config().anchors);
    let top = out.top();
    Ok((0..images.len())
        .map(|i| {
            let c = decode_candidates(top, i, &anchors, &coder, cfg.score_threshold, (size as f32, size as f32));
            suppress(&c, cfg)
        })
        .collect())
}

pub fn detect<T: Scalar>(model: &Detector<T>, image: &Image, cfg: &InferenceConfig) -> Result<Detections> {
    Ok(detect_batch(model, &[image], cfg)?.remove(0))
}

/// Resize so the shorter side is each of `scales`, pad to a square whose
/// side is a multiple of the largest stride, detect, map back, merge and
/// apply one final NMS.
pub fn multiscale_detect<T: Scalar>(
    model: &Detector<T>,
    image: &Image,
    scales: &[usize],
    cfg: &InferenceConfig,
) -> Result<Detections> {
    let unit = STRIDES[STRIDES.len() - 1];
    let short = image.width.min(image.height) as f32;
    let mut merged = Detections::default();
    let mut seen = Vec::new();
    for &s in scales {
        if seen.contains(&s) {
            continue;
        }
        seen.push(s);
        let ratio = s as f32 / short;
        let w = ((image.width as f32 * ratio).round() as usize).max(1);
        let h = ((image.height as f32 * ratio).round() as usize).max(1);
        let side = w.max(h).div_ceil(unit) * unit;
        let input = image.resize(w, h).pad_to_square(side);
        let (sx, sy) = (image.width as f32 / w as f32, image.height as f32 / h as f32);
        let dets = detect_batch(model, &[&input], cfg)?.remove(0);
        for (b, score) in dets.boxes.iter().zip(&dets.scores) {
            let back = b.scaled(sx, sy);
            if let Some(b) = back.clip(image.width as f32, image.height as f32) {
                merged.boxes.push(b);
                merged.scores.push(*score);
            }
        }
    }
    Ok(suppress(&merged, cfg))
}

/// One line per detection: `image_id xmin ymin xmax ymax score`.
pub fn write_detections<W: Write>(out: &mut W, image_id: &str, dets: &Detections) -> Result<()> {
    for (b, s) in dets.boxes.iter().zip(&dets.scores) {
        writeln!(out, "{image_id} {:.2} {:.2} {:.2} {:.2} {:.4}", b.xmin, b.ymin, b.xmax, b.ymax, s)?;
    }
    Ok(())
}

/// Copy of `image` with each box outlined in red.
pub fn draw_detections(image: &Image, dets: &Detections) -> Image {
    let mut out = image.clone();
    let (w, h) = (image.width as isize, image.height as isize);
    let mut put = |x: isize, y: isize| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            out.set_pixel(x as usize, y as usize, [255, 0, 0]);
        }
    };
    for b in &dets.boxes {
        let (x0, y0) = (b.xmin.floor() as isize, b.ymin.floor() as isize);
        let (x1, y1) = ((b.xmax.ceil() as isize - 1).max(x0), (b.ymax.ceil() as isize - 1).max(y0));
        for x in x0..=x1 {
            put(x, y0);
            put(x, y1);
        }
        for y in y0..=y1 {
            put(x0, y);
            put(x1, y);
        }
    }
    out
}
