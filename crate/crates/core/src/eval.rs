//! Average precision at an IoU threshold, optionally restricted to one
//! size bucket.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::anchors::{jaccard, BBox};
use crate::config::DataConfig;
use crate::data::Bucket;
use crate::inference::Detections;
use crate::Result;

pub const IOU_THRESHOLD: f32 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// One point per counted (non-ignored) detection, in score order.
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
}

/// Area under the precision envelope (all-points interpolation).
pub fn interpolated_ap(recall: &[f64], precision: &[f64]) -> f64 {
    let mut r = Vec::with_capacity(recall.len() + 2);
    let mut p = Vec::with_capacity(precision.len() + 2);
    r.push(0.0);
    p.push(0.0);
    r.extend_from_slice(recall);
    p.extend_from_slice(precision);
    r.push(1.0);
    p.push(0.0);
    for i in (0..p.len() - 1).rev() {
        p[i] = p[i].max(p[i + 1]);
    }
    (1..r.len()).map(|i| (r[i] - r[i - 1]) * p[i]).sum()
}

/// Pool detections over images and walk them by descending score (ties by
/// image, then rank). A detection is a true positive if its best-overlapping
/// unmatched in-bucket face has IoU >= `iou_threshold`; otherwise it is
/// ignored when it overlaps an out-of-bucket face that much, and a false
/// positive if not. Returns `None` when no face is in the bucket.
pub fn evaluate_ap(
    detections: &[Detections],
    ground_truth: &[Vec<BBox>],
    iou_threshold: f32,
    bucket: Option<Bucket>,
    data: &DataConfig,
) -> Option<PrCurve> {
    let relevant: Vec<Vec<bool>> = ground_truth
        .iter()
        .map(|faces| {
            faces
                .iter()
                .map(|f| bucket.map_or(true, |b| Bucket::of(f, data.hard_below, data.medium_below) == b))
                .collect()
        })
        .collect();
    let n_gt = relevant.iter().flatten().filter(|&&r| r).count();
    if n_gt == 0 {
        return None;
    }
    let mut pooled: Vec<(f32, usize, usize)> = detections
        .iter()
        .enumerate()
        .flat_map(|(img, d)| d.scores.iter().enumerate().map(move |(k, &s)| (s, img, k)))
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|f| vec![false; f.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = PrCurve {
        recall: Vec::new(),
        precision: Vec::new(),
        ap: 0.0,
    };
    for (_, img, k) in pooled {
        let det = &detections[img].boxes[k];
        let faces = &ground_truth[img];
        let mut best: Option<(usize, f32)> = None;
        for (g, face) in faces.iter().enumerate() {
            if !relevant[img][g] || matched[img][g] {
                continue;
            }
            let iou = jaccard(det, face);
            if iou >= iou_threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            matched[img][g] = true;
            tp += 1;
        } else if faces
            .iter()
            .zip(&relevant[img])
            .any(|(f, &rel)| !rel && jaccard(det, f) >= iou_threshold)
        {
            continue;
        } else {
            fp += 1;
        }
        curve.recall.push(tp as f64 / n_gt as f64);
        curve.precision.push(tp as f64 / (tp + fp) as f64);
    }
    curve.ap = interpolated_ap(&curve.recall, &curve.precision);
    Some(curve)
}

/// AP per bucket and over all faces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketAp {
    pub easy: Option<f64>,
    pub medium: Option<f64>,
    pub hard: Option<f64>,
    pub all: Option<f64>,
}

impl BucketAp {
    pub fn get(&self, bucket: Bucket) -> Option<f64> {
        match bucket {
            Bucket::Easy => self.easy,
            Bucket::Medium => self.medium,
            Bucket::Hard => self.hard,
        }
    }
}

pub fn evaluate_buckets(detections: &[Detections], ground_truth: &[Vec<BBox>], data: &DataConfig) -> BucketAp {
    let ap = |b| evaluate_ap(detections, ground_truth, IOU_THRESHOLD, b, data).map(|c| c.ap);
    BucketAp {
        easy: ap(Some(Bucket::Easy)),
        medium: ap(Some(Bucket::Medium)),
        hard: ap(Some(Bucket::Hard)),
        all: ap(None),
    }
}

/// Two whitespace-separated columns, `recall precision`, one point per line.
pub fn write_pr_curve<W: Write>(out: &mut W, curve: &PrCurve) -> Result<()> {
    writeln!(out, "# recall precision (AP {:.6})", curve.ap)?;
    for (r, p) in curve.recall.iter().zip(&curve.precision) {
        writeln!(out, "{r:.6} {p:.6}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dets(items: &[(BBox, f32)]) -> Detections {
        Detections {
            boxes: items.iter().map(|x| x.0).collect(),
            scores: items.iter().map(|x| x.1).collect(),
        }
    }

    const GT: BBox = BBox::new(0.0, 0.0, 40.0, 40.0);

    #[test]
    fn single_hit_is_perfect() {
        let d = dets(&[(BBox::new(0.0, 0.0, 40.0, 30.0), 0.3)]);
        let c = evaluate_ap(&[d], &[vec![GT]], 0.5, None, &DataConfig::default()).unwrap();
        assert_eq!(c.ap, 1.0);
    }

    #[test]
    fn trailing_false_positive() {
        let far = BBox::new(100.0, 100.0, 140.0, 140.0);
        let d = dets(&[(GT, 0.9), (far, 0.8)]);
        let c = evaluate_ap(&[d], &[vec![GT]], 0.5, None, &DataConfig::default()).unwrap();
        assert_eq!(c.precision, vec![1.0, 0.5]);
        assert_eq!(c.ap, 1.0);
    }

    #[test]
    fn duplicate_is_false_positive() {
        let d = dets(&[(GT, 0.5), (GT, 0.9)]);
        let c = evaluate_ap(&[d], &[vec![GT]], 0.5, None, &DataConfig::default()).unwrap();
        assert_eq!(c.precision, vec![1.0, 0.5]);
    }

    #[test]
    fn out_of_bucket_faces_are_ignored() {
        let small = BBox::new(0.0, 0.0, 8.0, 8.0);
        let big = BBox::new(50.0, 50.0, 150.0, 150.0);
        let d = dets(&[(big, 0.9), (small, 0.5)]);
        let data = DataConfig::default();
        let c = evaluate_ap(&[d.clone()], &[vec![small, big]], 0.5, Some(Bucket::Hard), &data).unwrap();
        assert_eq!(c.precision, vec![1.0]);
        assert_eq!(c.ap, 1.0);
        assert!(evaluate_ap(&[d], &[vec![big]], 0.5, Some(Bucket::Hard), &data).is_none());
    }

    #[test]
    fn pr_file_format() {
        let c = PrCurve {
            recall: vec![0.5, 1.0],
            precision: vec![1.0, 0.5],
            ap: 0.75,
        };
        let mut buf = Vec::new();
        write_pr_curve(&mut buf, &c).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1), Some("0.500000 1.000000"));
    }
}
