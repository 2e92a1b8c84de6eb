//! Anchor grid, ground-truth matching and box coding.

use serde::{Deserialize, Serialize};

use crate::config::AnchorConfig;
use crate::{FanetError, Result, NUM_LAYERS, STRIDES};

/// Axis-aligned box in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f32,
    pub ymin: f32,
    pub xmax: f32,
    pub ymax: f32,
}

impl BBox {
    pub const fn new(xmin: f32, ymin: f32, xmax: f32, ymax: f32) -> Self {
        BBox { xmin, ymin, xmax, ymax }
    }

    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f32 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f32 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    /// Longer side; the size used for bucketing.
    pub fn side(&self) -> f32 {
        self.width().max(self.height())
    }

    pub fn is_valid(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax].iter().all(|v| v.is_finite())
            && self.xmax > self.xmin
            && self.ymax > self.ymin
    }

    /// Intersection with `[0, w] x [0, h]`; `None` if nothing is left.
    pub fn clip(&self, w: f32, h: f32) -> Option<BBox> {
        let b = BBox::new(self.xmin.max(0.0), self.ymin.max(0.0), self.xmax.min(w), self.ymax.min(h));
        b.is_valid().then_some(b)
    }

    pub fn scaled(&self, sx: f32, sy: f32) -> BBox {
        BBox::new(self.xmin * sx, self.ymin * sy, self.xmax * sx, self.ymax * sy)
    }

    pub fn translated(&self, dx: f32, dy: f32) -> BBox {
        BBox::new(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)
    }

    /// Mirror across the vertical axis of an image `width` pixels wide.
    pub fn flipped(&self, width: f32) -> BBox {
        BBox::new(width - self.xmax, self.ymin, width - self.xmin, self.ymax)
    }
}

/// Intersection over union.
pub fn jaccard(a: &BBox, b: &BBox) -> f32 {
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    pub layer: Vec<u8>,
    pub scale: Vec<f32>,
    /// Feature-map side per layer.
    pub grids: [usize; NUM_LAYERS],
    /// Index of the first anchor of each layer, plus the total at the end.
    pub offsets: [usize; NUM_LAYERS + 1],
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Flat index of cell `(row, col)` on `layer`.
    pub fn index(&self, layer: usize, row: usize, col: usize) -> usize {
        self.offsets[layer] + row * self.grids[layer] + col
    }
}

/// One square anchor per cell, centred at `(i + 0.5) * stride`; layers in
/// order, cells row-major.
pub fn generate_anchors(input_size: usize, scales: &[f32]) -> Result<AnchorSet> {
    if scales.len() != NUM_LAYERS {
        return Err(FanetError::config(
            "anchors.scales",
            format!("expected {NUM_LAYERS} scales, got {}", scales.len()),
        ));
    }
    if input_size == 0 || input_size % STRIDES[NUM_LAYERS - 1] != 0 {
        return Err(FanetError::config(
            "backbone.input_size",
            format!("{input_size} is not a multiple of {}", STRIDES[NUM_LAYERS - 1]),
        ));
    }
    let mut set = AnchorSet {
        boxes: Vec::new(),
        layer: Vec::new(),
        scale: Vec::new(),
        grids: [0; NUM_LAYERS],
        offsets: [0; NUM_LAYERS + 1],
    };
    for (l, (&stride, &s)) in STRIDES.iter().zip(scales).enumerate() {
        let g = input_size / stride;
        set.grids[l] = g;
        set.offsets[l] = set.boxes.len();
        for i in 0..g {
            for j in 0..g {
                let cx = (j as f32 + 0.5) * stride as f32;
                let cy = (i as f32 + 0.5) * stride as f32;
                set.boxes.push(BBox::from_center(cx, cy, s, s));
                set.layer.push(l as u8);
                set.scale.push(s);
            }
        }
    }
    set.offsets[NUM_LAYERS] = set.boxes.len();
    Ok(set)
}

/// SSD-style box coding with centre and size variances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxCoder {
    pub variances: [f32; 2],
}

impl Default for BoxCoder {
    fn default() -> Self {
        BoxCoder { variances: [0.1, 0.2] }
    }
}

impl BoxCoder {
    pub fn from_config(cfg: &AnchorConfig) -> Self {
        BoxCoder {
            variances: cfg.variances,
        }
    }

    pub fn encode(&self, anchor: &BBox, face: &BBox) -> [f32; 4] {
        let (acx, acy) = anchor.center();
        let (fcx, fcy) = face.center();
        let (aw, ah) = (anchor.width(), anchor.height());
        let [v1, v2] = self.variances;
        [
            (fcx - acx) / (aw * v1),
            (fcy - acy) / (ah * v1),
            (face.width() / aw).ln() / v2,
            (face.height() / ah).ln() / v2,
        ]
    }

    pub fn decode(&self, anchor: &BBox, t: &[f32; 4]) -> BBox {
        let (acx, acy) = anchor.center();
        let (aw, ah) = (anchor.width(), anchor.height());
        let [v1, v2] = self.variances;
        let cx = acx + t[0] * v1 * aw;
        let cy = acy + t[1] * v1 * ah;
        let w = aw * (t[2] * v2).exp();
        let h = ah * (t[3] * v2).exp();
        BBox::from_center(cx, cy, w, h)
    }
}

/// Per-anchor matching result.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchAssignment {
    /// Matched face per anchor; `None` is background.
    pub labels: Vec<Option<u32>>,
    /// Encoded regression target per anchor (zero for negatives).
    pub targets: Vec<[f32; 4]>,
}

impl MatchAssignment {
    pub fn all_negative(anchors: usize) -> Self {
        MatchAssignment {
            labels: vec![None; anchors],
            targets: vec![[0.0; 4]; anchors],
        }
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| l.map(|f| (i, f)))
    }
}

/// Anchors that can overlap `face` at all, in increasing index order.
fn candidates(anchors: &AnchorSet, face: &BBox) -> Vec<usize> {
    let mut out = Vec::new();
    for l in 0..NUM_LAYERS {
        let (g, stride) = (anchors.grids[l] as isize, STRIDES[l] as f32);
        if g == 0 {
            continue;
        }
        let half = anchors.scale[anchors.offsets[l]] / 2.0;
        // Cells whose centre c satisfies xmin - half < c < xmax + half.
        let range = |lo: f32, hi: f32| {
            let first = ((lo - half) / stride - 0.5).floor() as isize;
            let last = ((hi + half) / stride - 0.5).ceil() as isize;
            (first.max(0), last.min(g - 1))
        };
        let (c0, c1) = range(face.xmin, face.xmax);
        let (r0, r1) = range(face.ymin, face.ymax);
        for r in r0..=r1 {
            for c in c0..=c1 {
                out.push(anchors.index(l, r as usize, c as usize));
            }
        }
    }
    out
}

/// Match anchors to faces.
///
/// Every anchor takes the face it overlaps most (lowest face index on ties)
/// when that overlap exceeds `threshold`. Then each face, in order, forces
/// its best-overlapping anchor positive (lowest anchor index on ties); an
/// anchor already forced by an earlier face is skipped so every face keeps
/// at least one positive.
pub fn match_anchors(anchors: &AnchorSet, faces: &[BBox], threshold: f32, coder: &BoxCoder) -> MatchAssignment {
    let n = anchors.len();
    let mut out = MatchAssignment::all_negative(n);
    if faces.is_empty() {
        return out;
    }
    let mut best_iou = vec![0.0f32; n];
    let mut best_face = vec![u32::MAX; n];
    let mut per_face: Vec<Vec<(usize, f32)>> = Vec::with_capacity(faces.len());
    for (f, face) in faces.iter().enumerate() {
        let mut overlaps = Vec::new();
        for a in candidates(anchors, face) {
            let iou = jaccard(&anchors.boxes[a], face);
            if iou <= 0.0 {
                continue;
            }
            if iou > best_iou[a] {
                best_iou[a] = iou;
                best_face[a] = f as u32;
            }
            overlaps.push((a, iou));
        }
        per_face.push(overlaps);
    }
    for a in 0..n {
        if best_iou[a] > threshold {
            out.labels[a] = Some(best_face[a]);
        }
    }
    let mut forced = vec![false; n];
    for (f, overlaps) in per_face.iter().enumerate() {
        let mut best: Option<(usize, f32)> = None;
        for &(a, iou) in overlaps {
            if !forced[a] && best.map_or(true, |(_, b)| iou > b) {
                best = Some((a, iou));
            }
        }
        if let Some((a, _)) = best {
            forced[a] = true;
            out.labels[a] = Some(f as u32);
        }
    }
    for (a, f) in out.labels.iter().enumerate() {
        if let Some(f) = f {
            out.targets[a] = coder.encode(&anchors.boxes[a], &faces[*f as usize]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_count_and_first_box() {
        let a = generate_anchors(256, &[4.0, 8.0, 16.0, 32.0, 64.0, 128.0]).unwrap();
        assert_eq!(a.len(), 5460);
        assert_eq!(a.boxes[0], BBox::new(0.0, 0.0, 4.0, 4.0));
        assert!(a.boxes.iter().all(|b| b.is_valid() && b.width() == b.height()));
        assert_eq!(a.offsets[NUM_LAYERS], 5460);
        assert!(generate_anchors(256, &[4.0; 5]).is_err());
    }

    #[test]
    fn jaccard_examples() {
        let a = BBox::new(0.0, 0.0, 16.0, 16.0);
        assert_eq!(jaccard(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        let v = jaccard(&a, &BBox::new(8.0, 8.0, 24.0, 24.0));
        assert!((v - 64.0 / 448.0).abs() < 1e-6);
    }

    #[test]
    fn encode_example_and_fixed_point() {
        let c = BoxCoder::default();
        let a = BBox::new(0.0, 0.0, 16.0, 16.0);
        let t = c.encode(&a, &BBox::new(4.0, 4.0, 20.0, 20.0));
        for (got, want) in t.iter().zip([2.5, 2.5, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-6, "{t:?}");
        }
        assert_eq!(c.encode(&a, &a), [0.0; 4]);
    }

    #[test]
    fn exact_anchor_face_is_positive() {
        let a = generate_anchors(256, &[4.0, 8.0, 16.0, 32.0, 64.0, 128.0]).unwrap();
        let face = a.boxes[a.index(2, 3, 5)];
        let m = match_anchors(&a, &[face], 0.35, &BoxCoder::default());
        assert_eq!(m.labels[a.index(2, 3, 5)], Some(0));
        assert_eq!(m.targets[a.index(2, 3, 5)], [0.0; 4]);
    }

    #[test]
    fn weak_face_gets_exactly_one_positive() {
        let a = generate_anchors(256, &[4.0, 8.0, 16.0, 32.0, 64.0, 128.0]).unwrap();
        // 3x24 sliver: no square anchor overlaps it above 0.35.
        let face = BBox::new(100.0, 100.0, 103.0, 124.0);
        let m = match_anchors(&a, &[face], 0.35, &BoxCoder::default());
        assert_eq!(m.num_positive(), 1);
    }

    #[test]
    fn no_faces_all_negative() {
        let a = generate_anchors(128, &[4.0, 8.0, 16.0, 32.0, 64.0, 128.0]).unwrap();
        assert_eq!(match_anchors(&a, &[], 0.35, &BoxCoder::default()).num_positive(), 0);
    }
}
