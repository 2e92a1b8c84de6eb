//! Brute-force reference implementations and random scene generators.
#![allow(dead_code)]

use fanet::anchors::{jaccard, AnchorSet, BBox, BoxCoder, MatchAssignment};
use fanet::config::DataConfig;
use fanet::data::Bucket;
use fanet::inference::Detections;
use rand::Rng;

/// Double loop over every anchor and face, no spatial culling.
pub fn match_oracle(anchors: &AnchorSet, faces: &[BBox], threshold: f32, coder: &BoxCoder) -> MatchAssignment {
    let n = anchors.len();
    let mut labels = vec![None; n];
    for (a, label) in labels.iter_mut().enumerate() {
        let mut best = (0.0f32, None);
        for (f, face) in faces.iter().enumerate() {
            let iou = jaccard(&anchors.boxes[a], face);
            if iou > best.0 {
                best = (iou, Some(f as u32));
            }
        }
        if best.0 > threshold {
            *label = best.1;
        }
    }
    let mut forced = vec![false; n];
    for (f, face) in faces.iter().enumerate() {
        let mut best = (0.0f32, None);
        for a in 0..n {
            let iou = jaccard(&anchors.boxes[a], face);
            if !forced[a] && iou > best.0 {
                best = (iou, Some(a));
            }
        }
        if let (_, Some(a)) = best {
            forced[a] = true;
            labels[a] = Some(f as u32);
        }
    }
    let targets = labels
        .iter()
        .enumerate()
        .map(|(a, l)| match l {
            Some(f) => coder.encode(&anchors.boxes[a], &faces[*f as usize]),
            None => [0.0; 4],
        })
        .collect();
    MatchAssignment { labels, targets }
}

/// Quadratic NMS: every kept box suppresses all later boxes it overlaps.
pub fn nms_oracle(boxes: &[BBox], scores: &[f32], threshold: f32) -> Vec<usize> {
    let n = boxes.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Insertion sort keeps equal scores in index order.
    for i in 1..n {
        let mut j = i;
        while j > 0 && scores[order[j - 1]] < scores[order[j]] {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut suppressed = vec![false; n];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if jaccard(&boxes[i], &boxes[j]) > threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// AP by replaying detections in score order and summing
/// `(r_i - r_{i-1}) * max_{j >= i} p_j` over the counted detections.
pub fn ap_oracle(
    dets: &[Detections],
    gts: &[Vec<BBox>],
    iou: f32,
    bucket: Option<Bucket>,
    data: &DataConfig,
) -> Option<f64> {
    let in_bucket = |f: &BBox| bucket.map_or(true, |b| Bucket::of(f, data.hard_below, data.medium_below) == b);
    let n_gt = gts.iter().flatten().filter(|f| in_bucket(f)).count();
    if n_gt == 0 {
        return None;
    }
    let mut all = Vec::new();
    for (img, d) in dets.iter().enumerate() {
        for k in 0..d.scores.len() {
            all.push((img, k));
        }
    }
    all.sort_by(|a, b| {
        dets[b.0].scores[b.1]
            .partial_cmp(&dets[a.0].scores[a.1])
            .unwrap()
            .then(a.cmp(b))
    });
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (img, k) in all {
        let det = dets[img].boxes[k];
        let mut candidates: Vec<(f32, usize)> = gts[img]
            .iter()
            .enumerate()
            .filter(|(g, f)| in_bucket(f) && !taken[img][*g])
            .map(|(g, f)| (jaccard(&det, f), g))
            .filter(|(o, _)| *o >= iou)
            .collect();
        // Highest overlap, lowest index among equals.
        candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        if let Some(&(_, g)) = candidates.first() {
            taken[img][g] = true;
            tp += 1;
        } else if gts[img].iter().any(|f| !in_bucket(f) && jaccard(&det, f) >= iou) {
            continue;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for i in 0..points.len() {
        let envelope = points[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (points[i].0 - prev) * envelope;
        prev = points[i].0;
    }
    Some(ap)
}

/// Full sort by descending loss, ties by index.
pub fn mining_oracle(loss: &[f64], labels: &[Option<u32>], ratio: usize) -> Vec<usize> {
    let positives = labels.iter().flatten().count();
    let mut neg: Vec<(f64, usize)> = (0..labels.len()).filter(|&i| labels[i].is_none()).map(|i| (loss[i], i)).collect();
    neg.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    neg.truncate(ratio * positives);
    neg.into_iter().map(|(_, i)| i).collect()
}

/// Face-like boxes inside a `size` square, sides log-uniform in `[2, 160]`.
/// Some scenes repeat a box to exercise ties.
pub fn random_faces<R: Rng>(rng: &mut R, size: f32, max: usize) -> Vec<BBox> {
    let n = rng.gen_range(0..=max);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        if !faces.is_empty() && rng.gen_bool(0.05) {
            let copy = faces[rng.gen_range(0..faces.len())];
            faces.push(copy);
            continue;
        }
        let side = (rng.gen_range(2f32.ln()..160f32.ln())).exp().min(size - 1.0);
        let aspect = rng.gen_range(0.7..1.4);
        let (w, h) = (side, (side * aspect).min(size - 1.0));
        let x = rng.gen_range(0.0..size - w);
        let y = rng.gen_range(0.0..size - h);
        faces.push(BBox::new(x, y, x + w, y + h));
    }
    faces
}

/// Clustered random boxes, with a share of duplicated scores.
pub fn random_boxes<R: Rng>(rng: &mut R, n: usize, size: f32) -> (Vec<BBox>, Vec<f32>) {
    let centres: Vec<(f32, f32)> = (0..4).map(|_| (rng.gen_range(0.0..size), rng.gen_range(0.0..size))).collect();
    let mut boxes = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let (cx, cy) = centres[rng.gen_range(0..centres.len())];
        let w = rng.gen_range(4.0..60.0);
        let h = rng.gen_range(4.0..60.0);
        let b = BBox::from_center(cx + rng.gen_range(-20.0..20.0), cy + rng.gen_range(-20.0..20.0), w, h);
        boxes.push(b);
        let s = if rng.gen_bool(0.2) { 0.5 } else { rng.gen_range(0.0..1.0) };
        scores.push(s);
    }
    (boxes, scores)
}

/// Detections scattered around the ground truth: jittered copies plus
/// background boxes.
pub fn random_ap_instance<R: Rng>(rng: &mut R, images: usize) -> (Vec<Detections>, Vec<Vec<BBox>>) {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let faces = random_faces(rng, 256.0, 6);
        let mut d = Detections::default();
        for f in &faces {
            for _ in 0..rng.gen_range(0..3) {
                let j = f.width().max(f.height()) * 0.3;
                d.boxes.push(f.translated(rng.gen_range(-j..j), rng.gen_range(-j..j)));
                d.scores.push((rng.gen_range(0..20) as f32) / 20.0);
            }
        }
        for _ in 0..rng.gen_range(0..4) {
            let (b, _) = random_boxes(rng, 1, 256.0);
            d.boxes.push(b[0]);
            d.scores.push((rng.gen_range(0..20) as f32) / 20.0);
        }
        dets.push(d);
        gts.push(faces);
    }
    (dets, gts)
}
