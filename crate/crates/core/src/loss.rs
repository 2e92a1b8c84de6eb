//! Multibox loss with online hard-negative mining, and the weighted sum of
//! per-level losses.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use fanet_tensor::ops::linear_combination;
use fanet_tensor::{kink, GradFn, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::anchors::MatchAssignment;
use crate::config::LossConfig;
use crate::model::LevelPredictions;
use crate::{FanetError, Result};

/// Statistics of one level's loss, already divided by the positive count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelLoss {
    pub total: f64,
    pub cls: f64,
    pub loc: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub weights: Vec<f64>,
    pub per_level: Vec<LevelLoss>,
}

/// `log(exp(z0) + exp(z1)) - z[target]`.
fn cross_entropy(z0: f64, z1: f64, target: usize) -> f64 {
    let m = z0.max(z1);
    let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
    lse - if target == 0 { z0 } else { z1 }
}

fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

/// Indices of negatives kept for one image: the `ratio * positives`
/// highest background losses (lower index first on ties), or all of them
/// if there are fewer.
pub fn hard_negative_mine(background_loss: &[f64], labels: &[Option<u32>], ratio: usize) -> Vec<usize> {
    let positives = labels.iter().filter(|l| l.is_some()).count();
    let mut negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_none()).collect();
    let keep = (ratio * positives).min(negatives.len());
    if keep == 0 {
        return Vec::new();
    }
    let by_loss = |a: &usize, b: &usize| background_loss[*b].total_cmp(&background_loss[*a]).then(a.cmp(b));
    if keep < negatives.len() {
        negatives.select_nth_unstable_by(keep - 1, by_loss);
        negatives.truncate(keep);
    }
    negatives.sort_unstable_by(by_loss);
    negatives
}

struct MultiboxFn<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    /// d(loss)/d(input) per input, for an output gradient of 1.
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> GradFn<T> for MultiboxFn<T> {
    fn name(&self) -> &'static str {
        "multibox_loss"
    }
    fn inputs(&self) -> Vec<Tensor<T>> {
        self.inputs.clone()
    }
    fn backward(&self, grad_out: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let g = grad_out[0];
        self.grads
            .iter()
            .zip(needs)
            .map(|(d, &need)| need.then(|| d.iter().map(|&v| v * g).collect()))
            .collect()
    }
}

fn check_shapes<T: Scalar>(preds: &LevelPredictions<T>, assigns: &[MatchAssignment]) -> Result<()> {
    let bad = |detail: String| Err(FanetError::config("loss", detail));
    if preds.cls.len() != preds.loc.len() {
        return bad("cls and loc head counts differ".into());
    }
    let mut anchors = 0;
    for (c, l) in preds.cls.iter().zip(&preds.loc) {
        let (cs, ls) = (c.shape(), l.shape());
        if cs.len() != 4 || cs[1] != 2 || ls.len() != 4 || ls[1] != 4 || cs[0] != ls[0] || cs[2..] != ls[2..] {
            return bad(format!("head outputs {cs:?} / {ls:?} are not [N,2,H,W] / [N,4,H,W]"));
        }
        if cs[0] != assigns.len() {
            return bad(format!("batch of {} with {} assignments", cs[0], assigns.len()));
        }
        anchors += cs[2] * cs[3];
    }
    if let Some(a) = assigns.iter().find(|a| a.labels.len() != anchors) {
        return bad(format!("assignment covers {} anchors, heads produce {anchors}", a.labels.len()));
    }
    Ok(())
}

/// Multibox loss of one level over a batch: `(lambda * L_cls + L_loc) / N`
/// with `N` the number of positives in the batch; zero when `N == 0`.
pub fn multibox_loss<T: Scalar>(
    preds: &LevelPredictions<T>,
    assigns: &[MatchAssignment],
    cfg: &LossConfig,
) -> Result<(Tensor<T>, LevelLoss)> {
    check_shapes(preds, assigns)?;
    let layers = preds.cls.len();
    let cls_data: Vec<Vec<T>> = preds.cls.iter().map(Tensor::to_vec).collect();
    let loc_data: Vec<Vec<T>> = preds.loc.iter().map(Tensor::to_vec).collect();
    let mut cls_grad: Vec<Vec<f64>> = cls_data.iter().map(|d| vec![0.0; d.len()]).collect();
    let mut loc_grad: Vec<Vec<f64>> = loc_data.iter().map(|d| vec![0.0; d.len()]).collect();

    // Flat anchor index -> (layer, cell, cells in layer).
    let mut cells = Vec::new();
    for (l, c) in preds.cls.iter().enumerate() {
        let hw = c.dim(2) * c.dim(3);
        cells.extend((0..hw).map(|p| (l, p, hw)));
    }
    let logit = |b: usize, a: usize, ch: usize| -> (usize, usize) {
        let (l, p, hw) = cells[a];
        (l, (b * 2 + ch) * hw + p)
    };
    let offset = |b: usize, a: usize, ch: usize| -> (usize, usize) {
        let (l, p, hw) = cells[a];
        (l, (b * 4 + ch) * hw + p)
    };

    let n_pos: usize = assigns.iter().map(MatchAssignment::num_positive).sum();
    let mut stats = LevelLoss {
        positives: n_pos,
        ..LevelLoss::default()
    };
    let mut mined = DefaultHasher::new();
    if n_pos > 0 {
        let norm = 1.0 / n_pos as f64;
        let lambda = cfg.lambda;
        let (mut l_cls, mut l_loc) = (0.0, 0.0);
        for (b, assign) in assigns.iter().enumerate() {
            let z = |a: usize| {
                let (l0, i0) = logit(b, a, 0);
                let (l1, i1) = logit(b, a, 1);
                (cls_data[l0][i0].to_f64().unwrap(), cls_data[l1][i1].to_f64().unwrap())
            };
            let bg: Vec<f64> = (0..cells.len())
                .map(|a| match assign.labels[a] {
                    None => {
                        let (z0, z1) = z(a);
                        cross_entropy(z0, z1, 0)
                    }
                    Some(_) => 0.0,
                })
                .collect();
            let kept = hard_negative_mine(&bg, &assign.labels, cfg.neg_pos_ratio);
            stats.negatives += kept.len();
            for &a in &kept {
                mined.write_usize(b * cells.len() + a);
            }
            let mut classify = |a: usize, target: usize| {
                let (z0, z1) = z(a);
                l_cls += cross_entropy(z0, z1, target);
                let p1 = 1.0 / (1.0 + (z0 - z1).exp());
                let d1 = p1 - if target == 1 { 1.0 } else { 0.0 };
                let (l0, i0) = logit(b, a, 0);
                let (l1, i1) = logit(b, a, 1);
                cls_grad[l0][i0] -= lambda * norm * d1;
                cls_grad[l1][i1] += lambda * norm * d1;
            };
            for (a, _) in assign.positives() {
                classify(a, 1);
            }
            for &a in &kept {
                classify(a, 0);
            }
            for (a, _) in assign.positives() {
                for ch in 0..4 {
                    let (l, i) = offset(b, a, ch);
                    let r = loc_data[l][i].to_f64().unwrap() - assign.targets[a][ch] as f64;
                    let (v, d) = smooth_l1(r);
                    l_loc += v;
                    loc_grad[l][i] += norm * d;
                }
            }
        }
        stats.cls = l_cls * norm;
        stats.loc = l_loc * norm;
        stats.total = lambda * stats.cls + stats.loc;
    }
    if kink::is_active() {
        kink::record(&mined.finish());
    }
    let inputs: Vec<Tensor<T>> = preds.cls.iter().chain(&preds.loc).cloned().collect();
    let grads = cls_grad
        .into_iter()
        .chain(loc_grad)
        .map(|g| g.into_iter().map(T::cast).collect())
        .collect();
    debug_assert_eq!(inputs.len(), 2 * layers);
    let out = Tensor::from_op(vec![], vec![T::cast(stats.total)], Box::new(MultiboxFn { inputs, grads }));
    Ok((out, stats))
}

/// Weighted sum of per-level multibox losses on a shared assignment.
pub fn hierarchical_loss<T: Scalar>(
    levels: &[&LevelPredictions<T>],
    assigns: &[MatchAssignment],
    weights: &[f64],
    cfg: &LossConfig,
) -> Result<(Tensor<T>, LossReport)> {
    if weights.len() != levels.len() {
        return Err(FanetError::config(
            "loss.level_weights",
            format!("{} weights for {} levels", weights.len(), levels.len()),
        ));
    }
    let mut terms = Vec::with_capacity(levels.len());
    let mut per_level = Vec::with_capacity(levels.len());
    for preds in levels {
        let (t, s) = multibox_loss(preds, assigns, cfg)?;
        terms.push(t);
        per_level.push(s);
    }
    let coeffs: Vec<T> = weights.iter().map(|&w| T::cast(w)).collect();
    let total = linear_combination(&terms, &coeffs)?;
    let report = LossReport {
        total: total.item().to_f64().unwrap(),
        weights: weights.to_vec(),
        per_level,
    };
    Ok((total, report))
}
