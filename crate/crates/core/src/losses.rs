//! Training losses: softmax cross-entropy for the slice classifier, and the
//! two-sibling detection objective (multiclass hinge + smooth-L1 box
//! regression) whose total is the exact sum of its parts.

use crate::error::{Error, Result};
use crate::tape::GradTape;
use crate::tensor::Tensor;

fn require_rows(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [n, k] => Ok((*n, *k)),
        other => Err(Error::ShapeMismatch(format!(
            "{what} expects [N,K] logits, got {other:?}"
        ))),
    }
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
    }
    Ok(())
}

impl GradTape {
    /// Mean softmax cross-entropy over the batch, computed in log-sum-exp
    /// form so extreme logits stay finite.
    pub fn softmax_cross_entropy(&mut self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let (n, k) = require_rows(logits, "softmax_cross_entropy")?;
        check_labels(labels, n, k)?;
        if n == 0 {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        let z = logits.data();
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for r in 0..n {
            let row = &z[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[r * k + c] = e;
                denom += e;
            }
            for c in 0..k {
                probs[r * k + c] /= denom;
            }
            total += m + denom.ln() - row[labels[r]];
        }
        total /= n as f64;
        let labels = labels.to_vec();
        let logitsc = logits.clone();
        self.emit(vec![1], vec![total], logits.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(slot) = store.slot(&logitsc) {
                    let scale = g[0] / n as f64;
                    for r in 0..n {
                        for c in 0..k {
                            let indicator = if c == labels[r] { 1.0 } else { 0.0 };
                            slot[r * k + c] += scale * (probs[r * k + c] - indicator);
                        }
                    }
                }
            })
        })
    }

    /// Mean multiclass hinge loss:
    /// mean_r sum_{j != y_r} max(0, margin + z_j - z_y).
    pub fn multiclass_hinge(
        &mut self,
        logits: &Tensor,
        labels: &[usize],
        margin: f64,
    ) -> Result<Tensor> {
        let (n, k) = require_rows(logits, "multiclass_hinge")?;
        check_labels(labels, n, k)?;
        if n == 0 {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        if !(margin > 0.0) {
            return Err(Error::BadConfig(format!("hinge margin must be > 0, got {margin}")));
        }
        let z = logits.data();
        let mut total = 0.0;
        // Per-row set of violating classes, reused by the backward rule.
        let mut violations: Vec<Vec<usize>> = Vec::with_capacity(n);
        for r in 0..n {
            let row = &z[r * k..(r + 1) * k];
            let y = labels[r];
            let mut viol = Vec::new();
            for (j, &v) in row.iter().enumerate() {
                if j == y {
                    continue;
                }
                let m = margin + v - row[y];
                if m > 0.0 {
                    total += m;
                    viol.push(j);
                }
            }
            violations.push(viol);
        }
        total /= n as f64;
        let labels = labels.to_vec();
        let logitsc = logits.clone();
        self.emit(vec![1], vec![total], logits.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(slot) = store.slot(&logitsc) {
                    let scale = g[0] / n as f64;
                    for r in 0..n {
                        for &j in &violations[r] {
                            slot[r * k + j] += scale;
                            slot[r * k + labels[r]] -= scale;
                        }
                    }
                }
            })
        })
    }

    /// Smooth-L1 (Huber) between prediction and target, averaged over every
    /// element: 0.5 d^2/beta inside |d| < beta, |d| - 0.5 beta outside. The
    /// target is treated as a constant.
    pub fn smooth_l1(&mut self, pred: &Tensor, target: &Tensor, beta: f64) -> Result<Tensor> {
        if !(beta > 0.0) {
            return Err(Error::BadConfig(format!("smooth_l1 beta must be > 0, got {beta}")));
        }
        if pred.shape() != target.shape() {
            return Err(Error::ShapeMismatch(format!(
                "smooth_l1 pred {:?} vs target {:?}",
                pred.shape(),
                target.shape()
            )));
        }
        let count = pred.data().len();
        if count == 0 {
            return Err(Error::ShapeMismatch("smooth_l1 over empty tensors".into()));
        }
        let mut total = 0.0;
        for (&p, &t) in pred.data().iter().zip(target.data()) {
            let d = p - t;
            total += if d.abs() < beta { 0.5 * d * d / beta } else { d.abs() - 0.5 * beta };
        }
        total /= count as f64;
        let (predc, targetc) = (pred.clone(), target.clone());
        self.emit(vec![1], vec![total], pred.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(slot) = store.slot(&predc) {
                    let scale = g[0] / count as f64;
                    for (i, (&p, &t)) in
                        predc.data().iter().zip(targetc.data()).enumerate()
                    {
                        slot[i] += scale * ((p - t) / beta).clamp(-1.0, 1.0);
                    }
                }
            })
        })
    }

    /// Selects whole rows of a [N,K] tensor; backward scatters into place.
    pub fn select_rows(&mut self, x: &Tensor, rows: &[usize]) -> Result<Tensor> {
        let (n, k) = require_rows(x, "select_rows")?;
        for &r in rows {
            if r >= n {
                return Err(Error::ShapeMismatch(format!(
                    "select_rows index {r} out of {n}"
                )));
            }
        }
        let mut out = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            out.extend_from_slice(&x.data()[r * k..(r + 1) * k]);
        }
        let rows = rows.to_vec();
        let xc = x.clone();
        self.emit(vec![rows.len(), k], out, x.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(slot) = store.slot(&xc) {
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..k {
                            slot[r * k + c] += g[i * k + c];
                        }
                    }
                }
            })
        })
    }
}

/// The detection objective's three scalars. `total` is produced by adding the
/// sibling terms on the tape, so `total == cls_loss + bbox_loss` holds
/// bitwise.
#[derive(Debug, Clone)]
pub struct LossBundle {
    pub total: Tensor,
    pub cls_loss: Tensor,
    pub bbox_loss: Tensor,
}

/// Combines the two sibling-head scalars into the summed detection
/// objective with unit weights.
pub fn detection_loss(tape: &mut GradTape, cls: &Tensor, bbox: &Tensor) -> Result<LossBundle> {
    for (t, name) in [(cls, "cls"), (bbox, "bbox")] {
        if t.shape() != [1] {
            return Err(Error::NotScalarLoss(t.shape().to_vec()));
        }
        if !t.data()[0].is_finite() {
            return Err(Error::NonFiniteInput(format!("{name} loss is not finite")));
        }
    }
    let total = tape.add(cls, bbox)?;
    Ok(LossBundle { total, cls_loss: cls.clone(), bbox_loss: bbox.clone() })
}

/// Full detection objective: hinge over the class logits for every sampled
/// proposal, smooth-L1 over the box deltas of foreground proposals only
/// (label > 0). With no foreground rows the box term is exactly zero.
pub fn detection_objective(
    tape: &mut GradTape,
    cls_logits: &Tensor,
    labels: &[usize],
    bbox_pred: &Tensor,
    bbox_targets: &Tensor,
    margin: f64,
    beta: f64,
) -> Result<LossBundle> {
    let cls = tape.multiclass_hinge(cls_logits, labels, margin)?;
    let fg: Vec<usize> =
        labels.iter().enumerate().filter(|(_, &l)| l > 0).map(|(i, _)| i).collect();
    let bbox = if fg.is_empty() {
        Tensor::scalar(0.0)?
    } else {
        let pred_fg = tape.select_rows(bbox_pred, &fg)?;
        let target_fg = tape.select_rows(bbox_targets, &fg)?;
        tape.smooth_l1(&pred_fg, &target_fg, beta)?
    };
    detection_loss(tape, &cls, &bbox)
}

/// Row-wise argmax of a [N,K] logit matrix; ties resolve to the lower index.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    let (n, k) = require_rows(logits, "argmax_rows")?;
    let z = logits.data();
    Ok((0..n)
        .map(|r| {
            let row = &z[r * k..(r + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Softmax probabilities row by row (stable); pure helper for reporting.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (n, k) = require_rows(logits, "softmax_rows")?;
    let z = logits.data();
    let mut out = vec![0.0; n * k];
    for r in 0..n {
        let row = &z[r * k..(r + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out[r * k + c] = e;
            denom += e;
        }
        for c in 0..k {
            out[r * k + c] /= denom;
        }
    }
    Ok(Tensor::from_parts(vec![n, k], out, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_k() {
        let mut tape = GradTape::new();
        let logits = Tensor::new(vec![2, 5], vec![0.3; 10], true).unwrap();
        let loss = tape.softmax_cross_entropy(&logits, &[0, 4]).unwrap();
        assert!((loss.data()[0] - (5.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_cost_little() {
        let mut tape = GradTape::new();
        let logits = Tensor::new(vec![1, 3], vec![10.0, 0.0, 0.0], true).unwrap();
        let loss = tape.softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.data()[0] < 1e-3);
        assert!(loss.data()[0] > 0.0);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = GradTape::new();
        let logits = Tensor::new(vec![1, 3], vec![0.0; 3], true).unwrap();
        assert!(matches!(
            tape.softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn cross_entropy_grad_rows_sum_to_zero() {
        let mut tape = GradTape::new();
        let logits = Tensor::new(vec![2, 4], vec![0.9, -1.0, 0.3, 2.0, 0.0, 0.1, -0.4, 1.1], true)
            .unwrap();
        let loss = tape.softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let g = grads.wrt(&logits);
        for r in 0..2 {
            let s: f64 = g.data()[r * 4..(r + 1) * 4].iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn hinge_zero_when_true_class_clears_margin() {
        let mut tape = GradTape::new();
        let logits = Tensor::new(vec![1, 3], vec![3.0, 1.0, 0.0], true).unwrap();
        let loss = tape.multiclass_hinge(&logits, &[0], 1.0).unwrap();
        assert_eq!(loss.data()[0], 0.0);
    }

    #[test]
    fn hinge_counts_each_violation() {
        let mut tape = GradTape::new();
        // y = 0; margins: 1 + 1 - 0 = 2 and 1 + 0.5 - 0 = 1.5
        let logits = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.5], true).unwrap();
        let loss = tape.multiclass_hinge(&logits, &[0], 1.0).unwrap();
        assert!((loss.data()[0] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn hinge_all_equal_scores_cost_k_minus_one_margins() {
        let mut tape = GradTape::new();
        let logits = Tensor::new(vec![2, 3], vec![0.4; 6], true).unwrap();
        let loss = tape.multiclass_hinge(&logits, &[1, 2], 1.0).unwrap();
        assert!((loss.data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_quadratic_then_linear() {
        let mut tape = GradTape::new();
        let pred = Tensor::new(vec![1, 2], vec![0.5, 2.0], true).unwrap();
        let target = Tensor::zeros(vec![1, 2], false);
        let loss = tape.smooth_l1(&pred, &target, 1.0).unwrap();
        // (0.5 * 0.25 + (2 - 0.5)) / 2
        assert!((loss.data()[0] - (0.125 + 1.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_beta_scales_the_quadratic_zone() {
        let mut tape = GradTape::new();
        let pred = Tensor::new(vec![1, 2], vec![1.5, 3.0], true).unwrap();
        let target = Tensor::zeros(vec![1, 2], false);
        // beta=2: |1.5| < 2 -> 0.5*2.25/2; |3| >= 2 -> 3 - 1
        let loss = tape.smooth_l1(&pred, &target, 2.0).unwrap();
        assert!((loss.data()[0] - (0.5625 + 2.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn detection_total_is_bitwise_sum_of_parts() {
        let mut tape = GradTape::new();
        let logits =
            Tensor::new(vec![3, 2], vec![0.2, 0.7, 1.4, -0.3, -0.9, 0.4], true).unwrap();
        let pred = Tensor::new(
            vec![3, 4],
            vec![0.1, -0.2, 0.3, 0.4, 1.0, 0.0, -1.5, 0.2, 0.0, 0.0, 0.0, 0.0],
            true,
        )
        .unwrap();
        let targets = Tensor::zeros(vec![3, 4], false);
        let bundle =
            detection_objective(&mut tape, &logits, &[1, 0, 1], &pred, &targets, 1.0, 1.0)
                .unwrap();
        let sum = bundle.cls_loss.data()[0] + bundle.bbox_loss.data()[0];
        assert_eq!(bundle.total.data()[0].to_bits(), sum.to_bits());
    }

    #[test]
    fn detection_without_foreground_has_zero_box_term() {
        let mut tape = GradTape::new();
        let logits = Tensor::new(vec![2, 2], vec![0.2, 0.7, 1.4, -0.3], true).unwrap();
        let pred = Tensor::new(vec![2, 4], vec![9.0; 8], true).unwrap();
        let targets = Tensor::zeros(vec![2, 4], false);
        let bundle =
            detection_objective(&mut tape, &logits, &[0, 0], &pred, &targets, 1.0, 1.0)
                .unwrap();
        assert_eq!(bundle.bbox_loss.data()[0], 0.0);
        assert_eq!(
            bundle.total.data()[0].to_bits(),
            bundle.cls_loss.data()[0].to_bits()
        );
    }

    #[test]
    fn argmax_ties_take_lower_index() {
        let logits = Tensor::new(vec![2, 3], vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0], false).unwrap();
        assert_eq!(argmax_rows(&logits).unwrap(), vec![0, 1]);
    }
}
