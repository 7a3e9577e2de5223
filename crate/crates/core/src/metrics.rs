//! Evaluation metrics: confusion matrix, accuracy, macro one-vs-rest
//! sensitivity/specificity/recall, Cohen's kappa, and Dice overlap (mask and
//! box-set forms).

use serde::{Deserialize, Serialize};

use crate::boxes::RegionProposal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    /// counts[actual][predicted]
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, r: usize) -> u64 {
        self.counts[r].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }
}

/// Tallies (actual, predicted) pairs into a K x K matrix, rows = actual.
pub fn confusion(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &a) in predictions.iter().zip(labels) {
        if p >= k {
            return Err(Error::LabelOutOfRange { label: p, classes: k });
        }
        if a >= k {
            return Err(Error::LabelOutOfRange { label: a, classes: k });
        }
        counts[a][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Everything the evaluation commands report. Serialized key order is the
/// declaration order here and is part of the output contract.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Macro one-vs-rest recall; coincides with sensitivity under this
    /// reduction and is carried as its own key on purpose.
    pub recall: f64,
    pub kappa: f64,
    /// True when chance agreement is 1 (single-class data) and kappa is
    /// reported as 0 by convention.
    pub kappa_degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    pub n_samples: u64,
    /// One-vs-rest rates per class; None when the class has no samples on
    /// the relevant side.
    pub per_class_sensitivity: Vec<Option<f64>>,
    pub per_class_specificity: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<u64>>>,
}

/// Derives the scalar metrics from a confusion matrix. Sensitivity /
/// specificity / recall are macro averages of per-class one-vs-rest rates;
/// classes absent from the data are skipped in the averages.
pub fn derive_metrics(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::ShapeMismatch("empty confusion matrix".into()));
    }
    let k = cm.classes();
    let totalf = total as f64;
    let accuracy = cm.trace() as f64 / totalf;

    let mut per_sens = Vec::with_capacity(k);
    let mut per_spec = Vec::with_capacity(k);
    let (mut sens_acc, mut sens_n) = (0.0, 0u32);
    let (mut spec_acc, mut spec_n) = (0.0, 0u32);
    for c in 0..k {
        let tp = cm.counts[c][c];
        let actual_c = cm.row_sum(c);
        let predicted_c = cm.col_sum(c);
        let fp = predicted_c - tp;
        let tn = total - actual_c - fp;
        if actual_c > 0 {
            let s = tp as f64 / actual_c as f64;
            per_sens.push(Some(s));
            sens_acc += s;
            sens_n += 1;
        } else {
            per_sens.push(None);
        }
        let negatives = total - actual_c;
        if negatives > 0 {
            let s = tn as f64 / negatives as f64;
            per_spec.push(Some(s));
            spec_acc += s;
            spec_n += 1;
        } else {
            per_spec.push(None);
        }
    }
    let sensitivity = if sens_n > 0 { sens_acc / sens_n as f64 } else { 0.0 };
    let specificity = if spec_n > 0 { spec_acc / spec_n as f64 } else { 0.0 };

    let p_o = accuracy;
    let p_e: f64 = (0..k)
        .map(|c| (cm.row_sum(c) as f64 / totalf) * (cm.col_sum(c) as f64 / totalf))
        .sum();
    let (kappa, kappa_degenerate) = if (1.0 - p_e).abs() < 1e-15 {
        (0.0, true)
    } else {
        ((p_o - p_e) / (1.0 - p_e), false)
    };

    Ok(EvalReport {
        accuracy,
        sensitivity,
        specificity,
        recall: sensitivity,
        kappa,
        kappa_degenerate,
        dice: None,
        n_samples: total,
        per_class_sensitivity: per_sens,
        per_class_specificity: per_spec,
        confusion: Some(cm.counts.clone()),
    })
}

/// Dice overlap of two equally sized binary masks; two empty masks agree
/// perfectly (1.0).
pub fn dice_masks(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DomainMismatch(format!(
            "mask sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let inter = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let size = a.iter().filter(|&&x| x).count() + b.iter().filter(|&&x| x).count();
    if size == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / size as f64)
}

/// Paints a box set onto an h x w grid.
pub fn rasterize(boxes: &[RegionProposal], h: usize, w: usize) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    for b in boxes {
        for y in b.y0 as usize..(b.y1 as usize).min(h) {
            for x in b.x0 as usize..(b.x1 as usize).min(w) {
                mask[y * w + x] = true;
            }
        }
    }
    mask
}

/// Dice of two box sets, compared as rasterized masks on a shared grid.
pub fn dice_boxes(
    a: &[RegionProposal],
    b: &[RegionProposal],
    h: usize,
    w: usize,
) -> Result<f64> {
    dice_masks(&rasterize(a, h, w), &rasterize(b, h, w))
}

/// Single-slice detection Dice: detections at or above `score_threshold`
/// are rasterized against the ground truth. Every detection must be scored.
pub fn detection_dice(
    detections: &[RegionProposal],
    ground_truth: &[RegionProposal],
    score_threshold: f64,
    h: usize,
    w: usize,
) -> Result<f64> {
    let mut kept = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        match d.score {
            None => return Err(Error::UnscoredDetection(i)),
            Some(s) if s >= score_threshold => kept.push(*d),
            _ => {}
        }
    }
    dice_boxes(&kept, ground_truth, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rp(x0: u32, y0: u32, x1: u32, y1: u32) -> RegionProposal {
        RegionProposal::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.trace(), 4);
        assert_eq!(cm.total(), 4);
        let r = derive_metrics(&cm).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.kappa, 1.0);
        assert_eq!(r.sensitivity, 1.0);
    }

    #[test]
    fn single_column_when_everything_predicts_zero() {
        let cm = confusion(&[0, 0, 0], &[0, 1, 2], 3).unwrap();
        for c in 1..3 {
            assert!(cm.counts.iter().all(|row| row[c] == 0));
        }
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        assert!(matches!(
            confusion(&[5], &[0], 3),
            Err(Error::LabelOutOfRange { label: 5, classes: 3 })
        ));
    }

    #[test]
    fn chance_level_two_by_two_has_zero_kappa() {
        let cm = ConfusionMatrix { counts: vec![vec![1, 1], vec![1, 1]] };
        let r = derive_metrics(&cm).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!(r.kappa.abs() < 1e-15);
        assert!(!r.kappa_degenerate);
    }

    #[test]
    fn single_class_data_degenerates_kappa() {
        let cm = confusion(&[0, 0], &[0, 0], 1).unwrap();
        let r = derive_metrics(&cm).unwrap();
        assert_eq!(r.kappa, 0.0);
        assert!(r.kappa_degenerate);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn recall_equals_macro_sensitivity() {
        let cm = confusion(&[0, 1, 1, 2, 0], &[0, 1, 2, 2, 1], 3).unwrap();
        let r = derive_metrics(&cm).unwrap();
        assert_eq!(r.recall.to_bits(), r.sensitivity.to_bits());
    }

    #[test]
    fn dice_identical_disjoint_and_empty() {
        let a = vec![true, true, false, false];
        assert_eq!(dice_masks(&a, &a).unwrap(), 1.0);
        let b = vec![false, false, true, true];
        assert_eq!(dice_masks(&a, &b).unwrap(), 0.0);
        let e = vec![false; 4];
        assert_eq!(dice_masks(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn dice_mismatched_domains_error() {
        assert!(matches!(
            dice_masks(&[true], &[true, false]),
            Err(Error::DomainMismatch(_))
        ));
    }

    #[test]
    fn dice_of_half_shifted_boxes() {
        // (0,0)-(2,2) vs (0,1)-(2,3): intersection 2, areas 4 + 4
        let got = dice_boxes(&[rp(0, 0, 2, 2)], &[rp(0, 1, 2, 3)], 4, 4).unwrap();
        assert!((got - 0.5).abs() < 1e-15);
    }

    #[test]
    fn detection_dice_thresholds_and_errors() {
        let gt = vec![rp(2, 2, 6, 6)];
        let hit = rp(2, 2, 6, 6).with_score(0.9);
        let noise = rp(10, 10, 14, 14).with_score(0.1);
        let got = detection_dice(&[hit, noise], &gt, 0.5, 16, 16).unwrap();
        assert_eq!(got, 1.0);

        let none = detection_dice(&[noise], &gt, 0.5, 16, 16).unwrap();
        assert_eq!(none, 0.0);

        assert!(matches!(
            detection_dice(&[rp(0, 0, 2, 2)], &gt, 0.5, 16, 16),
            Err(Error::UnscoredDetection(0))
        ));
    }

    #[test]
    fn report_json_round_trip() {
        let cm = confusion(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        let r = derive_metrics(&cm).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.accuracy.to_bits(), r.accuracy.to_bits());
        assert_eq!(back.kappa.to_bits(), r.kappa.to_bits());
        assert_eq!(back.confusion, r.confusion);
    }
}
