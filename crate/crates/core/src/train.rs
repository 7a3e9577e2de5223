//! Training loops for slice classification and proposal-based detection.
//!
//! Both loops are strictly seeded: network init, slice selection, epoch
//! shuffles and proposal sampling each draw from their own ChaCha stream, so
//! a rerun with the same config and volumes is bit-identical end to end.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boxes::{
    apply_deltas, generate_proposals, label_proposals, nms, LabeledProposal, ProposalConfig,
    RegionProposal,
};
use crate::error::{Error, Result};
use crate::l2pool::GradientMode;
use crate::losses::{argmax_rows, detection_objective};
use crate::metrics::{confusion, derive_metrics, detection_dice, EvalReport};
use crate::model::{ClassifyNet, DetectNet, PoolKind};
use crate::optim::Sgd;
use crate::pyramid::map_proposal_to_feature;
use crate::report::CurvePoint;
use crate::slices::{
    augment, axial_boxes, extract_slices, stack_modalities, AugmentOp, FusedSlice, FusionSpec,
    View,
};
use crate::synth::NUM_CLASSES;
use crate::tape::GradTape;
use crate::tensor::Tensor;
use crate::volume::{Modality, MultiModalVolume};

// Stream offsets so the independent RNG consumers never share a sequence.
const STREAM_SELECT: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_EVAL: u64 = 0x5851_f42d_4c95_7f2d;
const STREAM_SHUFFLE: u64 = 0x94d0_49bb_1331_11eb;

// ── classification ──────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ClassifyTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Curve row cadence, in iterations.
    pub eval_interval: usize,
    pub pooling: PoolKind,
    pub gradient_mode: GradientMode,
    pub fusion: FusionSpec,
    pub views: Vec<View>,
    pub augment_ops: Vec<AugmentOp>,
    /// Training slices drawn per volume per view.
    pub slices_per_volume: usize,
}

impl Default for ClassifyTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 16,
            batch_size: 16,
            learning_rate: 0.02,
            momentum: 0.9,
            seed: 7,
            eval_interval: 10,
            pooling: PoolKind::L2,
            gradient_mode: GradientMode::Analytic,
            fusion: FusionSpec::default(),
            views: vec![View::Axial],
            augment_ops: vec![AugmentOp::HFlip],
            slices_per_volume: 6,
        }
    }
}

impl ClassifyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::BadConfig(
                "epochs, batch_size and eval_interval must be >= 1".into(),
            ));
        }
        if self.slices_per_volume == 0 {
            return Err(Error::BadConfig("slices_per_volume must be >= 1".into()));
        }
        if self.views.is_empty() {
            return Err(Error::BadConfig("at least one view is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ClassifyRun {
    pub net: ClassifyNet,
    pub curve: Vec<CurvePoint>,
    pub report: EvalReport,
    pub final_test_loss: f64,
}

/// Picks the training/evaluation slices for one volume. Volumes with lesion
/// boxes contribute lesion-bearing slices (the extract filter); volumes
/// without boxes contribute their central band, where the anatomy that
/// distinguishes the non-lesion classes actually lives.
fn pick_slices(
    vol: &MultiModalVolume,
    id: &str,
    cfg: &ClassifyTrainConfig,
    rng: &mut ChaCha8Rng,
    with_augment: bool,
) -> Result<Vec<FusedSlice>> {
    let mut out = Vec::new();
    for &view in &cfg.views {
        let mut slices = extract_slices(vol, id, &cfg.fusion, view, true)?;
        if vol.lesion_boxes.is_empty() {
            let n = slices.len();
            slices = slices
                .into_iter()
                .enumerate()
                .filter(|(i, _)| *i >= n / 4 && *i < n - n / 4)
                .map(|(_, s)| s)
                .collect();
        }
        if slices.is_empty() {
            continue;
        }
        let mut idx: Vec<usize> = (0..slices.len()).collect();
        idx.shuffle(rng);
        idx.truncate(cfg.slices_per_volume);
        idx.sort_unstable();
        for i in idx {
            if with_augment {
                out.extend(augment(&slices[i], &cfg.augment_ops));
            } else {
                out.push(slices[i].clone());
            }
        }
    }
    Ok(out)
}

fn gather_slices(
    vols: &[(String, MultiModalVolume)],
    cfg: &ClassifyTrainConfig,
    stream: u64,
    with_augment: bool,
) -> Result<Vec<FusedSlice>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stream);
    let mut out = Vec::new();
    for (id, vol) in vols {
        out.extend(pick_slices(vol, id, cfg, &mut rng, with_augment)?);
    }
    Ok(out)
}

/// The deterministic evaluation slice set for a volume list: the same
/// selection the trainer scores against, so a later standalone evaluation
/// reproduces the training-time numbers exactly.
pub fn eval_slices(
    vols: &[(String, MultiModalVolume)],
    cfg: &ClassifyTrainConfig,
) -> Result<Vec<FusedSlice>> {
    gather_slices(vols, cfg, STREAM_EVAL, false)
}

/// Mean cross-entropy, accuracy, and the per-slice predictions/labels on a
/// fixed slice set, computed without recording gradients.
pub fn evaluate_classifier(
    net: &ClassifyNet,
    slices: &[FusedSlice],
) -> Result<(f64, f64, Vec<usize>, Vec<usize>)> {
    if slices.is_empty() {
        return Err(Error::BadConfig("cannot evaluate on zero slices".into()));
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(slices.len());
    let labels: Vec<usize> = slices.iter().map(|s| s.label as usize).collect();
    for (chunk, label_chunk) in slices.chunks(16).zip(labels.chunks(16)) {
        let images: Vec<Tensor> = chunk.iter().map(|s| s.image.clone()).collect();
        let mut tape = GradTape::inference();
        let logits = net.forward(&mut tape, &images)?;
        let loss = tape.softmax_cross_entropy(&logits, label_chunk)?;
        loss_sum += loss.item()? * chunk.len() as f64;
        predictions.extend(argmax_rows(&logits)?);
    }
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok((
        loss_sum / slices.len() as f64,
        correct as f64 / slices.len() as f64,
        predictions,
        labels,
    ))
}

/// Trains the slice classifier on the train volumes and reports on the test
/// volumes. Splitting is the caller's job (volume level, never slice level).
pub fn train_classify(
    train_vols: &[(String, MultiModalVolume)],
    test_vols: &[(String, MultiModalVolume)],
    cfg: &ClassifyTrainConfig,
) -> Result<ClassifyRun> {
    cfg.validate()?;
    let train_slices = gather_slices(train_vols, cfg, STREAM_SELECT, true)?;
    let test_slices = gather_slices(test_vols, cfg, STREAM_EVAL, false)?;
    if train_slices.is_empty() || test_slices.is_empty() {
        return Err(Error::BadConfig(
            "both splits must contribute at least one slice".into(),
        ));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = ClassifyNet::new(&mut init_rng, 3, cfg.pooling, cfg.gradient_mode);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STREAM_SHUFFLE);

    let mut order: Vec<usize> = (0..train_slices.len()).collect();
    let mut curve = Vec::new();
    let mut iteration: u64 = 0;
    let mut window_loss = 0.0;
    let mut window_n = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<Tensor> =
                chunk.iter().map(|&i| train_slices[i].image.clone()).collect();
            let labels: Vec<usize> =
                chunk.iter().map(|&i| train_slices[i].label as usize).collect();
            let mut tape = GradTape::new();
            let logits = net.forward(&mut tape, &images)?;
            let loss = tape.softmax_cross_entropy(&logits, &labels)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::DivergedLoss { iteration: iteration as usize, value });
            }
            let grads = tape.backward(&loss)?;
            opt.step(net.params_mut(), &grads)?;
            window_loss += value;
            window_n += 1;
            iteration += 1;
            if iteration % cfg.eval_interval as u64 == 0 {
                let (test_loss, test_accuracy, _, _) = evaluate_classifier(&net, &test_slices)?;
                curve.push(CurvePoint {
                    iteration,
                    train_loss: window_loss / window_n as f64,
                    test_loss,
                    test_accuracy,
                });
                window_loss = 0.0;
                window_n = 0;
            }
        }
    }

    let (final_test_loss, final_accuracy, predictions, labels) =
        evaluate_classifier(&net, &test_slices)?;
    // A completed run always closes its curve, even when the last eval
    // interval did not divide the iteration count.
    if curve.last().map(|p| p.iteration) != Some(iteration) {
        curve.push(CurvePoint {
            iteration,
            train_loss: if window_n > 0 {
                window_loss / window_n as f64
            } else {
                curve.last().map(|p| p.train_loss).unwrap_or(f64::INFINITY)
            },
            test_loss: final_test_loss,
            test_accuracy: final_accuracy,
        });
    }
    let cm = confusion(&predictions, &labels, NUM_CLASSES)?;
    let report = derive_metrics(&cm)?;
    Ok(ClassifyRun { net, curve, report, final_test_loss })
}

// ── detection ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct DetectTrainConfig {
    pub epochs: usize,
    /// Proposals sampled per slice per iteration.
    pub proposal_batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub pooling: PoolKind,
    pub gradient_mode: GradientMode,
    /// Channel stack; any subset of the synthetic modalities.
    pub modalities: Vec<Modality>,
    pub fusion: FusionSpec,
    /// Cap on the foreground share of each sampled proposal batch.
    pub fg_fraction: f64,
    pub fg_threshold: f64,
    pub bg_upper: f64,
    pub margin: f64,
    pub beta: f64,
    pub proposals: ProposalConfig,
    /// Detections below this score are discarded at evaluation time.
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Pyramid grid sizes for proposal pooling.
    pub pyramid_levels: Vec<usize>,
}

impl Default for DetectTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            proposal_batch: 16,
            learning_rate: 0.002,
            momentum: 0.9,
            seed: 7,
            pooling: PoolKind::L2,
            gradient_mode: GradientMode::Analytic,
            modalities: vec![Modality::T1, Modality::T1c, Modality::T2, Modality::Flair],
            fusion: FusionSpec::default(),
            fg_fraction: 0.5,
            fg_threshold: 0.5,
            bg_upper: 0.5,
            margin: 1.0,
            beta: 1.0,
            proposals: ProposalConfig::default(),
            score_threshold: 0.0,
            nms_iou: 0.3,
            pyramid_levels: vec![4, 2, 1],
        }
    }
}

impl DetectTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.proposal_batch == 0 {
            return Err(Error::BadConfig("epochs and proposal_batch must be >= 1".into()));
        }
        if self.modalities.is_empty() {
            return Err(Error::BadSubset);
        }
        if !(self.fg_fraction > 0.0 && self.fg_fraction <= 1.0) {
            return Err(Error::BadConfig(format!(
                "fg_fraction must be in (0,1], got {}",
                self.fg_fraction
            )));
        }
        Ok(())
    }
}

/// One axial slice prepared for detection: its channel stack, the labeled
/// proposal pool (ground truth appended when `train`), and the raw truth.
#[derive(Debug, Clone)]
pub struct DetectExample {
    pub image: Tensor,
    pub labeled: Vec<LabeledProposal>,
    pub gt: Vec<RegionProposal>,
    pub h: usize,
    pub w: usize,
}

/// Builds the per-slice detection examples from box-bearing axial slices.
/// With `train` set, ground-truth boxes join the proposal pool so every
/// slice is guaranteed usable foreground.
pub fn detect_examples(
    vols: &[(String, MultiModalVolume)],
    cfg: &DetectTrainConfig,
    train: bool,
) -> Result<Vec<DetectExample>> {
    let mut out = Vec::new();
    for (_, vol) in vols {
        let (d, _, _) = vol.dims();
        for i in 0..d {
            let gt_boxes = axial_boxes(vol, i);
            if gt_boxes.is_empty() {
                continue;
            }
            let image = stack_modalities(vol, &cfg.modalities, &cfg.fusion, View::Axial, i)?;
            let (h, w) = (image.shape()[1], image.shape()[2]);
            let mut proposals = generate_proposals(&image, &cfg.proposals)?;
            if train {
                proposals.extend(gt_boxes.iter().map(|b| b.region));
            }
            let labeled = label_proposals(&proposals, &gt_boxes, cfg.fg_threshold, cfg.bg_upper)?;
            let gt = gt_boxes.iter().map(|b| b.region).collect();
            out.push(DetectExample { image, labeled, gt, h, w });
        }
    }
    Ok(out)
}

/// Samples one training minibatch of proposal indices with the foreground
/// share capped at `fg_fraction`. Returns None when the slice offers no
/// foreground at all.
fn sample_proposal_batch(
    labeled: &[LabeledProposal],
    batch: usize,
    fg_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let mut fg: Vec<usize> = (0..labeled.len()).filter(|&i| labeled[i].cls > 0).collect();
    let mut bg: Vec<usize> = (0..labeled.len()).filter(|&i| labeled[i].cls == 0).collect();
    if fg.is_empty() {
        return None;
    }
    fg.shuffle(rng);
    bg.shuffle(rng);
    let fg_cap = ((batch as f64 * fg_fraction).round() as usize).max(1);
    fg.truncate(fg_cap);
    let mut picked = fg;
    let remaining = batch.saturating_sub(picked.len());
    picked.extend(bg.into_iter().take(remaining));
    picked.shuffle(rng);
    Some(picked)
}

fn regions_for(
    picked: &[&LabeledProposal],
    h: usize,
    w: usize,
    fh: usize,
    fw: usize,
) -> Result<Vec<crate::pyramid::FeatureRegion>> {
    picked
        .iter()
        .map(|lp| map_proposal_to_feature(&lp.proposal, (h, w), (fh, fw)))
        .collect()
}

/// One bookkeeping row per training iteration; `total` is always the exact
/// float sum of `cls` and `bbox`.
#[derive(Debug, Clone, Copy)]
pub struct LossRow {
    pub iteration: u64,
    pub total: f64,
    pub cls: f64,
    pub bbox: f64,
}

#[derive(Debug)]
pub struct DetectRun {
    pub net: DetectNet,
    pub curve: Vec<CurvePoint>,
    /// Mean validation Dice after each epoch.
    pub val_dice: Vec<f64>,
    pub test_dice: f64,
    pub loss_log: Vec<LossRow>,
    /// Batches skipped for having no foreground proposals.
    pub skipped_batches: usize,
}

/// Runs the detector over one example and returns the scored, NMS-filtered,
/// delta-refined detections.
pub fn detect_slice(
    net: &DetectNet,
    example: &DetectExample,
    nms_iou: f64,
) -> Result<Vec<RegionProposal>> {
    if example.labeled.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = GradTape::inference();
    let feature = net.extract_features(&mut tape, &example.image)?;
    let (fh, fw) = (feature.shape()[1], feature.shape()[2]);
    let picked: Vec<&LabeledProposal> = example.labeled.iter().collect();
    let regions = regions_for(&picked, example.h, example.w, fh, fw)?;
    let (cls, bbox) = net.forward_proposals(&mut tape, &feature, &regions)?;
    let cls_data = cls.data();
    let bbox_data = bbox.data();
    let mut detections = Vec::with_capacity(picked.len());
    for (i, lp) in picked.iter().enumerate() {
        let score = cls_data[i * 2 + 1] - cls_data[i * 2];
        let d = [
            bbox_data[i * 4],
            bbox_data[i * 4 + 1],
            bbox_data[i * 4 + 2],
            bbox_data[i * 4 + 3],
        ];
        let refined =
            apply_deltas(&lp.proposal, d, example.h as u32, example.w as u32).with_score(score);
        detections.push(refined);
    }
    nms(&detections, nms_iou)
}

/// Mean Dice and mean total loss over a fixed example set (no updates).
pub fn evaluate_detector(
    net: &DetectNet,
    examples: &[DetectExample],
    cfg: &DetectTrainConfig,
) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::BadConfig("cannot evaluate a detector on zero slices".into()));
    }
    let mut dice_sum = 0.0;
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    for ex in examples {
        let kept = detect_slice(net, ex, cfg.nms_iou)?;
        dice_sum += detection_dice(&kept, &ex.gt, cfg.score_threshold, ex.h, ex.w)?;
        if !ex.labeled.is_empty() {
            let mut tape = GradTape::inference();
            let feature = net.extract_features(&mut tape, &ex.image)?;
            let (fh, fw) = (feature.shape()[1], feature.shape()[2]);
            let picked: Vec<&LabeledProposal> = ex.labeled.iter().collect();
            let regions = regions_for(&picked, ex.h, ex.w, fh, fw)?;
            let (cls, bbox) = net.forward_proposals(&mut tape, &feature, &regions)?;
            let labels: Vec<usize> =
                picked.iter().map(|lp| usize::from(lp.cls > 0)).collect();
            let targets = Tensor::new(
                vec![picked.len(), 4],
                picked.iter().flat_map(|lp| lp.target).collect(),
                false,
            )?;
            let bundle =
                detection_objective(&mut tape, &cls, &labels, &bbox, &targets, cfg.margin, cfg.beta)?;
            loss_sum += bundle.total.item()?;
            loss_n += 1;
        }
    }
    let mean_loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 };
    Ok((dice_sum / examples.len() as f64, mean_loss))
}

/// Trains the detector; one iteration is one slice with a sampled proposal
/// minibatch. Per-epoch validation Dice lands in the curve's accuracy
/// column, validation loss in its test-loss column.
pub fn train_detect(
    train_vols: &[(String, MultiModalVolume)],
    val_vols: &[(String, MultiModalVolume)],
    test_vols: &[(String, MultiModalVolume)],
    cfg: &DetectTrainConfig,
) -> Result<DetectRun> {
    cfg.validate()?;
    let train_ex = detect_examples(train_vols, cfg, true)?;
    let val_ex = detect_examples(val_vols, cfg, false)?;
    let test_ex = detect_examples(test_vols, cfg, false)?;
    if train_ex.is_empty() || val_ex.is_empty() || test_ex.is_empty() {
        return Err(Error::BadConfig(
            "every detection split needs at least one slice with ground-truth boxes".into(),
        ));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = DetectNet::with_pyramid(
        &mut init_rng,
        cfg.modalities.len(),
        cfg.pooling,
        cfg.gradient_mode,
        cfg.pyramid_levels.clone(),
    )?;
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STREAM_SHUFFLE);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STREAM_SELECT);

    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut curve = Vec::new();
    let mut val_dice = Vec::new();
    let mut loss_log = Vec::new();
    let mut skipped_batches = 0usize;
    let mut iteration: u64 = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_n = 0usize;
        for &ei in &order {
            let ex = &train_ex[ei];
            let Some(picked_idx) = sample_proposal_batch(
                &ex.labeled,
                cfg.proposal_batch,
                cfg.fg_fraction,
                &mut sample_rng,
            ) else {
                eprintln!(
                    "warning: no foreground proposals on a training slice; batch skipped"
                );
                skipped_batches += 1;
                continue;
            };
            let picked: Vec<&LabeledProposal> =
                picked_idx.iter().map(|&i| &ex.labeled[i]).collect();
            let mut tape = GradTape::new();
            let feature = net.extract_features(&mut tape, &ex.image)?;
            let (fh, fw) = (feature.shape()[1], feature.shape()[2]);
            let regions = regions_for(&picked, ex.h, ex.w, fh, fw)?;
            let (cls, bbox) = net.forward_proposals(&mut tape, &feature, &regions)?;
            let labels: Vec<usize> =
                picked.iter().map(|lp| usize::from(lp.cls > 0)).collect();
            let targets = Tensor::new(
                vec![picked.len(), 4],
                picked.iter().flat_map(|lp| lp.target).collect(),
                false,
            )?;
            let bundle = detection_objective(
                &mut tape, &cls, &labels, &bbox, &targets, cfg.margin, cfg.beta,
            )?;
            let value = bundle.total.item()?;
            if !value.is_finite() {
                return Err(Error::DivergedLoss { iteration: iteration as usize, value });
            }
            let grads = tape.backward(&bundle.total)?;
            opt.step(net.params_mut(), &grads)?;
            iteration += 1;
            epoch_loss += value;
            epoch_n += 1;
            loss_log.push(LossRow {
                iteration,
                total: value,
                cls: bundle.cls_loss.item()?,
                bbox: bundle.bbox_loss.item()?,
            });
        }
        let (dice, val_loss) = evaluate_detector(&net, &val_ex, cfg)?;
        val_dice.push(dice);
        curve.push(CurvePoint {
            iteration,
            train_loss: if epoch_n > 0 { epoch_loss / epoch_n as f64 } else { 0.0 },
            test_loss: val_loss,
            test_accuracy: dice,
        });
    }

    let (test_dice, _) = evaluate_detector(&net, &test_ex, cfg)?;
    Ok(DetectRun { net, curve, val_dice, test_dice, loss_log, skipped_batches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic_dataset, SynthConfig};

    fn tiny_dataset(seed: u64) -> Vec<(String, MultiModalVolume)> {
        let cfg = SynthConfig { volumes_per_class: 2, seed, ..SynthConfig::default() };
        generate_synthetic_dataset(&cfg).unwrap()
    }

    fn quick_classify_cfg() -> ClassifyTrainConfig {
        ClassifyTrainConfig {
            epochs: 1,
            batch_size: 4,
            eval_interval: 5,
            slices_per_volume: 2,
            augment_ops: Vec::new(),
            ..ClassifyTrainConfig::default()
        }
    }

    #[test]
    fn classify_smoke_run_emits_all_artifacts() {
        let vols = tiny_dataset(11);
        let (train, test) = vols.split_at(8);
        let run = train_classify(train, test, &quick_classify_cfg()).unwrap();
        assert!(!run.curve.is_empty());
        assert!(run.report.n_samples > 0);
        assert!(run.final_test_loss.is_finite());
    }

    #[test]
    fn classify_rerun_is_bit_identical() {
        let vols = tiny_dataset(12);
        let (train, test) = vols.split_at(8);
        let cfg = quick_classify_cfg();
        let a = train_classify(train, test, &cfg).unwrap();
        let b = train_classify(train, test, &cfg).unwrap();
        assert_eq!(a.report.accuracy.to_bits(), b.report.accuracy.to_bits());
        assert_eq!(a.final_test_loss.to_bits(), b.final_test_loss.to_bits());
        assert_eq!(a.curve.len(), b.curve.len());
        for (pa, pb) in a.curve.iter().zip(&b.curve) {
            assert_eq!(pa.train_loss.to_bits(), pb.train_loss.to_bits());
            assert_eq!(pa.test_loss.to_bits(), pb.test_loss.to_bits());
        }
        for ((_, ta), (_, tb)) in a.net.named_params().iter().zip(b.net.named_params()) {
            assert!(ta.bit_eq(tb));
        }
    }

    #[test]
    fn detect_smoke_run_keeps_loss_identity() {
        let vols = tiny_dataset(13);
        // Lesion-bearing classes only (boxes present).
        let lesions: Vec<_> =
            vols.into_iter().filter(|(_, v)| !v.lesion_boxes.is_empty()).collect();
        assert!(lesions.len() >= 3);
        let cfg = DetectTrainConfig { epochs: 1, ..DetectTrainConfig::default() };
        let n = lesions.len();
        let run = train_detect(
            &lesions[..n - 2],
            &lesions[n - 2..n - 1],
            &lesions[n - 1..],
            &cfg,
        )
        .unwrap();
        assert!(!run.loss_log.is_empty());
        for row in &run.loss_log {
            assert_eq!(row.total.to_bits(), (row.cls + row.bbox).to_bits());
        }
        assert_eq!(run.val_dice.len(), 1);
        assert!(run.test_dice >= 0.0 && run.test_dice <= 1.0);
    }

    #[test]
    fn foreground_sampling_respects_the_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fg = LabeledProposal {
            proposal: RegionProposal::new(0, 0, 4, 4).unwrap(),
            cls: 1,
            target: [0.0; 4],
            matched_iou: 1.0,
        };
        let bg = LabeledProposal {
            proposal: RegionProposal::new(8, 8, 12, 12).unwrap(),
            cls: 0,
            target: [0.0; 4],
            matched_iou: 0.0,
        };
        let labeled: Vec<LabeledProposal> =
            std::iter::repeat(fg).take(20).chain(std::iter::repeat(bg).take(20)).collect();
        let picked = sample_proposal_batch(&labeled, 16, 0.5, &mut rng).unwrap();
        assert_eq!(picked.len(), 16);
        let fg_count = picked.iter().filter(|&&i| labeled[i].cls > 0).count();
        assert!(fg_count <= 8, "foreground count {fg_count} exceeds the cap");

        let all_bg: Vec<LabeledProposal> = std::iter::repeat(bg).take(10).collect();
        assert!(sample_proposal_batch(&all_bg, 16, 0.5, &mut rng).is_none());
    }
}
