use std::path::Path;

use l2net_core::metrics::{confusion, derive_metrics};
use l2net_core::model::{read_checkpoint, ClassifyNet, DetectNet};
use l2net_core::report::{write_report_json, write_report_table_csv};
use l2net_core::synth::NUM_CLASSES;
use l2net_core::train::{detect_examples, eval_slices, evaluate_classifier, evaluate_detector};
use l2net_core::{Error, Result};

use crate::config::{RunConfig, SplitTask};
use crate::data::load_subset;
use crate::Format;

use super::{write_json, EvalDetectReport};

pub fn run(cfg: &RunConfig, model: &Path, data: &Path, subset: &str, out: &Path, format: Format) -> Result<()> {
    let (manifest, _) = read_checkpoint(model)?;
    std::fs::create_dir_all(out)?;
    match manifest.kind.as_str() {
        "classify" => eval_classify(cfg, model, data, subset, out, format),
        "detect" => eval_detect(cfg, model, data, subset, out),
        other => Err(Error::CheckpointMismatch(format!("unknown checkpoint kind {other:?}"))),
    }
}

fn eval_classify(
    cfg: &RunConfig,
    model: &Path,
    data: &Path,
    subset: &str,
    out: &Path,
    format: Format,
) -> Result<()> {
    let net = ClassifyNet::load(model)?;
    let train_cfg = cfg.classify_config();
    let vols = load_subset(data, SplitTask::Classify, subset)?;
    let slices = eval_slices(&vols, &train_cfg)?;
    let (mean_loss, accuracy, predictions, labels) = evaluate_classifier(&net, &slices)?;
    let cm = confusion(&predictions, &labels, NUM_CLASSES)?;
    let report = derive_metrics(&cm)?;
    write_report_json(&report, &out.join("eval_report.json"))?;
    if format == Format::Csv {
        write_report_table_csv(&report, &out.join("eval_report.csv"))?;
    }
    println!(
        "{subset}: accuracy {:.4}, kappa {:.4}, mean loss {:.4} over {} slices",
        accuracy, report.kappa, mean_loss, slices.len()
    );
    Ok(())
}

fn eval_detect(cfg: &RunConfig, model: &Path, data: &Path, subset: &str, out: &Path) -> Result<()> {
    let net = DetectNet::load(model)?;
    let mut train_cfg = cfg.detect_config();
    // The checkpoint, not the config, decides the channel stack it was
    // trained on; a mismatched modality list would change the input size.
    if net.in_channels != train_cfg.modalities.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint expects {} input channels but the modality list has {}",
            net.in_channels,
            train_cfg.modalities.len()
        )));
    }
    train_cfg.pyramid_levels = net.pyramid.levels.clone();
    let vols = load_subset(data, SplitTask::Detect, subset)?;
    let examples = detect_examples(&vols, &train_cfg, false)?;
    let (mean_dice, mean_loss) = evaluate_detector(&net, &examples, &train_cfg)?;
    let report = EvalDetectReport {
        subset: subset.to_string(),
        mean_dice,
        mean_loss,
        n_slices: examples.len(),
    };
    write_json(&report, &out.join("eval_detect.json"))?;
    println!("{subset}: mean dice {mean_dice:.4}, mean loss {mean_loss:.4} over {} slices", examples.len());
    Ok(())
}
