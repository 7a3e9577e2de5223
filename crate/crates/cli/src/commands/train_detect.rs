use std::path::Path;

use l2net_core::report::{write_atomic, write_curve_csv};
use l2net_core::train::{train_detect, DetectRun, LossRow};
use l2net_core::{Error, Result};

use crate::config::{RunConfig, SplitTask};
use crate::data::load_subset;

use super::{write_json, DetectReport};

/// Loss-log rows use Rust's shortest-round-trip float formatting so a reader
/// recovers the exact f64 bits, which the schema validator relies on to
/// re-check total == cls + bbox.
pub fn write_loss_log(rows: &[LossRow], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["iteration", "total", "cls", "bbox"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for r in rows {
        wtr.write_record([
            r.iteration.to_string(),
            r.total.to_string(),
            r.cls.to_string(),
            r.bbox.to_string(),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_artifacts(run: &DetectRun, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_curve_csv(&run.curve, &out.join("detect_curve.csv"))?;
    write_loss_log(&run.loss_log, &out.join("detect_loss_log.csv"))?;
    let report = DetectReport {
        val_dice_per_epoch: run.val_dice.clone(),
        final_val_dice: run.val_dice.last().copied().unwrap_or(0.0),
        test_dice: run.test_dice,
        iterations: run.loss_log.last().map(|r| r.iteration).unwrap_or(0),
        skipped_batches: run.skipped_batches,
    };
    write_json(&report, &out.join("detect_report.json"))?;
    run.net.save(&out.join("detect_model.ckpt"))
}

pub fn run(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let train_cfg = cfg.detect_config();
    train_cfg.validate()?;
    let train_vols = load_subset(data, SplitTask::Detect, "train")?;
    let val_vols = load_subset(data, SplitTask::Detect, "val")?;
    let test_vols = load_subset(data, SplitTask::Detect, "test")?;
    println!(
        "training detector: {}/{}/{} train/val/test volumes, {} epochs, {} channels, pooling {}, seed {}",
        train_vols.len(),
        val_vols.len(),
        test_vols.len(),
        train_cfg.epochs,
        train_cfg.modalities.len(),
        train_cfg.pooling.as_str(),
        train_cfg.seed
    );

    let run = train_detect(&train_vols, &val_vols, &test_vols, &train_cfg)?;
    write_artifacts(&run, out)?;

    println!(
        "done: val dice {:.4}, test dice {:.4}, {} skipped batches",
        run.val_dice.last().copied().unwrap_or(0.0),
        run.test_dice,
        run.skipped_batches
    );
    Ok(())
}
