use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use l2net_core::metrics::EvalReport;
use l2net_core::model::{read_checkpoint, ClassifyNet, DetectNet};
use l2net_core::report::read_curve_csv;
use l2net_core::volume::load_volume;
use l2net_core::{Error, Result};

use crate::config::SplitTask;
use crate::data::{load_manifest, read_split_csv, sha256_hex, DatasetManifest};

use super::{DetectReport, EvalDetectReport};

/// Validates every recognized artifact under `path` against its documented
/// schema and cross-checks the dataset manifest, checksums and splits.
/// Unknown files are listed and skipped.
pub fn run(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::DatasetMissing(format!("{} is not a directory", path.display())));
    }
    let mut files = Vec::new();
    collect(path, &mut files)?;
    files.sort();

    let manifest = if path.join("manifest.json").is_file() {
        Some(check_manifest(path)?)
    } else {
        None
    };

    let mut checked = 0usize;
    for file in &files {
        let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let display = file.strip_prefix(path).unwrap_or(file).display();
        let known = match name {
            "manifest.json" => true, // validated above, with cross-checks
            "split_classify.csv" => {
                check_split(file, SplitTask::Classify, manifest.as_ref())?;
                true
            }
            "split_detect.csv" => {
                check_split(file, SplitTask::Detect, manifest.as_ref())?;
                true
            }
            "classify_report.json" | "eval_report.json" => {
                check_eval_report(file)?;
                true
            }
            "detect_report.json" => {
                check_detect_report(file)?;
                true
            }
            "eval_detect.json" => {
                check_eval_detect(file)?;
                true
            }
            "classify_report.csv" | "eval_report.csv" => {
                check_report_table(file)?;
                true
            }
            "detect_loss_log.csv" => {
                check_loss_log(file)?;
                true
            }
            "ablate_modality.csv" => {
                check_ablate_modality(file)?;
                true
            }
            "ablate_pooling.csv" => {
                check_ablate_pooling(file)?;
                true
            }
            _ if name.ends_with("_curve.csv") => {
                read_curve_csv(file)?;
                true
            }
            _ if name.ends_with(".ckpt") => {
                check_checkpoint(file)?;
                true
            }
            _ if name.ends_with(".mvol") => {
                load_volume(file)?;
                true
            }
            _ => false,
        };
        if known {
            println!("ok      {display}");
            checked += 1;
        } else {
            println!("skipped {display}");
        }
    }
    if checked == 0 {
        return Err(Error::DatasetMissing(format!(
            "no recognized artifacts under {}",
            path.display()
        )));
    }
    println!("{checked} artifact(s) conform");
    Ok(())
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let p = entry.path();
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn bad(file: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {msg}", file.display()))
}

fn check_manifest(dir: &Path) -> Result<DatasetManifest> {
    let manifest = load_manifest(dir)?;
    if manifest.volumes.is_empty() {
        return Err(bad(&dir.join("manifest.json"), "lists no volumes"));
    }
    for v in &manifest.volumes {
        let file = dir.join(&v.file);
        let bytes = std::fs::read(&file)
            .map_err(|e| bad(&file, format!("listed in manifest but unreadable: {e}")))?;
        let digest = sha256_hex(&bytes);
        if digest != v.sha256 {
            return Err(bad(&file, format!("checksum {digest} != manifest {}", v.sha256)));
        }
        let vol = load_volume(&file)?;
        if vol.label != v.label {
            return Err(bad(&file, format!("label {} != manifest {}", vol.label, v.label)));
        }
        if vol.dims() != (manifest.depth, manifest.height, manifest.width) {
            return Err(bad(&file, "dimensions disagree with the manifest"));
        }
    }
    Ok(manifest)
}

fn check_split(file: &Path, task: SplitTask, manifest: Option<&DatasetManifest>) -> Result<()> {
    let rows = read_split_csv(file)?;
    if rows.is_empty() {
        return Err(bad(file, "no rows"));
    }
    let mut seen = BTreeSet::new();
    for (id, subset) in &rows {
        if !task.subset_names().contains(&subset.as_str()) {
            return Err(bad(file, format!("unknown subset {subset:?} for id {id}")));
        }
        if !seen.insert(id.clone()) {
            return Err(bad(file, format!("id {id} assigned twice")));
        }
    }
    if let Some(m) = manifest {
        let ids: BTreeSet<&str> = m.volumes.iter().map(|v| v.id.as_str()).collect();
        let split_ids: BTreeSet<&str> = rows.iter().map(|(id, _)| id.as_str()).collect();
        if ids != split_ids {
            return Err(bad(file, "split ids do not exactly cover the manifest volumes"));
        }
    }
    Ok(())
}

fn rate_in(file: &Path, name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(bad(file, format!("{name} {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_eval_report(file: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(file)?;
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| bad(file, e))?;
    rate_in(file, "accuracy", report.accuracy, 0.0, 1.0)?;
    rate_in(file, "sensitivity", report.sensitivity, 0.0, 1.0)?;
    rate_in(file, "specificity", report.specificity, 0.0, 1.0)?;
    rate_in(file, "recall", report.recall, 0.0, 1.0)?;
    rate_in(file, "kappa", report.kappa, -1.0, 1.0)?;
    if let Some(d) = report.dice {
        rate_in(file, "dice", d, 0.0, 1.0)?;
    }
    if report.n_samples == 0 {
        return Err(bad(file, "n_samples is zero"));
    }
    if let Some(cm) = &report.confusion {
        let total: u64 = cm.iter().flatten().sum();
        if total != report.n_samples {
            return Err(bad(file, "confusion total disagrees with n_samples"));
        }
    }
    Ok(report)
}

fn check_detect_report(file: &Path) -> Result<()> {
    let text = std::fs::read_to_string(file)?;
    let report: DetectReport = serde_json::from_str(&text).map_err(|e| bad(file, e))?;
    for (name, v) in [("final_val_dice", report.final_val_dice), ("test_dice", report.test_dice)] {
        rate_in(file, name, v, 0.0, 1.0)?;
    }
    for (i, v) in report.val_dice_per_epoch.iter().enumerate() {
        rate_in(file, &format!("val_dice_per_epoch[{i}]"), *v, 0.0, 1.0)?;
    }
    Ok(())
}

fn check_eval_detect(file: &Path) -> Result<()> {
    let text = std::fs::read_to_string(file)?;
    let report: EvalDetectReport = serde_json::from_str(&text).map_err(|e| bad(file, e))?;
    rate_in(file, "mean_dice", report.mean_dice, 0.0, 1.0)?;
    if report.n_slices == 0 {
        return Err(bad(file, "n_slices is zero"));
    }
    Ok(())
}

fn csv_reader(file: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(file)
        .map_err(|e| bad(file, e))
}

fn expect_header(file: &Path, rdr: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(|e| bad(file, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(bad(file, format!("expected header {}, got {headers:?}", want.join(","))));
    }
    Ok(())
}

fn check_report_table(file: &Path) -> Result<()> {
    let mut rdr = csv_reader(file)?;
    expect_header(file, &mut rdr, &["accuracy", "sensitivity", "specificity", "recall", "kappa"])?;
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(file, e))?;
        for v in rec.iter() {
            v.parse::<f64>().map_err(|e| bad(file, format!("{v:?}: {e}")))?;
        }
        rows += 1;
    }
    if rows != 1 {
        return Err(bad(file, format!("expected exactly one data row, got {rows}")));
    }
    Ok(())
}

fn check_loss_log(file: &Path) -> Result<()> {
    let mut rdr = csv_reader(file)?;
    expect_header(file, &mut rdr, &["iteration", "total", "cls", "bbox"])?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(file, e))?;
        rec[0].parse::<u64>().map_err(|e| bad(file, e))?;
        let total: f64 = rec[1].parse().map_err(|e| bad(file, e))?;
        let cls: f64 = rec[2].parse().map_err(|e| bad(file, e))?;
        let bbox: f64 = rec[3].parse().map_err(|e| bad(file, e))?;
        if total.to_bits() != (cls + bbox).to_bits() {
            return Err(bad(file, format!("row {}: total != cls + bbox bitwise", &rec[0])));
        }
    }
    Ok(())
}

fn check_ablate_modality(file: &Path) -> Result<()> {
    let mut rdr = csv_reader(file)?;
    expect_header(file, &mut rdr, &["t1", "t1c", "t2", "f_d", "dice"])?;
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(file, e))?;
        for flag in rec.iter().take(4) {
            if flag != "x" && flag != "-" {
                return Err(bad(file, format!("flag {flag:?} is neither x nor -")));
            }
        }
        let dice: f64 = rec[4].parse().map_err(|e| bad(file, e))?;
        rate_in(file, "dice", dice, 0.0, 1.0)?;
        rows += 1;
    }
    if rows == 0 {
        return Err(bad(file, "no rows"));
    }
    Ok(())
}

fn check_ablate_pooling(file: &Path) -> Result<()> {
    let mut rdr = csv_reader(file)?;
    expect_header(file, &mut rdr, &["pooling", "dice"])?;
    let mut kinds = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(file, e))?;
        if rec[0] != *"l2" && rec[0] != *"max" {
            return Err(bad(file, format!("pooling {:?} is neither l2 nor max", &rec[0])));
        }
        let dice: f64 = rec[1].parse().map_err(|e| bad(file, e))?;
        rate_in(file, "dice", dice, 0.0, 1.0)?;
        kinds.push(rec[0].to_string());
    }
    if kinds != ["l2", "max"] {
        return Err(bad(file, format!("expected the rows l2,max in order, got {kinds:?}")));
    }
    Ok(())
}

fn check_checkpoint(file: &Path) -> Result<()> {
    let (manifest, _) = read_checkpoint(file)?;
    match manifest.kind.as_str() {
        "classify" => ClassifyNet::load(file).map(|_| ()),
        "detect" => DetectNet::load(file).map(|_| ()),
        other => Err(bad(file, format!("unknown checkpoint kind {other:?}"))),
    }
}
