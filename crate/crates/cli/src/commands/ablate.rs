use std::path::Path;

use l2net_core::model::PoolKind;
use l2net_core::report::write_atomic;
use l2net_core::train::train_detect;
use l2net_core::volume::{MultiModalVolume, Modality};
use l2net_core::{Error, Result};

use crate::config::{RunConfig, SplitTask};
use crate::data::load_subset;

/// The incremental modality ladder: each row adds one contrast, ending with
/// the full stack.
pub const MODALITY_LADDER: [&[Modality]; 4] = [
    &[Modality::T1],
    &[Modality::T1, Modality::T1c],
    &[Modality::T1, Modality::T1c, Modality::T2],
    &[Modality::T1, Modality::T1c, Modality::T2, Modality::Flair],
];

const FLAG_COLUMNS: [Modality; 4] = [Modality::T1, Modality::T1c, Modality::T2, Modality::Flair];

fn load_detect_splits(
    data: &Path,
) -> Result<(
    Vec<(String, MultiModalVolume)>,
    Vec<(String, MultiModalVolume)>,
    Vec<(String, MultiModalVolume)>,
)> {
    Ok((
        load_subset(data, SplitTask::Detect, "train")?,
        load_subset(data, SplitTask::Detect, "val")?,
        load_subset(data, SplitTask::Detect, "test")?,
    ))
}

/// One seeded detection run per modality subset; emits the flag-table CSV
/// (`x` = modality used, `-` = left out) with the test Dice per row.
pub fn modality(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let subsets: Vec<Vec<Modality>> = match &cfg.modalities {
        // A config modality list restricts the ladder to its prefix rows.
        Some(ms) => MODALITY_LADDER
            .iter()
            .filter(|row| row.iter().all(|m| ms.contains(m)))
            .map(|row| row.to_vec())
            .collect(),
        None => MODALITY_LADDER.iter().map(|row| row.to_vec()).collect(),
    };
    if subsets.is_empty() {
        return Err(Error::BadSubset);
    }
    let (train_vols, val_vols, test_vols) = load_detect_splits(data)?;

    let mut rows = Vec::with_capacity(subsets.len());
    for modalities in &subsets {
        let mut run_cfg = cfg.detect_config();
        run_cfg.modalities = modalities.clone();
        run_cfg.validate()?;
        let names: Vec<&str> = modalities.iter().map(|m| m.as_str()).collect();
        println!("ablation run: modalities [{}]", names.join(", "));
        let run = train_detect(&train_vols, &val_vols, &test_vols, &run_cfg)?;
        println!("  test dice {:.4}", run.test_dice);
        rows.push((modalities.clone(), run.test_dice));
    }

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["t1", "t1c", "t2", "f_d", "dice"]).map_err(csv_err)?;
    for (modalities, dice) in &rows {
        let mut record: Vec<String> = FLAG_COLUMNS
            .iter()
            .map(|m| if modalities.contains(m) { "x".to_string() } else { "-".to_string() })
            .collect();
        record.push(format!("{dice:.4}"));
        wtr.write_record(&record).map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("ablate_modality.csv"), &bytes)?;
    println!("wrote {}", out.join("ablate_modality.csv").display());
    Ok(())
}

/// Paired seeded detection runs with the euclidean-norm pooling switched for
/// plain max pooling everywhere it appears; emits `pooling,dice`.
pub fn pooling(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let (train_vols, val_vols, test_vols) = load_detect_splits(data)?;

    let mut rows = Vec::new();
    for kind in [PoolKind::L2, PoolKind::Max] {
        let mut run_cfg = cfg.detect_config();
        run_cfg.pooling = kind;
        run_cfg.validate()?;
        println!("ablation run: pooling {}", kind.as_str());
        let run = train_detect(&train_vols, &val_vols, &test_vols, &run_cfg)?;
        println!("  test dice {:.4}", run.test_dice);
        rows.push((kind, run.test_dice));
    }

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["pooling", "dice"]).map_err(csv_err)?;
    for (kind, dice) in &rows {
        wtr.write_record([kind.as_str(), &format!("{dice:.4}")]).map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("ablate_pooling.csv"), &bytes)?;
    println!("wrote {}", out.join("ablate_pooling.csv").display());
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
