//! On-disk dataset layout shared by every subcommand:
//!
//! ```text
//! <dir>/manifest.json        seed, geometry, per-volume files + sha256
//! <dir>/volumes/<id>.mvol    one multi-modal volume per file
//! <dir>/split_classify.csv   id,subset rows (train / test)
//! <dir>/split_detect.csv     id,subset rows (train / val / test)
//! ```
//!
//! Splits are assigned per class so every subset sees every class, and the
//! assignment is a pure function of the dataset seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use l2net_core::report::write_atomic;
use l2net_core::synth::{generate_synthetic_dataset, split_ids, SynthConfig, NUM_CLASSES};
use l2net_core::volume::{load_volume, save_volume, MultiModalVolume};
use l2net_core::{Error, Result};

use crate::config::SplitTask;

/// Distinct shuffle streams so the two split files never mirror each other.
const SPLIT_CLASSIFY_STREAM: u64 = 0x1f83_d9ab_fb41_bd6b;
const SPLIT_DETECT_STREAM: u64 = 0x5be0_cd19_137e_2179;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub id: String,
    pub label: u32,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub volumes_per_class: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub modalities: Vec<String>,
    pub num_classes: usize,
    pub volumes: Vec<VolumeEntry>,
}

impl SplitTask {
    pub fn file_name(&self) -> &'static str {
        match self {
            SplitTask::Classify => "split_classify.csv",
            SplitTask::Detect => "split_detect.csv",
        }
    }

    pub fn subset_names(&self) -> &'static [&'static str] {
        match self {
            SplitTask::Classify => &["train", "test"],
            SplitTask::Detect => &["train", "val", "test"],
        }
    }

    fn stream(&self) -> u64 {
        match self {
            SplitTask::Classify => SPLIT_CLASSIFY_STREAM,
            SplitTask::Detect => SPLIT_DETECT_STREAM,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Class-stratified, volume-level split assignment: within each class the
/// ids are shuffled by a stream derived from (seed, task, class) and cut at
/// the cumulative fractions.
pub fn assign_splits(
    volumes: &[(String, MultiModalVolume)],
    task: SplitTask,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<(String, String)>> {
    let names = task.subset_names();
    if fractions.len() != names.len() {
        return Err(Error::BadConfig(format!(
            "{} needs {} split fractions, got {}",
            task.file_name(),
            names.len(),
            fractions.len()
        )));
    }
    let mut by_class: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (id, vol) in volumes {
        by_class.entry(vol.label).or_default().push(id.clone());
    }
    let mut assignment: Vec<(String, String)> = Vec::with_capacity(volumes.len());
    for (label, ids) in &by_class {
        let buckets = split_ids(ids, fractions, seed ^ task.stream() ^ u64::from(*label))?;
        for (bucket, name) in buckets.iter().zip(names) {
            if bucket.is_empty() {
                return Err(Error::BadConfig(format!(
                    "class {label} contributes no volumes to the {name} subset; \
                     raise volumes_per_class or adjust the fractions"
                )));
            }
            for id in bucket {
                assignment.push((id.clone(), name.to_string()));
            }
        }
    }
    assignment.sort();
    Ok(assignment)
}

fn write_split_csv(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["id", "subset"]).map_err(csv_err)?;
    for (id, subset) in rows {
        wtr.write_record([id, subset]).map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_split_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::DatasetMissing(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "subset"] {
        return Err(Error::Parse(format!(
            "{}: expected header id,subset, got {headers:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("{}: malformed row {rec:?}", path.display())));
        }
        rows.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Generates the dataset and writes every file under `dir`. Returns the
/// manifest that was written.
pub fn write_dataset(
    dir: &Path,
    cfg: &SynthConfig,
    classify_fractions: &[f64],
    detect_fractions: &[f64],
) -> Result<DatasetManifest> {
    let volumes = generate_synthetic_dataset(cfg)?;
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir)?;

    let mut entries = Vec::with_capacity(volumes.len());
    for (id, vol) in &volumes {
        let rel = format!("volumes/{id}.mvol");
        let path = dir.join(&rel);
        save_volume(vol, &path)?;
        let bytes = fs::read(&path)?;
        entries.push(VolumeEntry {
            id: id.clone(),
            label: vol.label,
            file: rel,
            sha256: sha256_hex(&bytes),
        });
    }

    for (task, fractions) in [
        (SplitTask::Classify, classify_fractions),
        (SplitTask::Detect, detect_fractions),
    ] {
        let rows = assign_splits(&volumes, task, fractions, cfg.seed)?;
        write_split_csv(&dir.join(task.file_name()), &rows)?;
    }

    let manifest = DatasetManifest {
        seed: cfg.seed,
        volumes_per_class: cfg.volumes_per_class,
        depth: cfg.depth,
        height: cfg.height,
        width: cfg.width,
        modalities: cfg.modalities.iter().map(|m| m.as_str().to_string()).collect(),
        num_classes: NUM_CLASSES,
        volumes: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Parse(format!("manifest serialization: {e}")))?;
    json.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::DatasetMissing(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Loads the volumes of one split subset, in split-file row order.
pub fn load_subset(
    dir: &Path,
    task: SplitTask,
    subset: &str,
) -> Result<Vec<(String, MultiModalVolume)>> {
    if !task.subset_names().contains(&subset) {
        return Err(Error::BadConfig(format!(
            "unknown subset {subset:?} for {} (expected one of {:?})",
            task.file_name(),
            task.subset_names()
        )));
    }
    let rows = read_split_csv(&dir.join(task.file_name()))?;
    let manifest = load_manifest(dir)?;
    let files: BTreeMap<&str, &str> =
        manifest.volumes.iter().map(|v| (v.id.as_str(), v.file.as_str())).collect();
    let mut out = Vec::new();
    for (id, sub) in &rows {
        if sub != subset {
            continue;
        }
        let rel: &str = files
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::DatasetMissing(format!("{id} listed in split but not in manifest")))?;
        out.push((id.clone(), load_volume(&dir.join(rel))?));
    }
    if out.is_empty() {
        return Err(Error::DatasetMissing(format!(
            "subset {subset:?} of {} is empty",
            task.file_name()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use l2net_core::volume::Modality;

    fn tiny_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            volumes_per_class: 6,
            depth: 6,
            height: 32,
            width: 32,
            modalities: vec![Modality::T1, Modality::T1c, Modality::T2, Modality::Flair],
            seed,
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest =
            write_dataset(tmp.path(), &tiny_cfg(5), &[0.8, 0.2], &[0.7, 0.1, 0.2]).unwrap();
        assert_eq!(manifest.volumes.len(), 30);

        let loaded = load_manifest(tmp.path()).unwrap();
        assert_eq!(loaded.volumes.len(), manifest.volumes.len());
        for (a, b) in loaded.volumes.iter().zip(&manifest.volumes) {
            assert_eq!(a.sha256, b.sha256);
        }

        let train = load_subset(tmp.path(), SplitTask::Classify, "train").unwrap();
        let test = load_subset(tmp.path(), SplitTask::Classify, "test").unwrap();
        assert_eq!(train.len() + test.len(), 30);
        for (id, _) in &test {
            assert!(!train.iter().any(|(t, _)| t == id), "{id} leaked across the split");
        }
    }

    #[test]
    fn same_seed_gives_identical_checksums_and_splits() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = write_dataset(a.path(), &tiny_cfg(9), &[0.8, 0.2], &[0.7, 0.1, 0.2]).unwrap();
        let mb = write_dataset(b.path(), &tiny_cfg(9), &[0.8, 0.2], &[0.7, 0.1, 0.2]).unwrap();
        for (va, vb) in ma.volumes.iter().zip(&mb.volumes) {
            assert_eq!(va.sha256, vb.sha256);
        }
        assert_eq!(
            fs::read(a.path().join("split_detect.csv")).unwrap(),
            fs::read(b.path().join("split_detect.csv")).unwrap()
        );
    }

    #[test]
    fn every_class_reaches_every_subset() {
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(tmp.path(), &tiny_cfg(3), &[0.8, 0.2], &[0.7, 0.1, 0.2]).unwrap();
        for subset in ["train", "val", "test"] {
            let vols = load_subset(tmp.path(), SplitTask::Detect, subset).unwrap();
            let mut labels: Vec<u32> = vols.iter().map(|(_, v)| v.label).collect();
            labels.sort_unstable();
            labels.dedup();
            assert_eq!(labels, vec![0, 1, 2, 3, 4], "{subset} is missing classes");
        }
    }

    #[test]
    fn wrong_subset_name_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(tmp.path(), &tiny_cfg(1), &[0.8, 0.2], &[0.7, 0.1, 0.2]).unwrap();
        assert!(matches!(
            load_subset(tmp.path(), SplitTask::Classify, "val"),
            Err(Error::BadConfig(_))
        ));
    }
}
