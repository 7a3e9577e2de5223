//! Flat `key = value` run configuration. Every subcommand reads its slice of
//! the same key space; keys a file mentions but no command defines are
//! rejected up front so a typo never silently falls back to a default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use l2net_core::boxes::ProposalConfig;
use l2net_core::l2pool::GradientMode;
use l2net_core::model::PoolKind;
use l2net_core::slices::{AugmentOp, FusionSpec, View};
use l2net_core::synth::SynthConfig;
use l2net_core::train::{ClassifyTrainConfig, DetectTrainConfig};
use l2net_core::volume::Modality;
use l2net_core::{Error, Result};

/// Everything the config file can say, each knob optional so the commands
/// can apply their own defaults for keys the file leaves out.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub seed: Option<u64>,

    // synthetic dataset
    pub volumes_per_class: Option<usize>,
    pub depth: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub modalities: Option<Vec<Modality>>,
    pub classify_split: Option<Vec<f64>>,
    pub detect_split: Option<Vec<f64>>,

    // optimization, shared by both trainers
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub pooling: Option<PoolKind>,
    pub gradient_mode: Option<GradientMode>,

    // classification
    pub batch_size: Option<usize>,
    pub eval_interval: Option<usize>,
    pub slices_per_volume: Option<usize>,
    pub augment: Option<Vec<AugmentOp>>,
    pub views: Option<Vec<View>>,
    pub fusion_triple: Option<[Modality; 3]>,
    pub fusion_fallback: Option<Vec<(Modality, Modality)>>,

    // detection
    pub proposal_batch: Option<usize>,
    pub fg_fraction: Option<f64>,
    pub fg_threshold: Option<f64>,
    pub bg_upper: Option<f64>,
    pub margin: Option<f64>,
    pub beta: Option<f64>,
    pub score_threshold: Option<f64>,
    pub nms_iou: Option<f64>,
    pub pyramid_levels: Option<Vec<usize>>,
    pub proposal_thresholds: Option<Vec<f64>>,
    pub proposal_min_area: Option<usize>,
    pub proposal_max: Option<usize>,
    pub proposal_merge_iou: Option<f64>,
    pub proposal_dedup_iou: Option<f64>,
    pub proposal_windows: Option<Vec<u32>>,
    pub proposal_dilations: Option<Vec<f64>>,
    pub proposal_peak_edges: Option<Vec<u32>>,
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("config line {}: expected key = value, got {line:?}", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse(format!("config line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::BadConfig(format!("duplicate config key {key:?}")));
        }
    }
    Ok(map)
}

fn take<T, F>(map: &mut BTreeMap<String, String>, key: &str, parse: F) -> Result<Option<T>>
where
    F: FnOnce(&str) -> Result<T>,
{
    match map.remove(key) {
        Some(raw) => parse(&raw)
            .map(Some)
            .map_err(|e| Error::BadConfig(format!("config key {key}: {e}"))),
        None => Ok(None),
    }
}

fn scalar<T: FromStr>(raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| Error::Parse(format!("{raw:?}: {e}")))
}

fn list<T: FromStr>(raw: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(scalar)
        .collect()
}

fn modality_list(raw: &str) -> Result<Vec<Modality>> {
    let out = list::<Modality>(raw)?;
    if out.is_empty() {
        return Err(Error::BadSubset);
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::BadConfig(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = parse_lines(text)?;
        let cfg = Self {
            seed: take(&mut map, "seed", scalar)?,
            volumes_per_class: take(&mut map, "volumes_per_class", scalar)?,
            depth: take(&mut map, "depth", scalar)?,
            height: take(&mut map, "height", scalar)?,
            width: take(&mut map, "width", scalar)?,
            modalities: take(&mut map, "modalities", modality_list)?,
            classify_split: take(&mut map, "classify_split", list)?,
            detect_split: take(&mut map, "detect_split", list)?,
            epochs: take(&mut map, "epochs", scalar)?,
            learning_rate: take(&mut map, "learning_rate", scalar)?,
            momentum: take(&mut map, "momentum", scalar)?,
            pooling: take(&mut map, "pooling", |s| PoolKind::from_str(s))?,
            gradient_mode: take(&mut map, "gradient_mode", |s| GradientMode::from_str(s))?,
            batch_size: take(&mut map, "batch_size", scalar)?,
            eval_interval: take(&mut map, "eval_interval", scalar)?,
            slices_per_volume: take(&mut map, "slices_per_volume", scalar)?,
            augment: take(&mut map, "augment", list)?,
            views: take(&mut map, "views", list)?,
            fusion_triple: take(&mut map, "fusion_triple", |s| {
                let ms = modality_list(s)?;
                <[Modality; 3]>::try_from(ms).map_err(|ms| {
                    Error::BadConfig(format!("fusion_triple needs exactly 3 modalities, got {}", ms.len()))
                })
            })?,
            fusion_fallback: take(&mut map, "fusion_fallback", |s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|pair| {
                        let (a, b) = pair.split_once(':').ok_or_else(|| {
                            Error::Parse(format!("fallback {pair:?} is not missing:substitute"))
                        })?;
                        Ok((Modality::from_str(a.trim())?, Modality::from_str(b.trim())?))
                    })
                    .collect()
            })?,
            proposal_batch: take(&mut map, "proposal_batch", scalar)?,
            fg_fraction: take(&mut map, "fg_fraction", scalar)?,
            fg_threshold: take(&mut map, "fg_threshold", scalar)?,
            bg_upper: take(&mut map, "bg_upper", scalar)?,
            margin: take(&mut map, "margin", scalar)?,
            beta: take(&mut map, "beta", scalar)?,
            score_threshold: take(&mut map, "score_threshold", scalar)?,
            nms_iou: take(&mut map, "nms_iou", scalar)?,
            pyramid_levels: take(&mut map, "pyramid_levels", list)?,
            proposal_thresholds: take(&mut map, "proposal_thresholds", list)?,
            proposal_min_area: take(&mut map, "proposal_min_area", scalar)?,
            proposal_max: take(&mut map, "proposal_max", scalar)?,
            proposal_merge_iou: take(&mut map, "proposal_merge_iou", scalar)?,
            proposal_dedup_iou: take(&mut map, "proposal_dedup_iou", scalar)?,
            proposal_windows: take(&mut map, "proposal_windows", list)?,
            proposal_dilations: take(&mut map, "proposal_dilations", list)?,
            proposal_peak_edges: take(&mut map, "proposal_peak_edges", list)?,
        };
        if !map.is_empty() {
            let unknown: Vec<&str> = map.keys().map(String::as_str).collect();
            return Err(Error::BadConfig(format!("unknown config key(s): {}", unknown.join(", "))));
        }
        Ok(cfg)
    }

    pub fn seed_or(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }

    pub fn synth_config(&self) -> SynthConfig {
        let defaults = SynthConfig::default();
        SynthConfig {
            volumes_per_class: self.volumes_per_class.unwrap_or(defaults.volumes_per_class),
            depth: self.depth.unwrap_or(defaults.depth),
            height: self.height.unwrap_or(defaults.height),
            width: self.width.unwrap_or(defaults.width),
            modalities: self.modalities.clone().unwrap_or(defaults.modalities),
            seed: self.seed.unwrap_or(defaults.seed),
        }
    }

    pub fn fusion(&self) -> FusionSpec {
        let defaults = FusionSpec::default();
        FusionSpec {
            triple: self.fusion_triple.unwrap_or(defaults.triple),
            fallback: self.fusion_fallback.clone().unwrap_or(defaults.fallback),
        }
    }

    pub fn classify_config(&self) -> ClassifyTrainConfig {
        let d = ClassifyTrainConfig::default();
        ClassifyTrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            momentum: self.momentum.unwrap_or(d.momentum),
            seed: self.seed.unwrap_or(d.seed),
            eval_interval: self.eval_interval.unwrap_or(d.eval_interval),
            pooling: self.pooling.unwrap_or(d.pooling),
            gradient_mode: self.gradient_mode.unwrap_or(d.gradient_mode),
            fusion: self.fusion(),
            views: self.views.clone().unwrap_or(d.views),
            augment_ops: self.augment.clone().unwrap_or(d.augment_ops),
            slices_per_volume: self.slices_per_volume.unwrap_or(d.slices_per_volume),
        }
    }

    pub fn proposal_config(&self) -> ProposalConfig {
        let d = ProposalConfig::default();
        ProposalConfig {
            thresholds: self.proposal_thresholds.clone().unwrap_or(d.thresholds),
            min_area: self.proposal_min_area.unwrap_or(d.min_area),
            max_proposals: self.proposal_max.unwrap_or(d.max_proposals),
            merge_iou: self.proposal_merge_iou.unwrap_or(d.merge_iou),
            dedup_iou: self.proposal_dedup_iou.unwrap_or(d.dedup_iou),
            window_sizes: self.proposal_windows.clone().unwrap_or(d.window_sizes),
            dilations: self.proposal_dilations.clone().unwrap_or(d.dilations),
            peak_edges: self.proposal_peak_edges.clone().unwrap_or(d.peak_edges),
            seed: self.seed.unwrap_or(d.seed),
        }
    }

    pub fn detect_config(&self) -> DetectTrainConfig {
        let d = DetectTrainConfig::default();
        DetectTrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            proposal_batch: self.proposal_batch.unwrap_or(d.proposal_batch),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            momentum: self.momentum.unwrap_or(d.momentum),
            seed: self.seed.unwrap_or(d.seed),
            pooling: self.pooling.unwrap_or(d.pooling),
            gradient_mode: self.gradient_mode.unwrap_or(d.gradient_mode),
            modalities: self.modalities.clone().unwrap_or(d.modalities),
            fusion: self.fusion(),
            fg_fraction: self.fg_fraction.unwrap_or(d.fg_fraction),
            fg_threshold: self.fg_threshold.unwrap_or(d.fg_threshold),
            bg_upper: self.bg_upper.unwrap_or(d.bg_upper),
            margin: self.margin.unwrap_or(d.margin),
            beta: self.beta.unwrap_or(d.beta),
            proposals: self.proposal_config(),
            score_threshold: self.score_threshold.unwrap_or(d.score_threshold),
            nms_iou: self.nms_iou.unwrap_or(d.nms_iou),
            pyramid_levels: self.pyramid_levels.clone().unwrap_or(d.pyramid_levels),
        }
    }

    /// Split fractions for the named task, validated to sum to 1.
    pub fn split_fractions(&self, task: SplitTask) -> Vec<f64> {
        match task {
            SplitTask::Classify => self.classify_split.clone().unwrap_or_else(|| vec![0.8, 0.2]),
            SplitTask::Detect => {
                self.detect_split.clone().unwrap_or_else(|| vec![0.7, 0.1, 0.2])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTask {
    Classify,
    Detect,
}
