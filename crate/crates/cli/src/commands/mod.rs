pub mod ablate;
pub mod eval;
pub mod gradcheck;
pub mod schema;
pub mod synth;
pub mod train_classify;
pub mod train_detect;

use serde::{Deserialize, Serialize};

/// What `train-detect` reports beyond the checkpoint and curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectReport {
    pub val_dice_per_epoch: Vec<f64>,
    pub final_val_dice: f64,
    pub test_dice: f64,
    pub iterations: u64,
    pub skipped_batches: usize,
}

/// What `eval` reports for a detection checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalDetectReport {
    pub subset: String,
    pub mean_dice: f64,
    pub mean_loss: f64,
    pub n_slices: usize,
}

/// Serializes a report as pretty JSON with a trailing newline, atomically.
pub fn write_json<T: Serialize>(value: &T, path: &std::path::Path) -> l2net_core::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| l2net_core::Error::Parse(format!("json serialization: {e}")))?;
    bytes.push(b'\n');
    l2net_core::report::write_atomic(path, &bytes)
}
