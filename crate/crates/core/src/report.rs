//! Serialization of training curves and evaluation reports.
//!
//! Two artifact families come out of a run: a learning-curve CSV (one row per
//! logged iteration) and an evaluation report, written either as JSON (every
//! `EvalReport` field, in declaration order) or as a one-row summary CSV whose
//! five metric columns follow the common clinical-paper convention of printing
//! accuracy and recall as percentages while sensitivity, specificity and kappa
//! stay as fractions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::EvalReport;

/// One logged point on the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// Write bytes to `path` atomically: write a sibling temp file, then rename.
/// An abort mid-run therefore never leaves a half-written artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write the learning curve as CSV with columns
/// `iteration,train_loss,test_loss,test_accuracy`. An empty curve produces a
/// header-only file.
pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "train_loss", "test_loss", "test_accuracy"])
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    for p in points {
        w.write_record([
            p.iteration.to_string(),
            format!("{:.6}", p.train_loss),
            format!("{:.6}", p.test_loss),
            format!("{:.6}", p.test_accuracy),
        ])
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Read a learning-curve CSV written by [`write_curve_csv`].
pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let p: CurvePoint = rec.map_err(|e| crate::error::Error::Parse(e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}

/// Write the report as pretty JSON; keys are exactly the `EvalReport` field
/// names in declaration order.
pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Write the one-row summary CSV with columns
/// `accuracy,sensitivity,specificity,recall,kappa`.
///
/// Accuracy and recall are scaled to percent (e.g. `95.308`); sensitivity,
/// specificity and kappa are left as fractions (e.g. `0.91`). The asymmetry is
/// deliberate and documented: it mirrors how these five columns are
/// conventionally printed side by side in the literature this tool's output
/// is meant to be compared against.
pub fn write_report_table_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["accuracy", "sensitivity", "specificity", "recall", "kappa"])
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    w.write_record([
        format!("{:.3}", report.accuracy * 100.0),
        format!("{:.4}", report.sensitivity),
        format!("{:.4}", report.specificity),
        format!("{:.3}", report.recall * 100.0),
        format!("{:.4}", report.kappa),
    ])
    .map_err(|e| std::io::Error::other(e.to_string()))?;
    let bytes = w
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{confusion, derive_metrics};

    #[test]
    fn empty_curve_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.trim(), "iteration,train_loss,test_loss,test_accuracy");
    }

    #[test]
    fn curve_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let pts = vec![
            CurvePoint { iteration: 0, train_loss: 1.5, test_loss: 1.75, test_accuracy: 0.25 },
            CurvePoint { iteration: 10, train_loss: 0.5, test_loss: 0.625, test_accuracy: 0.75 },
        ];
        write_curve_csv(&pts, &path).unwrap();
        let back = read_curve_csv(&path).unwrap();
        assert_eq!(back, pts);
    }

    #[test]
    fn json_report_round_trips_by_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let cm = confusion(&[0, 1, 1, 0, 2], &[0, 1, 0, 0, 2], 3).unwrap();
        let report = derive_metrics(&cm).unwrap();
        write_report_json(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.accuracy.to_bits(), report.accuracy.to_bits());
        assert_eq!(back.kappa.to_bits(), report.kappa.to_bits());
        assert_eq!(back.n_samples, report.n_samples);

        // Field order in the file matches declaration order.
        let acc = text.find("\"accuracy\"").unwrap();
        let sens = text.find("\"sensitivity\"").unwrap();
        let kappa = text.find("\"kappa\"").unwrap();
        assert!(acc < sens && sens < kappa);
    }

    #[test]
    fn table_csv_has_five_metric_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let cm = confusion(&[0, 1, 1, 0], &[0, 1, 1, 1], 2).unwrap();
        let report = derive_metrics(&cm).unwrap();
        write_report_table_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "accuracy,sensitivity,specificity,recall,kappa");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 5);
        // accuracy = 3/4 printed in percent; recall likewise.
        assert_eq!(row[0], "75.000");
        let recall: f64 = row[3].parse().unwrap();
        assert!((recall - report.recall * 100.0).abs() < 1e-3);
        // sensitivity and kappa stay as fractions.
        let sens: f64 = row[1].parse().unwrap();
        assert!(sens <= 1.0);
    }
}
