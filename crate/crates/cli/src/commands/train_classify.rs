use std::path::Path;

use l2net_core::report::{write_curve_csv, write_report_json, write_report_table_csv};
use l2net_core::train::train_classify;
use l2net_core::Result;

use crate::config::{RunConfig, SplitTask};
use crate::data::load_subset;
use crate::Format;

pub fn run(cfg: &RunConfig, data: &Path, out: &Path, format: Format) -> Result<()> {
    let train_cfg = cfg.classify_config();
    train_cfg.validate()?;
    let train_vols = load_subset(data, SplitTask::Classify, "train")?;
    let test_vols = load_subset(data, SplitTask::Classify, "test")?;
    println!(
        "training classifier: {} train / {} test volumes, {} epochs, pooling {}, seed {}",
        train_vols.len(),
        test_vols.len(),
        train_cfg.epochs,
        train_cfg.pooling.as_str(),
        train_cfg.seed
    );

    let run = train_classify(&train_vols, &test_vols, &train_cfg)?;

    std::fs::create_dir_all(out)?;
    write_curve_csv(&run.curve, &out.join("classify_curve.csv"))?;
    write_report_json(&run.report, &out.join("classify_report.json"))?;
    if format == Format::Csv {
        write_report_table_csv(&run.report, &out.join("classify_report.csv"))?;
    }
    run.net.save(&out.join("classify_model.ckpt"))?;

    println!(
        "done: test accuracy {:.4}, kappa {:.4}, test loss {:.4} over {} slices",
        run.report.accuracy, run.report.kappa, run.final_test_loss, run.report.n_samples
    );
    Ok(())
}
