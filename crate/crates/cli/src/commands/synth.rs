use std::path::Path;

use l2net_core::Result;

use crate::config::{RunConfig, SplitTask};
use crate::data::write_dataset;

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let synth = cfg.synth_config();
    synth.validate()?;
    let classify = cfg.split_fractions(SplitTask::Classify);
    let detect = cfg.split_fractions(SplitTask::Detect);
    let manifest = write_dataset(out, &synth, &classify, &detect)?;
    println!(
        "wrote {} volumes ({} per class, {}x{}x{}, {} modalities) to {}",
        manifest.volumes.len(),
        manifest.volumes_per_class,
        manifest.depth,
        manifest.height,
        manifest.width,
        manifest.modalities.len(),
        out.display()
    );
    println!("splits: {} and {}", SplitTask::Classify.file_name(), SplitTask::Detect.file_name());
    Ok(())
}
