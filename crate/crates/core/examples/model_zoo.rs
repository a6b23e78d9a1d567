//! Trains every run used by the stress, transfer and low-resource
//! experiments into one directory. Runs already present with the same
//! configuration are skipped, so the command can be resumed.
//!
//! cargo run --release --example model_zoo -- zoo [name-filter]

use std::path::PathBuf;

use legonn::harness::zoo;

fn main() -> legonn::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let root = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("zoo"));
    let filter = args.get(2).cloned().unwrap_or_default();
    for cfg in zoo::configs() {
        if !cfg.run.name.contains(&filter) {
            continue;
        }
        let (run, cached) = zoo::train_or_load(&cfg, Some(&root))?;
        let m = &run.manifest;
        println!(
            "{:<32} {} {:.4}  encoder {:?}  {:.0}s{}",
            cfg.run.name,
            m.metrics.test.metric.as_str(),
            m.metrics.test.value,
            m.metrics.encoders.iter().map(|e| (e.greedy.value * 1e4).round() / 1e4).collect::<Vec<_>>(),
            m.wall_clock_secs,
            if cached { " (cached)" } else { "" }
        );
    }
    Ok(())
}
