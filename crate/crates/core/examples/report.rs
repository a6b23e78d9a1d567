//! Gathers run manifests and experiment reports into CSV and SVG.
//!
//! cargo run --release --example report -- out-dir run-or-report-dir...

use std::path::PathBuf;

use legonn::harness::report::{collect, to_csv, to_svg};

fn main() -> legonn::Result<()> {
    let mut args = std::env::args().skip(1).map(PathBuf::from);
    let out = args.next().unwrap_or_else(|| PathBuf::from("report"));
    let dirs: Vec<PathBuf> = args.collect();
    let (rows, missing) = collect(&dirs);
    for (dir, why) in missing {
        eprintln!("skipped {}: {why}", dir.display());
    }
    std::fs::create_dir_all(&out).map_err(|e| legonn::Error::io(&out, e))?;
    let csv = to_csv(&rows)?;
    print!("{csv}");
    for (name, text) in [("report.csv", csv), ("report.svg", to_svg(&rows))] {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| legonn::Error::io(&p, e))?;
    }
    Ok(())
}
