//! CSV tables and SVG bar charts aggregated from run directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiments::{ExperimentReport, ReportRow};
use super::run::{read_manifest, RunManifest, MANIFEST_FILE};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const CSV_HEADER: [&str; 7] = [
    "experiment",
    "pair_id",
    "encoder_src",
    "decoder_src",
    "metric_name",
    "value",
    "retention_pct",
];

/// A training run as a single self-referenced row.
pub fn manifest_row(m: &RunManifest) -> ReportRow {
    ReportRow {
        experiment: "train".into(),
        pair_id: m.config.run.name.clone(),
        encoder_src: m.config.run.name.clone(),
        decoder_src: m.config.run.name.clone(),
        metric_name: m.metrics.test.metric.as_str().into(),
        value: Some(m.metrics.test.value),
        reference: Some(m.metrics.test.value),
        retention_pct: Some(100.0),
        intact: true,
        note: String::new(),
    }
}

pub fn save_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_report(dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = dir.as_ref().join(REPORT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn is_run_dir(p: &Path) -> bool {
    p.join(MANIFEST_FILE).is_file() || p.join(REPORT_FILE).is_file()
}

/// Rows gathered from the given directories, plus the directories that
/// held nothing readable. A directory that is not itself a run is
/// searched one level down.
pub fn collect(dirs: &[PathBuf]) -> (Vec<ReportRow>, Vec<(PathBuf, String)>) {
    let mut candidates = Vec::new();
    for d in dirs {
        if is_run_dir(d) {
            candidates.push(d.clone());
            continue;
        }
        let mut children: Vec<PathBuf> = std::fs::read_dir(d)
            .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect())
            .unwrap_or_default();
        children.sort();
        candidates.extend(children);
    }
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for d in candidates {
        if d.join(REPORT_FILE).is_file() {
            match read_report(&d) {
                Ok(r) => rows.extend(r.rows),
                Err(e) => missing.push((d, e.to_string())),
            }
        } else {
            match read_manifest(&d) {
                Ok(m) => rows.push(manifest_row(&m)),
                Err(e) => missing.push((d, e.to_string())),
            }
        }
    }
    (rows, missing)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.experiment.as_str(),
            &r.pair_id,
            &r.encoder_src,
            &r.decoder_src,
            &r.metric_name,
            &fmt_opt(r.value),
            &fmt_opt(r.retention_pct),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped horizontal-axis bars of retention percentages, one group per
/// experiment, with a dashed line at 100%.
pub fn to_svg(rows: &[ReportRow]) -> String {
    let bar_w = 18.0;
    let gap = 24.0;
    let (left, top, plot_h) = (50.0, 30.0, 220.0);
    let mut groups: Vec<(&str, Vec<&ReportRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|g| g.0 == r.experiment) {
            Some(g) => g.1.push(r),
            None => groups.push((&r.experiment, vec![r])),
        }
    }
    let max_pct = rows
        .iter()
        .filter_map(|r| r.retention_pct)
        .fold(120.0_f64, f64::max)
        .ceil();
    let n_bars: usize = groups.iter().map(|g| g.1.len()).sum();
    let width = left + n_bars as f64 * bar_w + (groups.len() + 1) as f64 * gap;
    let height = top + plot_h + 60.0;
    let y = |pct: f64| top + plot_h * (1.0 - pct.clamp(0.0, max_pct) / max_pct);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#,
        top + plot_h
    );
    for tick in [0.0, 50.0, 100.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{tick:.0}%</text>"#,
            left - 4.0,
            y(tick) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.1}" x2="{width:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        y(100.0),
        y(100.0)
    );
    let mut x = left + gap;
    for (name, bars) in &groups {
        let start = x;
        for r in bars {
            let pct = r.retention_pct.unwrap_or(0.0);
            let fill = if r.intact { "#7a9cc6" } else { "#d98c5f" };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{fill}"><title>{}: {}</title></rect>"#,
                y(pct),
                bar_w - 2.0,
                top + plot_h - y(pct),
                escape(&r.pair_id),
                fmt_opt(r.retention_pct)
            );
            x += bar_w;
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (start + x) / 2.0,
            top + plot_h + 16.0,
            escape(name)
        );
        x += gap;
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(exp: &str, pct: Option<f64>) -> ReportRow {
        ReportRow {
            experiment: exp.into(),
            pair_id: "a+b".into(),
            encoder_src: "a".into(),
            decoder_src: "b".into(),
            metric_name: "bleu".into(),
            value: Some(0.5),
            reference: Some(0.6),
            retention_pct: pct,
            intact: false,
            note: String::new(),
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        assert_eq!(to_csv(&[]).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn missing_values_are_blank() {
        let csv = to_csv(&[row("seed_swap", None)]).unwrap();
        assert!(csv.lines().nth(1).unwrap().ends_with(",bleu,0.500000,"));
    }

    #[test]
    fn svg_has_one_bar_per_row() {
        let svg = to_svg(&[row("x", Some(80.0)), row("y", Some(20.0)), row("y", None)]);
        assert_eq!(svg.matches("<rect x=").count(), 3);
        assert!(svg.starts_with("<svg"));
    }
}
