//! Cross-run comparison of metrics files. The first file is the baseline.

use std::fmt::Write as _;
use std::path::Path;

use hetfl_core::accounting::{delta_cost, speedup};

use crate::metrics::{read_metrics, MetricsError};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub rounds: u32,
    pub final_global_acc: f64,
    pub rounds_to_target: Option<u32>,
    /// Cumulative bytes at the target round, or at the last round without a target.
    pub cost_bytes: Option<u64>,
    pub delta_cost_bytes: Option<f64>,
    pub speedup: Option<f64>,
}

pub const REPORT_HEADER: [&str; 7] = [
    "run",
    "rounds",
    "final_global_acc",
    "rounds_to_target",
    "cost_bytes",
    "delta_cost_bytes",
    "speedup",
];

/// Builds one row per metrics file.
pub fn build_report(paths: &[&Path], target: Option<f64>) -> Result<Vec<ReportRow>, MetricsError> {
    let mut rows: Vec<ReportRow> = Vec::with_capacity(paths.len());
    for path in paths {
        let metrics = read_metrics(path)?;
        let last = metrics.last().expect("read_metrics rejects empty files");
        let (rounds_to_target, cost_bytes) = match target {
            Some(t) => metrics
                .iter()
                .find(|m| m.global_kn_acc >= t)
                .map_or((None, None), |m| (Some(m.round), Some(m.cumulative_bytes))),
            None => (None, Some(last.cumulative_bytes)),
        };
        rows.push(ReportRow {
            run: path
                .file_stem()
                .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
            rounds: last.round,
            final_global_acc: last.global_kn_acc,
            rounds_to_target,
            cost_bytes,
            delta_cost_bytes: None,
            speedup: None,
        });
    }
    let baseline = rows.first().and_then(|r| r.cost_bytes);
    for row in &mut rows {
        if let (Some(base), Some(cost)) = (baseline, row.cost_bytes) {
            row.delta_cost_bytes = Some(delta_cost(base as f64, cost as f64));
            row.speedup = speedup(base as f64, cost as f64).ok();
        }
    }
    Ok(rows)
}

fn cells(row: &ReportRow) -> [String; 7] {
    let opt = |v: Option<String>| v.unwrap_or_else(|| "n/a".into());
    [
        row.run.clone(),
        row.rounds.to_string(),
        format!("{:.4}", row.final_global_acc),
        opt(row.rounds_to_target.map(|r| r.to_string())),
        opt(row.cost_bytes.map(|c| c.to_string())),
        opt(row.delta_cost_bytes.map(|d| format!("{d:+}"))),
        opt(row.speedup.map(|s| format!("{s:.2}x"))),
    ]
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER).expect("in-memory write");
    for row in rows {
        let c = cells(row).map(|v| if v == "n/a" { String::new() } else { v });
        w.write_record(&c).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Column-aligned table for terminals.
pub fn render_text(rows: &[ReportRow]) -> String {
    let body: Vec<[String; 7]> = rows.iter().map(cells).collect();
    let mut widths = REPORT_HEADER.map(str::len);
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let header = REPORT_HEADER.map(String::from);
    for r in std::iter::once(&header).chain(&body) {
        let line: Vec<String> = r
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
