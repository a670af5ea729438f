//! Text and CSV renderings of benchmark reports.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::runner::BenchReport;
use crate::error::{invalid, Error, Result};

pub const COLUMNS: [&str; 7] = ["topology", "tier", "throughput", "speedup", "p50_ms", "p99_ms", "failures"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(invalid(format!("unknown report format {other:?}"))),
        }
    }
}

/// One CSV record, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub topology: String,
    pub tier: u32,
    pub throughput: f64,
    pub speedup: Option<f64>,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub failures: usize,
}

impl From<&BenchReport> for ReportRow {
    fn from(r: &BenchReport) -> Self {
        Self {
            topology: r.topology.to_string(),
            tier: r.tier,
            throughput: r.request_throughput,
            speedup: r.speedup_vs_baseline,
            p50_ms: r.p50_latency_ms,
            p99_ms: r.p99_latency_ms,
            failures: r.failure_count,
        }
    }
}

pub fn emit_report(reports: &[BenchReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(invalid("no reports to emit"));
    }
    match format {
        ReportFormat::Csv => emit_csv(reports),
        ReportFormat::Table => Ok(emit_table(reports)),
    }
}

fn emit_csv(reports: &[BenchReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(ReportRow::from(r)).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn read_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| invalid(e.to_string()))?.clone();
    if headers.iter().ne(COLUMNS) {
        return Err(invalid(format!("unexpected header {headers:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| invalid(e.to_string())))
        .collect()
}

fn emit_table(reports: &[BenchReport]) -> String {
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            [
                r.topology.to_string(),
                r.tier.to_string(),
                format!("{:.2}", r.request_throughput),
                r.speedup_vs_baseline.map(|s| format!("{s:.2}")).unwrap_or_default(),
                format!("{:.1}", r.p50_latency_ms),
                format!("{:.1}", r.p99_latency_ms),
                r.failure_count.to_string(),
            ]
        })
        .collect();
    let mut widths = COLUMNS.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            // The topology name is left-aligned, numbers right-aligned.
            if i == 0 {
                let _ = write!(out, "{cell:<w$}", w = widths[i]);
            } else {
                let _ = write!(out, "{cell:>w$}", w = widths[i]);
            }
        }
    };
    line(&mut out, &COLUMNS.map(String::from));
    out.push('\n');
    for (row, r) in rows.iter().zip(reports) {
        line(&mut out, row);
        if let Some(e) = &r.error {
            let _ = write!(out, "  invalid: {e}");
        }
        out.push('\n');
    }
    out
}
