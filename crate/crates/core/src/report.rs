//! Report serialization: JSON for machines, CSV for spreadsheets.
//!
//! JSON output is byte-stable for a given report (fixed field order, ordered
//! collections, shortest-round-trip floats), which is what makes
//! same-seed-same-bytes comparisons possible.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pipeline::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidParameter(format!(
                "unknown report format `{other}` (expected json|csv)"
            ))),
        }
    }
}

/// The canonical JSON encoding of a report.
pub fn report_to_json(report: &RunReport) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

/// Flatten a report to CSV: one row per (event, layer).
pub fn write_report_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv output>", io),
        other => Error::InvalidParameter(format!("csv encoding failed: {other:?}")),
    };
    w.write_record([
        "epoch",
        "layer",
        "live_before",
        "sparsity",
        "skipped",
        "merges",
        "cutoff",
        "universe",
        "covered",
        "coverage_rate",
        "kept",
        "pruned",
        "regrown",
    ])
    .map_err(io_err)?;
    for event in &report.events {
        for le in &event.layers {
            w.write_record([
                event.epoch.to_string(),
                le.layer.clone(),
                le.live_before.to_string(),
                le.sparsity.to_string(),
                le.skipped.to_string(),
                le.merges.to_string(),
                le.cutoff.to_string(),
                le.universe.to_string(),
                le.covered.to_string(),
                le.coverage_rate.to_string(),
                le.kept.len().to_string(),
                le.pruned.len().to_string(),
                le.regrown.len().to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Serialize `report` in `format` to `out`.
pub fn emit_report<W: Write>(report: &RunReport, format: ReportFormat, mut out: W) -> Result<()> {
    match format {
        ReportFormat::Json => out
            .write_all(report_to_json(report)?.as_bytes())
            .map_err(|e| Error::io("<report output>", e)),
        ReportFormat::Csv => write_report_csv(report, out),
    }
}

/// Read back a JSON report.
pub fn read_report_json(path: impl AsRef<Path>) -> Result<RunReport> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let report: RunReport = serde_json::from_str(&text)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::toy_chain;
    use crate::linkage::LinkageMethod;
    use crate::coverage::TieBreak;
    use crate::pipeline::{run_pipeline, MockTrainer, PipelineConfig};
    use crate::schedule::{GammaDescending, Schedule};

    fn sample_report() -> RunReport {
        let mut snap = toy_chain("t", &[8, 6], 3, 3, 8, 4, 1).unwrap();
        let cfg = PipelineConfig {
            epochs: 4,
            schedule: Schedule::new(4, 2, 0.5).unwrap(),
            linkage: LinkageMethod::Ward,
            tie: TieBreak::MaxL2,
            seed: 3,
        };
        let mut trainer = MockTrainer::new(2);
        run_pipeline(&mut snap, &mut trainer, &cfg, &GammaDescending)
            .unwrap()
            .report
    }

    #[test]
    fn json_round_trip_preserves_report() {
        let report = sample_report();
        let text = report_to_json(&report).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        std::fs::write(&path, &text).unwrap();
        let back = read_report_json(&path).unwrap();
        assert_eq!(back, report);
        assert_eq!(report_to_json(&back).unwrap(), text);
    }

    #[test]
    fn csv_has_one_row_per_event_layer() {
        let report = sample_report();
        let mut buf = Vec::new();
        write_report_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: usize = report.events.iter().map(|e| e.layers.len()).sum();
        assert_eq!(text.lines().count(), rows + 1);
        assert!(text.lines().next().unwrap().starts_with("epoch,layer,"));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("yaml".parse::<ReportFormat>().is_err());
    }
}
