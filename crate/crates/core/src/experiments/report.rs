//! CSV files for evaluation reports.
//!
//! Columns: `row,lanes,vehicles,seed,return,std,lane_changes,lane_change_requests`.
//! Scenario rows have `row = scenario`, an empty `std` and the episode's
//! counts. Each density is followed by one `row = mean` line with the mean
//! return, its sample standard deviation, an empty seed and mean counts.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{EpisodeResult, EvalReport};
use crate::error::{CoreError, Result};

pub const REPORT_HEADER: [&str; 8] = [
    "row",
    "lanes",
    "vehicles",
    "seed",
    "return",
    "std",
    "lane_changes",
    "lane_change_requests",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    row: String,
    lanes: usize,
    vehicles: usize,
    seed: Option<u64>,
    #[serde(rename = "return")]
    value: f64,
    std: Option<f64>,
    lane_changes: f64,
    lane_change_requests: f64,
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Dataset(format!("report csv: {e}"))
}

pub fn write_report(report: &EvalReport, out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    let aggregates = report.aggregates();
    let mut rows = report.rows().iter().peekable();
    for agg in aggregates {
        while let Some(r) = rows.next_if(|r| r.vehicles == agg.vehicles && r.lanes == agg.lanes) {
            w.serialize(CsvRow {
                row: "scenario".into(),
                lanes: r.lanes,
                vehicles: r.vehicles,
                seed: Some(r.seed),
                value: r.episode_return,
                std: None,
                lane_changes: r.lane_changes as f64,
                lane_change_requests: r.lane_change_requests as f64,
            })
            .map_err(csv_err)?;
        }
        w.serialize(CsvRow {
            row: "mean".into(),
            lanes: agg.lanes,
            vehicles: agg.vehicles,
            seed: None,
            value: agg.mean,
            std: Some(agg.std),
            lane_changes: agg.mean_lane_changes,
            lane_change_requests: agg.mean_lane_change_requests,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the scenario rows back. Aggregate lines are checked against the
/// recomputed values.
pub fn read_report(input: impl Read) -> Result<EvalReport> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != REPORT_HEADER {
        return Err(CoreError::Dataset(format!("unexpected report header {header:?}")));
    }
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for rec in r.deserialize() {
        let row: CsvRow = rec.map_err(csv_err)?;
        match row.row.as_str() {
            "scenario" => rows.push(EpisodeResult {
                vehicles: row.vehicles,
                lanes: row.lanes,
                seed: row
                    .seed
                    .ok_or_else(|| CoreError::Dataset("scenario row without seed".into()))?,
                episode_return: row.value,
                lane_changes: row.lane_changes as usize,
                lane_change_requests: row.lane_change_requests as usize,
            }),
            "mean" => means.push((row.lanes, row.vehicles, row.value)),
            other => return Err(CoreError::Dataset(format!("unknown row kind {other:?}"))),
        }
    }
    let report = EvalReport::new(rows);
    let aggs = report.aggregates();
    if aggs.len() != means.len()
        || aggs
            .iter()
            .zip(&means)
            .any(|(a, m)| (a.lanes, a.vehicles) != (m.0, m.1) || (a.mean - m.2).abs() > 1e-9 * a.mean.abs().max(1.0))
    {
        return Err(CoreError::Dataset("aggregate rows do not match scenario rows".into()));
    }
    Ok(report)
}

pub fn save_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_report(report, std::io::BufWriter::new(f))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    read_report(std::io::BufReader::new(std::fs::File::open(path)?))
}
