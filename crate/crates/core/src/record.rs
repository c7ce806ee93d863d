//! Run records and their CSV form.
//!
//! A record is an append-only, chronological list of rows: one per DWOA
//! iteration, one per simulation time step, and a flag row for every epoch
//! that found no available EV. Per-EV SOC snapshots are kept alongside and
//! exported to a separate file.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const RUN_HEADER_VERSION: &str = "# v2g run-record v1";
pub const SNAPSHOT_HEADER_VERSION: &str = "# v2g fleet-snapshot v1";
const COLUMNS: [&str; 11] = [
    "kind", "epoch", "index", "time_h", "rate_kw", "objective", "selected", "available", "grid_kw",
    "oracle_calls", "wall_ms",
];

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRow {
    pub epoch: usize,
    /// Number of DWOA updates applied before this evaluation (1..=k_max).
    pub k: usize,
    /// Simulation time at which the epoch started.
    pub time_h: f64,
    /// Best-so-far common rate.
    pub rate_kw: f64,
    /// Best-so-far aggregated total seen by the ECN.
    pub objective: f64,
    /// Candidate the ECN selected in this evaluation.
    pub selected: usize,
    pub available: usize,
    /// Cumulative cost-oracle calls in the epoch.
    pub oracle_calls: u64,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimestepRow {
    pub epoch: usize,
    pub step: usize,
    /// Start of the step.
    pub time_h: f64,
    pub rate_kw: f64,
    pub available: usize,
    pub grid_kw: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecordRow {
    Iteration(IterationRow),
    Timestep(TimestepRow),
    /// An epoch with no available EV; the applied rate is 0.
    Empty { epoch: usize, time_h: f64 },
}

/// SOC and availability of every EV at the end of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct FleetSnapshot {
    pub step: usize,
    pub time_h: f64,
    pub soc: Vec<f64>,
    pub available: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RecordRow>,
    pub snapshots: Vec<FleetSnapshot>,
}

impl RunRecord {
    pub fn push(&mut self, row: RecordRow) {
        self.rows.push(row);
    }

    pub fn iterations(&self) -> impl Iterator<Item = &IterationRow> {
        self.rows.iter().filter_map(|r| match r {
            RecordRow::Iteration(it) => Some(it),
            _ => None,
        })
    }

    pub fn timesteps(&self) -> impl Iterator<Item = &TimestepRow> {
        self.rows.iter().filter_map(|r| match r {
            RecordRow::Timestep(t) => Some(t),
            _ => None,
        })
    }

    pub fn is_empty_flagged(&self) -> bool {
        self.rows.iter().any(|r| matches!(r, RecordRow::Empty { .. }))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), RecordError> {
        writeln!(out, "{RUN_HEADER_VERSION}")?;
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(COLUMNS)?;
        for row in &self.rows {
            w.write_record(encode(row))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, RecordError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().ne(COLUMNS) {
            return Err(RecordError::Malformed { line: 2, reason: "unexpected header".into() });
        }
        let mut record = RunRecord::default();
        for result in rdr.records() {
            let rec = result?;
            let line = rec.position().map_or(0, |p| p.line());
            record.rows.push(decode(&rec).map_err(|reason| RecordError::Malformed { line, reason })?);
        }
        Ok(record)
    }

    pub fn write_snapshots_csv<W: Write>(&self, mut out: W) -> Result<(), RecordError> {
        writeln!(out, "{SNAPSHOT_HEADER_VERSION}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "time_h", "id", "soc", "available"])?;
        for snap in &self.snapshots {
            for (id, (soc, avail)) in snap.soc.iter().zip(&snap.available).enumerate() {
                w.write_record([
                    snap.step.to_string(),
                    snap.time_h.to_string(),
                    id.to_string(),
                    soc.to_string(),
                    (*avail as u8).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes the run CSV to `path`.
pub fn export_run(record: &RunRecord, path: &Path) -> Result<(), RecordError> {
    let mut out = BufWriter::new(File::create(path)?);
    record.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn import_run(path: &Path) -> Result<RunRecord, RecordError> {
    RunRecord::read_csv(File::open(path)?)
}

pub fn export_snapshots(record: &RunRecord, path: &Path) -> Result<(), RecordError> {
    let mut out = BufWriter::new(File::create(path)?);
    record.write_snapshots_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn encode(row: &RecordRow) -> [String; 11] {
    let s = |x: f64| x.to_string();
    let e = String::new;
    match row {
        RecordRow::Iteration(it) => [
            "iter".into(),
            it.epoch.to_string(),
            it.k.to_string(),
            s(it.time_h),
            s(it.rate_kw),
            s(it.objective),
            it.selected.to_string(),
            it.available.to_string(),
            e(),
            it.oracle_calls.to_string(),
            it.wall_ms.map(s).unwrap_or_default(),
        ],
        RecordRow::Timestep(t) => [
            "step".into(),
            t.epoch.to_string(),
            t.step.to_string(),
            s(t.time_h),
            s(t.rate_kw),
            e(),
            e(),
            t.available.to_string(),
            s(t.grid_kw),
            e(),
            e(),
        ],
        RecordRow::Empty { epoch, time_h } => [
            "empty".into(),
            epoch.to_string(),
            e(),
            s(*time_h),
            "0".into(),
            e(),
            e(),
            "0".into(),
            "0".into(),
            e(),
            e(),
        ],
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize) -> Result<T, String> {
    let raw = rec.get(idx).ok_or_else(|| format!("missing column {}", COLUMNS[idx]))?;
    raw.parse().map_err(|_| format!("bad value `{raw}` in column {}", COLUMNS[idx]))
}

fn decode(rec: &csv::StringRecord) -> Result<RecordRow, String> {
    match rec.get(0) {
        Some("iter") => Ok(RecordRow::Iteration(IterationRow {
            epoch: field(rec, 1)?,
            k: field(rec, 2)?,
            time_h: field(rec, 3)?,
            rate_kw: field(rec, 4)?,
            objective: field(rec, 5)?,
            selected: field(rec, 6)?,
            available: field(rec, 7)?,
            oracle_calls: field(rec, 9)?,
            wall_ms: match rec.get(10) {
                Some("") | None => None,
                Some(_) => Some(field(rec, 10)?),
            },
        })),
        Some("step") => Ok(RecordRow::Timestep(TimestepRow {
            epoch: field(rec, 1)?,
            step: field(rec, 2)?,
            time_h: field(rec, 3)?,
            rate_kw: field(rec, 4)?,
            available: field(rec, 7)?,
            grid_kw: field(rec, 8)?,
        })),
        Some("empty") => Ok(RecordRow::Empty { epoch: field(rec, 1)?, time_h: field(rec, 3)? }),
        other => Err(format!("unknown row kind {other:?}")),
    }
}
