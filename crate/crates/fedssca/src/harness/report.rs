//! Metric emission: trace CSVs and run summaries.
//!
//! The CSV layout is fixed so downstream plotting never guesses: header
//! `t,train_cost,test_acc,slack,uplink_scalars,downlink_scalars,wall_ms`.
//! `slack` is empty for unconstrained runs. `wall_ms` is always left empty in
//! files — wall time varies run to run and the files must be byte-identical
//! for a fixed seed; measured timings live in the JSON summary instead.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{ClientShard, RoundRecord, RoundTrace};

pub const TRACE_HEADER: &str = "t,train_cost,test_acc,slack,uplink_scalars,downlink_scalars,wall_ms";

fn record_fields(rec: &RoundRecord) -> String {
    let slack = rec.slack.map(|s| s.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},",
        rec.t, rec.train_cost, rec.test_acc, slack, rec.uplink_scalars, rec.downlink_scalars
    )
}

/// Writes one run's trace.
pub fn write_trace_csv(path: &Path, trace: &RoundTrace) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "{TRACE_HEADER}")?;
    for rec in &trace.records {
        writeln!(out, "{}", record_fields(rec))?;
    }
    Ok(())
}

/// Writes the joined trace of a side-by-side run, one row per
/// `(algorithm, t)` with the shared seed.
pub fn write_compare_csv(path: &Path, runs: &[(&str, u64, &RoundTrace)]) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "algorithm,seed,{TRACE_HEADER}")?;
    for (name, seed, trace) in runs {
        for rec in &trace.records {
            writeln!(out, "{name},{seed},{}", record_fields(rec))?;
        }
    }
    Ok(())
}

/// Parses a file written by [`write_trace_csv`]. Round-trips losslessly
/// because floats are printed with the shortest exact representation.
pub fn read_trace_csv(path: &Path) -> Result<RoundTrace> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "{}: unexpected header {other:?}",
                path.display()
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Config(format!(
                "{}: line {} has {} columns, expected 7",
                path.display(),
                i + 2,
                cols.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Config(format!("{}: line {}: {what}: {e}", path.display(), i + 2)))
        };
        records.push(RoundRecord {
            t: parse(cols[0], "t")? as u32,
            train_cost: parse(cols[1], "train_cost")?,
            test_acc: parse(cols[2], "test_acc")?,
            slack: if cols[3].is_empty() {
                None
            } else {
                Some(parse(cols[3], "slack")?)
            },
            uplink_scalars: parse(cols[4], "uplink")? as u64,
            downlink_scalars: parse(cols[5], "downlink")? as u64,
            wall_ms: 0.0,
        });
    }
    Ok(RoundTrace { records })
}

/// Final metrics of one run, written as JSON next to the trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub final_cost: f64,
    pub final_acc: f64,
    pub final_slack: Option<f64>,
    pub uplink_total: u64,
    pub downlink_total: u64,
    pub seed: u64,
    /// Total measured wall time, reported here rather than in the CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms_total: Option<f64>,
    /// Partition fingerprint; equal hashes mean identical shards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard_hash: Option<u64>,
}

impl Summary {
    pub fn from_trace(trace: &RoundTrace, seed: u64) -> Result<Self> {
        let last = trace.last().ok_or(Error::Empty("trace"))?;
        Ok(Self {
            final_cost: last.train_cost,
            final_acc: last.test_acc,
            final_slack: last.slack,
            uplink_total: last.uplink_scalars,
            downlink_total: last.downlink_scalars,
            seed,
            wall_ms_total: Some(trace.records.iter().map(|r| r.wall_ms).sum()),
            shard_hash: None,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Order-sensitive fingerprint of a partition: hashes every sample bit
/// pattern and label, shard by shard.
pub fn shard_hash(shards: &[ClientShard]) -> u64 {
    let mut h = DefaultHasher::new();
    for shard in shards {
        shard.client_id.hash(&mut h);
        shard.len().hash(&mut h);
        for s in shard.samples() {
            s.label.hash(&mut h);
            for v in s.x.iter() {
                v.to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}
