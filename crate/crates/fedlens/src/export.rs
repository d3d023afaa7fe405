//! Long-format summary for plotting: one row per
//! `(metric, phase, round, layer)` with the mean over clients.

use std::collections::BTreeMap;
use std::path::Path;

use fedlens_core::metrics::MetricRecord;

use crate::error::{CliError, Result};

pub const LONG_HEADER: [&str; 7] = ["metric", "phase", "round", "layer", "mean", "std", "clients"];

#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub metric: &'static str,
    pub phase: &'static str,
    pub round: usize,
    pub layer: usize,
    pub mean: f64,
    /// Population standard deviation across clients.
    pub std: f64,
    pub clients: usize,
}

pub fn summarize(records: &[MetricRecord]) -> Vec<LongRow> {
    let mut groups: BTreeMap<(&'static str, &'static str, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry((r.metric.name(), r.phase.name(), r.round, r.layer)).or_default().push(r.value);
    }
    groups
        .into_iter()
        .map(|((metric, phase, round, layer), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            LongRow { metric, phase, round, layer, mean, std, clients: v.len() }
        })
        .collect()
}

pub fn write_long_csv(path: &Path, rows: &[LongRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LONG_HEADER)?;
    for r in rows {
        w.write_record([
            r.metric.to_string(),
            r.phase.to_string(),
            r.round.to_string(),
            r.layer.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.clients.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
