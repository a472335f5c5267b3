//! Per-example metric records, aggregates and their JSON-lines form.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub example_id: usize,
    pub ter: f64,
    pub requested_frames: usize,
    pub generated_frames: usize,
    pub dur_diff_frames: usize,
    pub style_match: f64,
    pub length_bucket: String,
    pub stopped_by_eos: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean_ter: f64,
    pub mean_dur_diff_frames: f64,
    pub mean_dur_diff_seconds: f64,
    pub style_accuracy: f64,
    /// Fraction of generations within two frames of the request.
    pub within_two_frames: f64,
}

impl Aggregate {
    pub fn from_records(records: &[ExampleRecord], frame_seconds: f64) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&ExampleRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let dur = mean(&|r| r.dur_diff_frames as f64);
        Self {
            count: records.len(),
            mean_ter: mean(&|r| r.ter),
            mean_dur_diff_frames: dur,
            mean_dur_diff_seconds: dur * frame_seconds,
            style_accuracy: mean(&|r| r.style_match),
            within_two_frames: mean(&|r| f64::from(u8::from(r.dur_diff_frames <= 2))),
        }
    }
}

/// Trailing line of a report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFooter {
    pub aggregate: Aggregate,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<ExampleRecord>,
    pub aggregate: Aggregate,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
}

/// `"lo-hi"` bucket of eight frames.
pub fn length_bucket(frames: usize) -> String {
    let lo = frames / 8 * 8;
    format!("{lo}-{}", lo + 7)
}

impl MetricsReport {
    pub fn new(records: Vec<ExampleRecord>, config: BTreeMap<String, String>, seed: u64, frame_seconds: f64) -> Self {
        let aggregate = Aggregate::from_records(&records, frame_seconds);
        Self {
            records,
            aggregate,
            config,
            seed,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        let footer = ReportFooter {
            aggregate: self.aggregate.clone(),
            config: self.config.clone(),
            seed: self.seed,
        };
        serde_json::to_writer(&mut w, &footer)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let (last, body) = lines
            .split_last()
            .ok_or_else(|| Error::format("empty report"))?;
        let records = body
            .iter()
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<Vec<ExampleRecord>>>()?;
        let footer: ReportFooter = serde_json::from_str(last)?;
        Ok(Self {
            records,
            aggregate: footer.aggregate,
            config: footer.config,
            seed: footer.seed,
        })
    }
}
