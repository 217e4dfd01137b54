//! Per-step JSONL training logs.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One logged optimisation step. `extra` holds named loss components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: String,
    pub step: u64,
    pub loss: f64,
    #[serde(flatten)]
    pub extra: BTreeMap<String, f64>,
    pub timestamp: f64,
}

impl StepRecord {
    pub fn new(stage: &str, step: u64, loss: f64, extra: &[(&str, f64)]) -> Self {
        let extra = extra.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        Self { stage: stage.to_string(), step, loss, extra, timestamp }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.extra.get(name).copied()
    }
}

/// Where step records go.
pub trait ReportSink {
    fn record(&mut self, rec: &StepRecord) -> Result<()>;
}

/// Keeps records in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<StepRecord>,
}

impl ReportSink for MemorySink {
    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl ReportSink for NullSink {
    fn record(&mut self, _: &StepRecord) -> Result<()> {
        Ok(())
    }
}

/// Appends one JSON object per line.
pub struct JsonlSink {
    out: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    pub fn append(path: &Path) -> Result<Self> {
        Ok(Self { out: BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?) })
    }
}

impl ReportSink for JsonlSink {
    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
