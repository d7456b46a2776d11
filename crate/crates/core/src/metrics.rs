//! Append-only JSON-lines metrics.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Each record is one line carrying `phase`, `iteration`, and `wall_clock`
/// (seconds since the Unix epoch) alongside its own fields.
pub struct MetricsLog {
    sink: Option<(PathBuf, BufWriter<File>)>,
    records: usize,
}

impl MetricsLog {
    /// Discards every record.
    pub fn disabled() -> Self {
        Self { sink: None, records: 0 }
    }

    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { sink: Some((path, BufWriter::new(file))), records: 0 })
    }

    pub fn records(&self) -> usize {
        self.records
    }

    pub fn record(&mut self, phase: &str, iteration: usize, fields: impl Serialize) -> Result<()> {
        self.records += 1;
        let Some((path, out)) = self.sink.as_mut() else { return Ok(()) };
        let wall_clock = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut obj = Map::new();
        obj.insert("phase".into(), phase.into());
        obj.insert("iteration".into(), iteration.into());
        obj.insert("wall_clock".into(), wall_clock.into());
        match serde_json::to_value(fields).map_err(|e| Error::invalid(e.to_string()))? {
            Value::Object(extra) => {
                for (k, v) in extra {
                    obj.entry(k).or_insert(v);
                }
            }
            Value::Null => {}
            other => {
                obj.insert("value".into(), other);
            }
        }
        let line = serde_json::to_string(&Value::Object(obj)).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(out, "{}", line).and_then(|_| out.flush()).map_err(|e| Error::io(path.as_path(), e))
    }
}

/// Every record of a metrics file, in order.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<Value>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let len = line.len() as u64 + 1;
        if !line.trim().is_empty() {
            let v: Value = serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset,
                reason: format!("invalid JSON record: {}", e),
            })?;
            out.push(v);
        }
        offset += len;
    }
    Ok(out)
}

/// Groups records that carry a numeric `accuracy` by phase and renders each
/// group as `iteration accuracy loss` columns under a `#` header. Missing
/// losses are written as `NaN`.
pub fn plot_columns(records: &[Value]) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    for r in records {
        let (Some(phase), Some(it), Some(acc)) =
            (r["phase"].as_str(), r["iteration"].as_u64(), r.get("accuracy").and_then(Value::as_f64))
        else {
            continue;
        };
        let loss = r.get("loss").and_then(Value::as_f64).unwrap_or(f64::NAN);
        let text = out.entry(phase.to_string()).or_insert_with(|| "# iteration accuracy loss\n".to_string());
        text.push_str(&format!("{} {} {}\n", it, acc, loss));
    }
    out
}
