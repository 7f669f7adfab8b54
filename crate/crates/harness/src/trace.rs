//! Trace files: one event per line, `timestamp_us,tenant,op,key,value_size`,
//! with an optional header line. `value_size` is empty (or 0) for gets and
//! deletes.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{HarnessError, Result};

pub const HEADER: [&str; 5] = ["timestamp_us", "tenant", "op", "key", "value_size"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Get,
    Set,
    Delete,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Get => "get",
            Op::Set => "set",
            Op::Delete => "delete",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Op {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "get" => Ok(Op::Get),
            "set" => Ok(Op::Set),
            "delete" => Ok(Op::Delete),
            other => Err(format!("unknown op {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub timestamp_us: u64,
    pub tenant: String,
    pub op: Op,
    pub key: String,
    /// Value bytes; meaningful for sets only.
    pub value_size: u32,
}

impl TraceEvent {
    pub fn get(timestamp_us: u64, tenant: &str, key: &str) -> Self {
        TraceEvent {
            timestamp_us,
            tenant: tenant.to_string(),
            op: Op::Get,
            key: key.to_string(),
            value_size: 0,
        }
    }

    pub fn set(timestamp_us: u64, tenant: &str, key: &str, value_size: u32) -> Self {
        TraceEvent {
            timestamp_us,
            tenant: tenant.to_string(),
            op: Op::Set,
            key: key.to_string(),
            value_size,
        }
    }

    pub fn delete(timestamp_us: u64, tenant: &str, key: &str) -> Self {
        TraceEvent {
            timestamp_us,
            tenant: tenant.to_string(),
            op: Op::Delete,
            key: key.to_string(),
            value_size: 0,
        }
    }
}

fn parse_record(rec: &csv::StringRecord, line: u64) -> Result<TraceEvent> {
    let bad = |msg: String| HarnessError::Trace { line, msg };
    if rec.len() != 5 {
        return Err(bad(format!("expected 5 fields, got {}", rec.len())));
    }
    let timestamp_us = rec[0]
        .parse::<u64>()
        .map_err(|e| bad(format!("timestamp {:?}: {e}", &rec[0])))?;
    let op: Op = rec[2].parse().map_err(bad)?;
    if rec[3].is_empty() {
        return Err(bad("empty key".into()));
    }
    let value_size = match (op, &rec[4]) {
        (Op::Set, s) => {
            let v = s.parse::<u32>().map_err(|e| bad(format!("value_size {s:?}: {e}")))?;
            if v == 0 {
                return Err(bad("set with value_size 0".into()));
            }
            v
        }
        (_, "") => 0,
        (_, s) => s.parse::<u32>().map_err(|e| bad(format!("value_size {s:?}: {e}")))?,
    };
    Ok(TraceEvent {
        timestamp_us,
        tenant: rec[1].to_string(),
        op,
        key: rec[3].to_string(),
        value_size,
    })
}

/// Streaming trace reader. Checks time order as it goes.
pub struct TraceReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    line: u64,
    last_ts: u64,
}

impl<R: Read> TraceReader<R> {
    pub fn new(input: R) -> Self {
        let rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        TraceReader {
            records: rdr.into_records(),
            line: 0,
            last_ts: 0,
        }
    }
}

impl TraceReader<std::fs::File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(TraceReader::new(std::fs::File::open(path)?))
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let rec = match self.records.next()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if self.line == 1 && rec.iter().eq(HEADER.iter().copied()) {
                continue;
            }
            let ev = match parse_record(&rec, self.line) {
                Ok(ev) => ev,
                Err(e) => return Some(Err(e)),
            };
            if ev.timestamp_us < self.last_ts {
                return Some(Err(HarnessError::Unordered { line: self.line }));
            }
            self.last_ts = ev.timestamp_us;
            return Some(Ok(ev));
        }
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>> {
    TraceReader::open(path)?.collect()
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, header: bool) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            inner.write_record(HEADER)?;
        }
        Ok(TraceWriter { inner })
    }

    pub fn write(&mut self, ev: &TraceEvent) -> Result<()> {
        let size = if ev.op == Op::Set {
            ev.value_size.to_string()
        } else {
            String::new()
        };
        let ts = ev.timestamp_us.to_string();
        self.inner
            .write_record([ts.as_str(), &ev.tenant, ev.op.as_str(), &ev.key, &size])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| HarnessError::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn write_trace<'a>(
    path: impl AsRef<Path>,
    events: impl IntoIterator<Item = &'a TraceEvent>,
) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut w = TraceWriter::new(file, true)?;
    for ev in events {
        w.write(ev)?;
    }
    w.finish()?;
    Ok(())
}
