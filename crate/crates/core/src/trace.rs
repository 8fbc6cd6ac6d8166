//! Per-step trace rows and their CSV form
//! (`step,kl,tc,beta,recon,elbo,set_point`).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "step,kl,tc,beta,recon,elbo,set_point";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub kl: f64,
    pub tc: Option<f64>,
    pub beta: f64,
    pub recon: Option<f64>,
    pub elbo: Option<f64>,
    /// Absent for runs without a target (plain and fixed-β VAE).
    pub set_point: Option<f64>,
}

impl TraceRecord {
    /// Row for a run without a reconstruction term (surrogate plant).
    pub fn control(step: u64, kl: f64, beta: f64, set_point: f64) -> Self {
        Self {
            step,
            kl,
            tc: None,
            beta,
            recon: None,
            elbo: None,
            set_point: Some(set_point),
        }
    }

    /// The quantity under control: TC when present, else KL.
    pub fn controlled_value(&self) -> f64 {
        self.tc.unwrap_or(self.kl)
    }
}

/// Streams records to CSV, flushing every row so a crash leaves a readable
/// prefix.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    last_step: Option<u64>,
}

impl TraceWriter<File> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(File::create(path)?))
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(w: W) -> Self {
        Self {
            inner: csv::WriterBuilder::new().has_headers(true).from_writer(w),
            last_step: None,
        }
    }

    pub fn write(&mut self, rec: &TraceRecord) -> Result<()> {
        if self.last_step.is_some_and(|s| rec.step <= s) {
            return Err(Error::InvalidData(format!(
                "trace steps must increase: {} after {:?}",
                rec.step, self.last_step
            )));
        }
        self.last_step = Some(rec.step);
        self.inner.serialize(rec)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn write_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    let mut w = TraceWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(Error::Format(format!(
            "unexpected trace header `{}`",
            header.join(",")
        )));
    }
    rdr.deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_empty_fields() {
        let mut w = TraceWriter::new(Vec::new());
        w.write(&TraceRecord::control(0, 1.5, 0.25, 16.0)).unwrap();
        w.write(&TraceRecord {
            step: 1,
            kl: 2.0,
            tc: Some(0.3),
            beta: 1.0,
            recon: Some(-50.0),
            elbo: Some(-52.0),
            set_point: None,
        })
        .unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "0,1.5,,0.25,,,16.0");
        assert_eq!(lines[2], "1,2.0,0.3,1.0,-50.0,-52.0,");
    }

    #[test]
    fn rejects_non_increasing_steps() {
        let mut w = TraceWriter::new(Vec::new());
        w.write(&TraceRecord::control(3, 0.0, 0.0, 0.0)).unwrap();
        assert!(w.write(&TraceRecord::control(3, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let recs: Vec<_> = (0..5)
            .map(|i| TraceRecord::control(i, 0.1 * i as f64, 1.0 / 3.0, 2.0))
            .collect();
        write_trace(&path, &recs).unwrap();
        assert_eq!(read_trace(&path).unwrap(), recs);
    }
}
