//! CSV readers and writers for plant records and segment manifests.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::{PlantRecord, RecordFlags, SampledSeries};

pub const RECORD_HEADER: [&str; 11] = [
    "timestamp", "u1", "u2", "u3", "u1_sp", "u2_sp", "u3_sp", "y1", "y2", "sag_running", "expert_online",
];

fn malformed(line: u64, message: impl Into<String>) -> Error {
    Error::MalformedRow { line, message: message.into() }
}

fn parse_bool(field: &str, line: u64, name: &str) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(malformed(line, format!("{name}: expected 0 or 1, got {other:?}"))),
    }
}

fn parse_f64(field: &str, line: u64, name: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| malformed(line, format!("{name}: not a number: {field:?}")))
}

/// Incremental record reader; rows are parsed as they are pulled, so it
/// works on a stream that is still being written.
pub struct RecordStream<R: Read> {
    rdr: csv::Reader<R>,
    row: csv::StringRecord,
    empty: bool,
}

impl<R: Read> RecordStream<R> {
    /// Reads and checks the header line. An empty input yields no records.
    pub fn new(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
        let empty = headers.is_empty() || (headers.len() == 1 && headers[0].is_empty());
        if !empty {
            let names: Vec<&str> = headers.iter().map(str::trim).collect();
            if names != RECORD_HEADER {
                return Err(malformed(1, format!("unexpected header {names:?}")));
            }
        }
        Ok(Self { rdr, row: csv::StringRecord::new(), empty })
    }

    fn parse(&self) -> Result<PlantRecord> {
        let row = &self.row;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != RECORD_HEADER.len() {
            return Err(malformed(line, format!("expected {} fields, found {}", RECORD_HEADER.len(), row.len())));
        }
        let timestamp = row[0]
            .trim()
            .parse::<i64>()
            .map_err(|_| malformed(line, format!("timestamp: not an integer: {:?}", &row[0])))?;
        let f = |i: usize| parse_f64(&row[i], line, RECORD_HEADER[i]);
        Ok(PlantRecord {
            timestamp,
            u: [f(1)?, f(2)?, f(3)?],
            u_sp: [f(4)?, f(5)?, f(6)?],
            y: [f(7)?, f(8)?],
            flags: RecordFlags {
                sag_running: parse_bool(&row[9], line, "sag_running")?,
                expert_online: parse_bool(&row[10], line, "expert_online")?,
            },
        })
    }
}

impl<R: Read> Iterator for RecordStream<R> {
    type Item = Result<PlantRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.empty {
            return None;
        }
        match self.rdr.read_record(&mut self.row) {
            Ok(true) => Some(self.parse()),
            Ok(false) => None,
            Err(e) => {
                self.empty = true;
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Some(Err(malformed(line, e.to_string())))
            }
        }
    }
}

/// Reads plant records. Line numbers in errors are 1-based and count the
/// header line.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<PlantRecord>> {
    RecordStream::new(reader)?.collect()
}

pub fn read_records_file(path: &Path) -> Result<Vec<PlantRecord>> {
    read_records(std::fs::File::open(path)?)
}

pub fn write_records<W: Write>(mut w: W, records: &[PlantRecord]) -> Result<()> {
    writeln!(w, "{}", RECORD_HEADER.join(","))?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.timestamp,
            r.u[0],
            r.u[1],
            r.u[2],
            r.u_sp[0],
            r.u_sp[1],
            r.u_sp[2],
            r.y[0],
            r.y[1],
            r.flags.sag_running as u8,
            r.flags.expert_online as u8
        )?;
    }
    Ok(())
}

pub fn write_records_file(path: &Path, records: &[PlantRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

/// One row of a segment manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub segment_id: usize,
    pub start_row: usize,
    pub length: usize,
}

/// Manifest entries for segments written back to back into one file.
pub fn manifest_for(segments: &[SampledSeries]) -> Vec<ManifestEntry> {
    let mut start_row = 0;
    segments
        .iter()
        .enumerate()
        .map(|(segment_id, s)| {
            let e = ManifestEntry { segment_id, start_row, length: s.len() };
            start_row += s.len();
            e
        })
        .collect()
}

pub fn write_manifest<W: Write>(mut w: W, entries: &[ManifestEntry]) -> Result<()> {
    writeln!(w, "segment_id,start_row,length")?;
    for e in entries {
        writeln!(w, "{},{},{}", e.segment_id, e.start_row, e.length)?;
    }
    Ok(())
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| malformed(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let n = |i: usize| -> Result<usize> {
            row.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| malformed(line, "manifest fields must be non-negative integers"))
        };
        out.push(ManifestEntry { segment_id: n(0)?, start_row: n(1)?, length: n(2)? });
    }
    Ok(out)
}

/// Rebuilds segments from a conditioned record file and its manifest.
pub fn split_by_manifest(
    records: &[PlantRecord],
    manifest: &[ManifestEntry],
    sample_period: i64,
) -> Result<Vec<SampledSeries>> {
    manifest
        .iter()
        .map(|e| {
            let end = e.start_row + e.length;
            if end > records.len() {
                return Err(Error::ShapeMismatch(format!(
                    "manifest segment {} ends at row {end}, dataset has {} rows",
                    e.segment_id,
                    records.len()
                )));
            }
            Ok(SampledSeries::new(records[e.start_row..end].to_vec(), sample_period))
        })
        .collect()
}
