use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::codec::to_hex;

use super::{Recording, TraceError, TraceRecord};

pub const CSV_HEADER: [&str; 9] = [
    "t_ns",
    "seq",
    "dir",
    "id_hex",
    "extended",
    "dlc",
    "data_hex",
    "decode_kind",
    "decode_text",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(format!("unknown export format {other:?}")),
        }
    }
}

impl ExportFormat {
    /// Guess from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => ExportFormat::Jsonl,
            _ => ExportFormat::Csv,
        }
    }
}

/// Flat row shared by both formats.
#[derive(Debug, Serialize)]
struct Row<'a> {
    t_ns: u64,
    seq: u64,
    dir: &'static str,
    id_hex: String,
    extended: bool,
    dlc: u8,
    data_hex: String,
    decode_kind: &'a str,
    decode_text: &'a str,
}

impl<'a> From<&'a TraceRecord> for Row<'a> {
    fn from(r: &'a TraceRecord) -> Self {
        Row {
            t_ns: r.t.as_nanos(),
            seq: r.seq,
            dir: r.direction.as_str(),
            id_hex: r.frame.id().to_string(),
            extended: r.frame.id().is_extended(),
            dlc: r.frame.dlc(),
            data_hex: to_hex(r.frame.data()),
            decode_kind: r.decode.as_ref().map_or("", |d| d.kind()),
            decode_text: r.decode.as_ref().map_or("", |d| d.text()),
        }
    }
}

/// A record in the export schema, as a JSON object.
pub fn record_json(r: &TraceRecord) -> serde_json::Value {
    serde_json::to_value(Row::from(r)).expect("rows serialize")
}

pub fn write_csv<'a, W: Write>(
    out: W,
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for r in records {
        w.serialize(Row::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> Result<(), TraceError> {
    for r in records {
        serde_json::to_writer(&mut out, &Row::from(r)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the recording to `path`. An empty recording is an error and
/// leaves no file behind.
pub fn export(rec: &Recording, format: ExportFormat, path: &Path) -> Result<(), TraceError> {
    if rec.is_empty() {
        return Err(TraceError::EmptyRecording);
    }
    let file = BufWriter::new(File::create(path)?);
    match format {
        ExportFormat::Csv => write_csv(file, rec.iter()),
        ExportFormat::Jsonl => write_jsonl(file, rec.iter()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canbus::{CanFrame, CanId};
    use crate::time::SimTime;
    use crate::trace::{Decode, Direction};

    fn three() -> Recording {
        let mut r = Recording::default();
        for i in 0..3u64 {
            r.append(TraceRecord::new(
                SimTime::from_millis(i),
                Direction::TesterToEcu,
                CanFrame::new(CanId::standard(0x7E0), &[0x02, 0x3E, 0x00]).unwrap(),
                Some(Decode::UdsRequest {
                    pdu: vec![0x3E, 0x00],
                    text: "TesterPresent, zeroSubFunction".into(),
                }),
            ))
            .unwrap();
        }
        r
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_csv(&mut buf, three().iter()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(
            lines[2],
            "1000000,1,tester_to_ecu,7e0,false,3,023e00,uds_request,\"TesterPresent, zeroSubFunction\""
        );
    }

    #[test]
    fn jsonl_mirrors_csv_fields() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, three().iter()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut expected = CSV_HEADER.to_vec();
        expected.sort();
        let mut keys_sorted = keys.clone();
        keys_sorted.sort();
        assert_eq!(keys_sorted, expected);
    }

    #[test]
    fn empty_recording_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let err = export(&Recording::default(), ExportFormat::Csv, &path).unwrap_err();
        assert!(matches!(err, TraceError::EmptyRecording));
        assert!(!path.exists());
    }
}
