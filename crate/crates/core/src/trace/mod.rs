//! Time-synchronous recording of bus traffic with protocol decode,
//! channels derived from polled samples, triggered capture and export.

mod annotate;
mod channel;
mod export;
mod trigger;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canbus::CanFrame;
use crate::codec::{sid, Nrc};
use crate::time::SimTime;

pub use annotate::Annotator;
pub use channel::{Channel, ChannelError, ChannelSet, ChannelSource, Expr};
pub use export::{export, record_json, write_csv, write_jsonl, ExportFormat, CSV_HEADER};
pub use trigger::{capture, fire_time, window, TriggerPredicate, TriggerSpec};

pub const DEFAULT_CAPACITY: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("record at {got} precedes last record at {last}")]
    NonMonotonicTimestamp { last: SimTime, got: SimTime },
    #[error("trigger never fired")]
    NeverFired,
    #[error("recording is empty")]
    EmptyRecording,
    #[error("invalid trigger spec {0:?}")]
    BadTrigger(String),
    #[error("export: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TesterToEcu,
    EcuToTester,
    Other,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::TesterToEcu => "tester_to_ecu",
            Direction::EcuToTester => "ecu_to_tester",
            Direction::Other => "other",
        }
    }
}

/// Protocol interpretation attached to a frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decode {
    /// Transport-level event (FF, CF, FC, or an undecodable frame).
    Isotp { text: String },
    /// This frame completed a request PDU.
    UdsRequest {
        #[serde(with = "crate::hexnum::bytes")]
        pdu: Vec<u8>,
        text: String,
    },
    /// This frame completed a response PDU.
    UdsResponse {
        #[serde(with = "crate::hexnum::bytes")]
        pdu: Vec<u8>,
        text: String,
    },
}

impl Decode {
    pub fn kind(&self) -> &'static str {
        match self {
            Decode::Isotp { .. } => "isotp",
            Decode::UdsRequest { .. } => "uds_request",
            Decode::UdsResponse { .. } => "uds_response",
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Decode::Isotp { text } | Decode::UdsRequest { text, .. } | Decode::UdsResponse { text, .. } => text,
        }
    }

    /// The NRC if this is a negative response.
    pub fn nrc(&self) -> Option<Nrc> {
        match self {
            Decode::UdsResponse { pdu, .. } if pdu.len() == 3 && pdu[0] == sid::NEGATIVE_RESPONSE => {
                Nrc::try_from(pdu[2]).ok()
            }
            _ => None,
        }
    }

    /// The request SID this PDU belongs to.
    pub fn service(&self) -> Option<u8> {
        match self {
            Decode::UdsRequest { pdu, .. } => pdu.first().copied(),
            Decode::UdsResponse { pdu, .. } => match pdu.as_slice() {
                [0x7F, req, ..] => Some(*req),
                [first, ..] => Some(first.wrapping_sub(0x40)),
                [] => None,
            },
            Decode::Isotp { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub t: SimTime,
    /// Assigned by [`Recording::append`].
    pub seq: u64,
    pub direction: Direction,
    pub frame: CanFrame,
    pub decode: Option<Decode>,
}

impl TraceRecord {
    pub fn new(t: SimTime, direction: Direction, frame: CanFrame, decode: Option<Decode>) -> Self {
        TraceRecord {
            t,
            seq: 0,
            direction,
            frame,
            decode,
        }
    }
}

/// Append-only ring of trace records ordered by `(t, seq)`.
#[derive(Debug, Clone)]
pub struct Recording {
    records: VecDeque<TraceRecord>,
    capacity: usize,
    next_seq: u64,
    last_t: Option<SimTime>,
    evicted: u64,
}

impl Default for Recording {
    fn default() -> Self {
        Recording::with_capacity(DEFAULT_CAPACITY)
    }
}

impl Recording {
    pub fn with_capacity(capacity: usize) -> Self {
        Recording {
            records: VecDeque::new(),
            capacity: capacity.max(1),
            next_seq: 0,
            last_t: None,
            evicted: 0,
        }
    }

    /// Appends and returns the assigned sequence number; evicts the oldest
    /// record when full.
    pub fn append(&mut self, mut record: TraceRecord) -> Result<u64, TraceError> {
        if let Some(last) = self.last_t {
            if record.t < last {
                return Err(TraceError::NonMonotonicTimestamp { last, got: record.t });
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.last_t = Some(record.t);
        record.seq = seq;
        if self.records.len() == self.capacity {
            self.records.pop_front();
            self.evicted += 1;
        }
        self.records.push_back(record);
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Records dropped by ring eviction so far.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter()
    }

    /// Records with `seq >= from`, for incremental readers.
    pub fn since(&self, from: u64) -> impl Iterator<Item = &TraceRecord> {
        let start = self.records.partition_point(|r| r.seq < from);
        self.records.range(start..)
    }

    pub fn snapshot(&self) -> Vec<TraceRecord> {
        self.records.iter().cloned().collect()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canbus::CanId;

    fn rec(t_ms: u64) -> TraceRecord {
        TraceRecord::new(
            SimTime::from_millis(t_ms),
            Direction::Other,
            CanFrame::new(CanId::standard(0x100), &[t_ms as u8]).unwrap(),
            None,
        )
    }

    #[test]
    fn equal_timestamps_keep_both() {
        let mut r = Recording::default();
        assert_eq!(r.append(rec(5)).unwrap(), 0);
        assert_eq!(r.append(rec(5)).unwrap(), 1);
        let seqs: Vec<u64> = r.iter().map(|x| x.seq).collect();
        assert_eq!(seqs, vec![0, 1]);
    }

    #[test]
    fn backwards_time_rejected() {
        let mut r = Recording::default();
        r.append(rec(5)).unwrap();
        assert!(matches!(
            r.append(rec(4)),
            Err(TraceError::NonMonotonicTimestamp { .. })
        ));
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut r = Recording::with_capacity(1000);
        for i in 0..1001 {
            r.append(rec(i)).unwrap();
        }
        assert_eq!(r.len(), 1000);
        assert_eq!(r.iter().next().unwrap().seq, 1);
        assert_eq!(r.evicted(), 1);
        assert_eq!(r.since(995).count(), 6);
    }

    #[test]
    fn decode_helpers() {
        let neg = Decode::UdsResponse {
            pdu: vec![0x7F, 0x27, 0x35],
            text: String::new(),
        };
        assert_eq!(neg.nrc(), Some(Nrc::InvalidKey));
        assert_eq!(neg.service(), Some(0x27));
        let pos = Decode::UdsResponse {
            pdu: vec![0x62, 0xF1, 0x90],
            text: String::new(),
        };
        assert_eq!(pos.nrc(), None);
        assert_eq!(pos.service(), Some(0x22));
    }
}
