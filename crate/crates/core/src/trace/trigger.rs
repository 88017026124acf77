use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::canbus::CanId;
use crate::codec::{from_hex, Nrc};
use crate::scalar::Scalar;
use crate::time::SimTime;

use super::{ChannelSet, Recording, TraceError, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TriggerPredicate {
    /// A negative response; `None` matches any NRC except responsePending,
    /// which is an interim answer rather than a failure.
    NrcObserved { nrc: Option<u8> },
    CanId { id: CanId },
    /// A completed request for this service.
    Sid { sid: u8 },
    /// A channel sample crossing `threshold`, upward if `rising`.
    ChannelCrosses { channel: String, threshold: f64, rising: bool },
}

impl TriggerPredicate {
    /// Whether a single record satisfies a record predicate. Channel
    /// predicates never match records.
    pub fn matches(&self, r: &TraceRecord) -> bool {
        match self {
            TriggerPredicate::NrcObserved { nrc } => {
                let Some(seen) = r.decode.as_ref().and_then(|d| d.nrc()) else {
                    return false;
                };
                match nrc {
                    Some(code) => seen.code() == *code,
                    None => seen != Nrc::ResponsePending,
                }
            }
            TriggerPredicate::CanId { id } => r.frame.id() == *id,
            TriggerPredicate::Sid { sid } => matches!(
                &r.decode,
                Some(d @ super::Decode::UdsRequest { .. }) if d.service() == Some(*sid)
            ),
            TriggerPredicate::ChannelCrosses { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub predicate: TriggerPredicate,
    pub pre_ms: u64,
    pub post_ms: u64,
}

impl TriggerSpec {
    pub fn new(predicate: TriggerPredicate, pre_ms: u64, post_ms: u64) -> Self {
        TriggerSpec { predicate, pre_ms, post_ms }
    }
}

fn parse_num(s: &str) -> Option<u32> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u32::from_str_radix(h, 16).ok(),
        None => s.parse().ok(),
    }
}

/// Parses the command-line predicate syntax: `nrc`, `nrc=0x33`, `id=0x7e8`,
/// `sid=0x19`, `rise=<channel>:<threshold>` and `fall=<channel>:<threshold>`.
impl FromStr for TriggerPredicate {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TraceError::BadTrigger(s.to_string());
        let (key, val) = match s.split_once('=') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (s.trim(), None),
        };
        match (key, val) {
            ("nrc", None) => Ok(TriggerPredicate::NrcObserved { nrc: None }),
            ("nrc", Some(v)) => {
                let code = parse_num(v).filter(|c| *c <= 0xFF).ok_or_else(bad)?;
                Ok(TriggerPredicate::NrcObserved { nrc: Some(code as u8) })
            }
            ("id", Some(v)) => {
                let value = parse_num(v).ok_or_else(bad)?;
                let id = CanId::new(value, value > 0x7FF).map_err(|_| bad())?;
                Ok(TriggerPredicate::CanId { id })
            }
            ("sid", Some(v)) => {
                let b = from_hex(v.trim_start_matches("0x")).map_err(|_| bad())?;
                match b.as_slice() {
                    [sid] => Ok(TriggerPredicate::Sid { sid: *sid }),
                    _ => Err(bad()),
                }
            }
            (dir @ ("rise" | "fall"), Some(v)) => {
                let (channel, thr) = v.split_once(':').ok_or_else(bad)?;
                let threshold: f64 = thr.trim().parse().map_err(|_| bad())?;
                if channel.is_empty() {
                    return Err(bad());
                }
                Ok(TriggerPredicate::ChannelCrosses {
                    channel: channel.to_string(),
                    threshold,
                    rising: dir == "rise",
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Time of the first record, or channel crossing, satisfying the predicate.
pub fn fire_time<T: Scalar>(
    rec: &Recording,
    predicate: &TriggerPredicate,
    channels: Option<&ChannelSet<T>>,
) -> Result<SimTime, TraceError> {
    if let TriggerPredicate::ChannelCrosses { channel, threshold, rising } = predicate {
        let set = channels.ok_or(TraceError::NeverFired)?;
        let mut prev: Option<f64> = None;
        for t in set.sample_times(channel) {
            let Ok(v) = set.value_at(channel, t) else { continue };
            let v = v.to_f64_lossy();
            if let Some(p) = prev {
                let crossed = if *rising {
                    p < *threshold && v >= *threshold
                } else {
                    p > *threshold && v <= *threshold
                };
                if crossed {
                    return Ok(t);
                }
            }
            prev = Some(v);
        }
        return Err(TraceError::NeverFired);
    }
    rec.iter()
        .find(|r| predicate.matches(r))
        .map(|r| r.t)
        .ok_or(TraceError::NeverFired)
}

/// Records with `t` in the closed interval `[from, to]`.
pub fn window(rec: &Recording, from: SimTime, to: SimTime) -> Vec<TraceRecord> {
    rec.iter().filter(|r| r.t >= from && r.t <= to).cloned().collect()
}

/// The records within `[t_fire - pre, t_fire + post]`, both ends included.
/// The lower bound saturates at time zero.
pub fn capture<T: Scalar>(
    rec: &Recording,
    spec: &TriggerSpec,
    channels: Option<&ChannelSet<T>>,
) -> Result<(SimTime, Vec<TraceRecord>), TraceError> {
    let t_fire = fire_time(rec, &spec.predicate, channels)?;
    let from = SimTime::from_nanos(
        t_fire
            .as_nanos()
            .saturating_sub(Duration::from_millis(spec.pre_ms).as_nanos() as u64),
    );
    let to = t_fire + Duration::from_millis(spec.post_ms);
    Ok((t_fire, window(rec, from, to)))
}
