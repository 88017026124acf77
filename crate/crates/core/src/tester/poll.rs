use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecu::EcuConfig;
use crate::sample::{Sample, SampleError};
use crate::scalar::Scalar;
use crate::signal::Scaling;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PollListError {
    #[error("DID {0:#06x} listed twice")]
    DuplicateDid(u16),
    #[error("DID {0:#06x} has a zero period")]
    ZeroPeriod(u16),
}

/// One line of a poll list file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollSpec {
    #[serde(with = "crate::hexnum::u16")]
    pub did: u16,
    pub period_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    period: Duration,
    next_due: SimTime,
}

/// DIDs to read periodically, each with its own period and next-due time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PollList {
    entries: BTreeMap<u16, Entry>,
}

impl PollList {
    /// All entries become due at `start`.
    pub fn new(specs: &[PollSpec], start: SimTime) -> Result<Self, PollListError> {
        let mut entries = BTreeMap::new();
        for s in specs {
            if s.period_ms == 0 {
                return Err(PollListError::ZeroPeriod(s.did));
            }
            let e = Entry {
                period: Duration::from_millis(s.period_ms),
                next_due: start,
            };
            if entries.insert(s.did, e).is_some() {
                return Err(PollListError::DuplicateDid(s.did));
            }
        }
        Ok(PollList { entries })
    }

    pub fn specs(&self) -> Vec<PollSpec> {
        self.entries
            .iter()
            .map(|(did, e)| PollSpec {
                did: *did,
                period_ms: e.period.as_millis() as u64,
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// DIDs due at `now`, ascending.
    pub fn due(&self, now: SimTime) -> Vec<u16> {
        self.entries
            .iter()
            .filter(|(_, e)| e.next_due <= now)
            .map(|(d, _)| *d)
            .collect()
    }

    /// Earliest next-due time over all entries.
    pub fn next_due(&self) -> Option<SimTime> {
        self.entries.values().map(|e| e.next_due).min()
    }

    /// Reschedule after a read issued at `t_req`. A late read does not
    /// cause a burst of catch-up reads.
    pub fn mark_read(&mut self, did: u16, t_req: SimTime) {
        if let Some(e) = self.entries.get_mut(&did) {
            let on_schedule = e.next_due + e.period;
            let from_now = t_req + e.period;
            e.next_due = on_schedule.max(from_now);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DidInfo<T> {
    pub name: String,
    pub len: usize,
    pub scaling: Option<Scaling<T>>,
}

/// What the tester knows about the ECU's data identifiers: record lengths
/// for splitting multi-DID responses and scalings for physical values.
#[derive(Debug, Clone, PartialEq)]
pub struct DidCatalog<T> {
    dids: BTreeMap<u16, DidInfo<T>>,
    max_per_request: usize,
}

impl<T: Scalar> DidCatalog<T> {
    pub fn from_config(cfg: &EcuConfig) -> Self {
        DidCatalog {
            dids: cfg
                .dids
                .iter()
                .map(|d| {
                    (
                        d.did,
                        DidInfo {
                            name: d.name.clone(),
                            len: d.len(),
                            scaling: d.scaling().map(Scaling::cast),
                        },
                    )
                })
                .collect(),
            max_per_request: cfg.max_dids_per_read.max(1),
        }
    }

    pub fn get(&self, did: u16) -> Option<&DidInfo<T>> {
        self.dids.get(&did)
    }

    pub fn by_name(&self, name: &str) -> Option<u16> {
        self.dids.iter().find(|(_, i)| i.name == name).map(|(d, _)| *d)
    }

    pub fn max_per_request(&self) -> usize {
        self.max_per_request
    }

    /// A sample for one DID record.
    pub fn sample(&self, t: SimTime, did: u16, raw: &[u8]) -> Sample<T> {
        let Some(info) = self.get(did) else {
            return Sample::failed(t, did, SampleError::Missing);
        };
        match &info.scaling {
            Some(s) => match s.decode(raw) {
                Some(v) => Sample::ok(t, did, raw.to_vec(), v, s.unit.clone()),
                None => Sample::failed(
                    t,
                    did,
                    SampleError::Transport {
                        detail: format!("record length {} does not match scaling", raw.len()),
                    },
                ),
            },
            None => Sample {
                t,
                did,
                raw: raw.to_vec(),
                value: None,
                unit: String::new(),
                error: None,
            },
        }
    }

    /// Splits the data of a positive ReadDataByIdentifier response (after
    /// the SID) into `(did, record)` pairs. Stops at the first DID the
    /// catalog cannot size.
    pub fn split_records<'a>(&self, mut data: &'a [u8]) -> Result<Vec<(u16, &'a [u8])>, u16> {
        let mut out = Vec::new();
        while data.len() >= 2 {
            let did = u16::from_be_bytes([data[0], data[1]]);
            let len = self.get(did).map(|i| i.len).ok_or(did)?;
            if data.len() < 2 + len {
                return Err(did);
            }
            out.push((did, &data[2..2 + len]));
            data = &data[2 + len..];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lists() {
        let dup = [
            PollSpec { did: 1, period_ms: 10 },
            PollSpec { did: 1, period_ms: 20 },
        ];
        assert_eq!(PollList::new(&dup, SimTime::ZERO), Err(PollListError::DuplicateDid(1)));
        let zero = [PollSpec { did: 2, period_ms: 0 }];
        assert_eq!(PollList::new(&zero, SimTime::ZERO), Err(PollListError::ZeroPeriod(2)));
    }

    #[test]
    fn schedule_never_bursts() {
        let mut l = PollList::new(&[PollSpec { did: 1, period_ms: 100 }], SimTime::ZERO).unwrap();
        assert_eq!(l.due(SimTime::ZERO), vec![1]);
        l.mark_read(1, SimTime::ZERO);
        assert!(l.due(SimTime::from_millis(99)).is_empty());
        // read late at 350: next is 450, not 200
        l.mark_read(1, SimTime::from_millis(350));
        assert_eq!(l.next_due(), Some(SimTime::from_millis(450)));
    }

    #[test]
    fn split_multi_did_response() {
        let cat = DidCatalog::<f64>::from_config(&EcuConfig::shipped());
        let data = [0x0D, 0x02, 0x0F, 0xA0, 0x0D, 0x01, 0x9A];
        let recs = cat.split_records(&data).unwrap();
        assert_eq!(recs, vec![(0x0D02, &[0x0F, 0xA0][..]), (0x0D01, &[0x9A][..])]);
        let v = cat.sample(SimTime::ZERO, 0x0D02, recs[0].1);
        assert!((v.value.unwrap() - 400.0).abs() < 1e-9);
        assert_eq!(v.unit, "V");
        assert_eq!(cat.split_records(&[0xAB, 0xCD, 0]), Err(0xABCD));
    }
}
