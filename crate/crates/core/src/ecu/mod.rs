//! Simulated ECU.
//!
//! [`Ecu`] is the diagnostic server proper: session state machine with the
//! S3 timer, seed/key security access with attempt counting and lockout,
//! DID-backed signals, and a DTC store with fault-time snapshots. It is a
//! pure function of (config, state, request, time); the RNG that produces
//! seeds lives in the state and is seeded from the config.
//!
//! Request checks run in a fixed order, first failure wins:
//!
//! 1. service known to this ECU, else `0x11`
//! 2. service allowed in the active session, else `0x7F`
//! 3. sub-function byte present, else `0x13`
//! 4. sub-function known, else `0x12`; allowed in the active session, else `0x7E`
//! 5. record length per the service table, else `0x13`
//! 6. service-specific checks

mod config;
mod gateway;
mod node;
mod security;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::services::{self, dtc_report, session, sid, Grammar, ALL_DTC_GROUPS, SEED_LEN};
use crate::codec::{Dtc, DtcCode, Nrc, Response, ServiceId, SubFunction, AVAILABILITY_MASK};
use crate::time::{ms, SimTime};

pub use config::{
    ConfigError, DidConfig, DidSource, DtcFixture, EcuConfig, SecurityLevelConfig, ServiceAccess,
    SessionConfig, SnapshotValue, Timing, WorkDelay, SHIPPED_CONFIG_JSON,
};
pub use gateway::{gateway_filter, Gateway, GatewayDirection, GatewayVerdict};
pub use node::EcuNode;
pub use security::KeyFunction;

/// A stored trouble code and the DID values captured when it was set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtcRecord {
    pub dtc: Dtc,
    pub snapshot: Vec<SnapshotValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingSeed {
    pub level: u8,
    pub seed: [u8; SEED_LEN],
}

#[derive(Debug, Clone)]
pub struct EcuState {
    pub active_session: u8,
    pub s3_deadline: Option<SimTime>,
    pub unlocked_levels: BTreeSet<u8>,
    pub pending_seed: Option<PendingSeed>,
    pub failed_attempts: u8,
    pub lockout_until: Option<SimTime>,
    pub dtc_store: Vec<DtcRecord>,
    stored: BTreeMap<u16, Vec<u8>>,
    rng: ChaCha8Rng,
}

impl EcuState {
    pub fn new(cfg: &EcuConfig) -> Self {
        EcuState {
            active_session: session::DEFAULT,
            s3_deadline: None,
            unlocked_levels: BTreeSet::new(),
            pending_seed: None,
            failed_attempts: 0,
            lockout_until: None,
            dtc_store: cfg
                .dtcs
                .iter()
                .map(|f| DtcRecord {
                    dtc: Dtc {
                        code: f.code,
                        status: f.status,
                    },
                    snapshot: f.snapshot.clone(),
                })
                .collect(),
            stored: cfg
                .dids
                .iter()
                .filter_map(|d| d.initial_bytes().map(|b| (d.did, b)))
                .collect(),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
        }
    }
}

/// Why the active session changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionChangeReason {
    Request,
    S3Timeout,
}

/// Observable state changes, for the live console stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EcuEvent {
    SessionChanged {
        t: SimTime,
        session: u8,
        reason: SessionChangeReason,
        s3_deadline: Option<SimTime>,
    },
    Unlocked { t: SimTime, level: u8 },
    LockoutArmed { t: SimTime, until: SimTime },
    LockoutExpired { t: SimTime },
    FaultInjected { t: SimTime, code: DtcCode },
    DtcsCleared { t: SimTime, remaining: usize },
}

/// What the ECU does with one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    /// `None` when a positive response is suppressed.
    pub response: Option<Response>,
    /// Processing time before the final response. Longer than P2 means the
    /// node sends NRC 0x78 first.
    pub delay: Duration,
}

type Outcome = Result<Vec<u8>, Nrc>;

#[derive(Debug, Clone)]
pub struct Ecu {
    cfg: Arc<EcuConfig>,
    state: EcuState,
    events: Vec<EcuEvent>,
}

impl Ecu {
    pub fn new(cfg: impl Into<Arc<EcuConfig>>) -> Self {
        let cfg = cfg.into();
        let state = EcuState::new(&cfg);
        Ecu {
            cfg,
            state,
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &EcuConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EcuState {
        &self.state
    }

    pub fn take_events(&mut self) -> Vec<EcuEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn p2(&self) -> Duration {
        ms(self.cfg.timing.p2_ms)
    }

    /// Timer housekeeping: S3 expiry and lockout expiry.
    pub fn tick(&mut self, now: SimTime) {
        if self.state.s3_deadline.is_some_and(|d| now >= d) {
            self.transition(session::DEFAULT, now, SessionChangeReason::S3Timeout);
        }
        if self.state.lockout_until.is_some_and(|u| now >= u) {
            self.state.lockout_until = None;
            self.state.failed_attempts = 0;
            self.events.push(EcuEvent::LockoutExpired { t: now });
        }
    }

    /// Handle one request PDU received at `now`.
    pub fn handle_request(&mut self, pdu: &[u8], now: SimTime) -> Reply {
        self.tick(now);
        let Some(&sid_value) = pdu.first() else {
            return Reply {
                response: None,
                delay: Duration::ZERO,
            };
        };
        let (outcome, suppress) = self.dispatch(pdu, now);
        if self.state.active_session != session::DEFAULT {
            self.state.s3_deadline = Some(now + ms(self.cfg.timing.s3_ms));
        }
        match outcome {
            Err(nrc) => Reply {
                response: Some(Response::negative(sid_value, nrc)),
                delay: Duration::ZERO,
            },
            Ok(data) => {
                let sid = ServiceId::new(sid_value).expect("dispatch rejects 0x7F");
                Reply {
                    response: (!suppress).then(|| Response::positive(sid, data)),
                    delay: ms(self.cfg.work_delay_ms(sid_value)),
                }
            }
        }
    }

    fn dispatch(&mut self, pdu: &[u8], now: SimTime) -> (Outcome, bool) {
        let sid_value = pdu[0];
        let cfg = Arc::clone(&self.cfg);
        let lenient = !cfg.length_check;
        let active = self.state.active_session;

        let Some(spec) = services::lookup(sid_value).filter(|_| cfg.service_supported(sid_value)) else {
            return (Err(Nrc::ServiceNotSupported), false);
        };
        if !cfg.service_allowed(active, sid_value) {
            return (Err(Nrc::ServiceNotSupportedInActiveSession), false);
        }

        let (sub, body) = if spec.has_sub_function() {
            match pdu.get(1) {
                Some(&b) => (Some(SubFunction::from_wire(b)), &pdu[2..]),
                None if lenient => (Some(SubFunction::new(0, false)), &pdu[1..]),
                None => return (Err(Nrc::IncorrectMessageLengthOrInvalidFormat), false),
            }
        } else {
            (None, &pdu[1..])
        };
        let suppress = sub.is_some_and(|s| s.suppress_positive_response);

        let grammar = match sub {
            Some(s) => {
                let known = spec
                    .sub_grammar(s.value)
                    .filter(|_| cfg.supported_subs(sid_value).contains(&s.value));
                let Some(g) = known else {
                    return (Err(Nrc::SubFunctionNotSupported), suppress);
                };
                if !cfg.subs_in_session(active, sid_value).contains(&s.value) {
                    return (Err(Nrc::SubFunctionNotSupportedInActiveSession), suppress);
                }
                g
            }
            None => spec.grammar,
        };

        let body = match self.check_length(grammar, body) {
            Ok(b) => b,
            Err(nrc) => return (Err(nrc), suppress),
        };
        let sub_value = sub.map_or(0, |s| s.value);
        let outcome = match sid_value {
            sid::DIAGNOSTIC_SESSION_CONTROL => self.session_control(sub_value, now),
            sid::SECURITY_ACCESS => self.security_access(sub_value, &body, now),
            sid::TESTER_PRESENT => Ok(vec![sub_value]),
            sid::READ_DATA_BY_IDENTIFIER => self.read_dids(&body, now),
            sid::WRITE_DATA_BY_IDENTIFIER => self.write_did(&body),
            sid::READ_DTC_INFORMATION => self.read_dtc(sub_value, &body),
            sid::CLEAR_DIAGNOSTIC_INFORMATION => self.clear_dtc(&body, now),
            _ => Err(Nrc::ServiceNotSupported),
        };
        (outcome, suppress)
    }

    /// Validates the record length, or with length checking disabled, coerces
    /// the record to the expected shape.
    fn check_length<'a>(&self, grammar: Grammar, body: &'a [u8]) -> Result<Cow<'a, [u8]>, Nrc> {
        let strict = self.cfg.length_check;
        let fit = |n: usize| -> Cow<'a, [u8]> {
            if body.len() == n {
                Cow::Borrowed(body)
            } else {
                let mut v = body[..body.len().min(n)].to_vec();
                v.resize(n, 0);
                Cow::Owned(v)
            }
        };
        let bad = Err(Nrc::IncorrectMessageLengthOrInvalidFormat);
        match grammar {
            Grammar::Exact(_) | Grammar::Key => {
                let n = match grammar {
                    Grammar::Exact(n) => n,
                    _ => SEED_LEN,
                };
                if body.len() == n {
                    Ok(Cow::Borrowed(body))
                } else if strict {
                    bad
                } else {
                    Ok(fit(n))
                }
            }
            Grammar::DidList => {
                let max = self.cfg.max_dids_per_read * 2;
                if strict {
                    if body.is_empty() || !body.len().is_multiple_of(2) || body.len() > max {
                        bad
                    } else {
                        Ok(Cow::Borrowed(body))
                    }
                } else {
                    let n = (body.len() - body.len() % 2).min(max);
                    Ok(Cow::Borrowed(&body[..n]))
                }
            }
            Grammar::DidWrite => {
                if body.len() >= 3 {
                    Ok(Cow::Borrowed(body))
                } else if strict {
                    bad
                } else {
                    Ok(fit(3))
                }
            }
        }
    }

    fn transition(&mut self, target: u8, now: SimTime, reason: SessionChangeReason) {
        self.state.active_session = target;
        self.state.unlocked_levels.clear();
        self.state.pending_seed = None;
        self.state.s3_deadline =
            (target != session::DEFAULT).then(|| now + ms(self.cfg.timing.s3_ms));
        self.events.push(EcuEvent::SessionChanged {
            t: now,
            session: target,
            reason,
            s3_deadline: self.state.s3_deadline,
        });
    }

    fn session_control(&mut self, target: u8, now: SimTime) -> Outcome {
        let required = self.cfg.session(target).and_then(|s| s.requires_level);
        if let Some(level) = required {
            if !self.state.unlocked_levels.contains(&level) {
                return Err(Nrc::SecurityAccessDenied);
            }
        }
        self.transition(target, now, SessionChangeReason::Request);
        let p2 = (self.cfg.timing.p2_ms.min(u16::MAX as u64) as u16).to_be_bytes();
        let p2_star = ((self.cfg.timing.p2_star_ms / 10).min(u16::MAX as u64) as u16).to_be_bytes();
        Ok(vec![target, p2[0], p2[1], p2_star[0], p2_star[1]])
    }

    fn security_access(&mut self, sub: u8, key: &[u8], now: SimTime) -> Outcome {
        if self.state.lockout_until.is_some_and(|u| now < u) {
            return Err(Nrc::RequiredTimeDelayNotExpired);
        }
        if sub % 2 == 1 {
            let level = sub;
            if self.state.unlocked_levels.contains(&level) {
                return Ok(vec![sub, 0, 0, 0, 0]);
            }
            let mut seed = [0u8; SEED_LEN];
            while seed == [0; SEED_LEN] {
                self.state.rng.fill(&mut seed);
            }
            self.state.pending_seed = Some(PendingSeed { level, seed });
            let mut out = vec![sub];
            out.extend_from_slice(&seed);
            return Ok(out);
        }

        let level = sub - 1;
        let pending = self.state.pending_seed.take();
        let Some(pending) = pending.filter(|p| p.level == level) else {
            return Err(Nrc::RequestSequenceError);
        };
        let key_fn = self
            .cfg
            .security_level(level)
            .map(|l| l.key_fn)
            .unwrap_or_default();
        if key == key_fn.derive(&pending.seed).as_slice() {
            self.state.unlocked_levels.insert(level);
            self.state.failed_attempts = 0;
            self.events.push(EcuEvent::Unlocked { t: now, level });
            return Ok(vec![sub]);
        }
        self.state.failed_attempts = self.state.failed_attempts.saturating_add(1);
        if self.state.failed_attempts >= self.cfg.max_attempts {
            let until = now + ms(self.cfg.timing.lockout_delay_ms);
            self.state.lockout_until = Some(until);
            self.events.push(EcuEvent::LockoutArmed { t: now, until });
            Err(Nrc::ExceededNumberOfAttempts)
        } else {
            Err(Nrc::InvalidKey)
        }
    }

    /// Current data record of a DID, if the ECU knows it.
    pub fn did_value(&self, did: u16, now: SimTime) -> Option<Vec<u8>> {
        let spec = self.cfg.did(did)?;
        match &spec.source {
            DidSource::Signal { model, scaling } => Some(scaling.encode(model.value_at(now))),
            DidSource::Bytes { .. } => self.state.stored.get(&did).cloned(),
        }
    }

    fn read_dids(&self, body: &[u8], now: SimTime) -> Outcome {
        let mut out = Vec::new();
        for pair in body.chunks_exact(2) {
            let did = u16::from_be_bytes([pair[0], pair[1]]);
            if let Some(value) = self.did_value(did, now) {
                out.extend_from_slice(pair);
                out.extend_from_slice(&value);
            }
        }
        if out.is_empty() {
            Err(Nrc::RequestOutOfRange)
        } else {
            Ok(out)
        }
    }

    fn write_did(&mut self, body: &[u8]) -> Outcome {
        let did = u16::from_be_bytes([body[0], body[1]]);
        let Some(spec) = self.cfg.did(did).filter(|d| d.writable) else {
            return Err(Nrc::RequestOutOfRange);
        };
        if let Some(level) = spec.write_level {
            if !self.state.unlocked_levels.contains(&level) {
                return Err(Nrc::SecurityAccessDenied);
            }
        }
        let mut value = body[2..].to_vec();
        if value.len() != spec.len() {
            if self.cfg.length_check {
                return Err(Nrc::IncorrectMessageLengthOrInvalidFormat);
            }
            value.resize(spec.len(), 0);
        }
        self.state.stored.insert(did, value);
        Ok(did.to_be_bytes().to_vec())
    }

    fn read_dtc(&self, sub: u8, body: &[u8]) -> Outcome {
        match sub {
            dtc_report::BY_STATUS_MASK => {
                let mask = body[0];
                let mut out = vec![sub, AVAILABILITY_MASK];
                for r in self.state.dtc_store.iter().filter(|r| r.dtc.status & mask != 0) {
                    out.extend_from_slice(&r.dtc.raw());
                    out.push(r.dtc.status);
                }
                Ok(out)
            }
            dtc_report::SUPPORTED_DTC => {
                let mut out = vec![sub, AVAILABILITY_MASK];
                for r in &self.state.dtc_store {
                    out.extend_from_slice(&r.dtc.raw());
                    out.push(r.dtc.status);
                }
                Ok(out)
            }
            dtc_report::SNAPSHOT_BY_DTC_NUMBER => {
                let code = DtcCode([body[0], body[1], body[2]]);
                let record_number = body[3];
                let record = self
                    .state
                    .dtc_store
                    .iter()
                    .find(|r| r.dtc.code == code)
                    .ok_or(Nrc::RequestOutOfRange)?;
                if record_number != 0x01 && record_number != 0xFF {
                    return Err(Nrc::RequestOutOfRange);
                }
                let mut out = vec![sub];
                out.extend_from_slice(&code.0);
                out.push(record.dtc.status);
                if !record.snapshot.is_empty() {
                    out.push(0x01);
                    out.push(record.snapshot.len() as u8);
                    for s in &record.snapshot {
                        out.extend_from_slice(&s.did.to_be_bytes());
                        out.extend_from_slice(&s.value);
                    }
                }
                Ok(out)
            }
            _ => Err(Nrc::SubFunctionNotSupported),
        }
    }

    fn clear_dtc(&mut self, body: &[u8], now: SimTime) -> Outcome {
        let group = [body[0], body[1], body[2]];
        if group == ALL_DTC_GROUPS {
            self.state.dtc_store.clear();
        } else if self.cfg.dtc_families().contains(&group[0]) {
            self.state.dtc_store.retain(|r| r.dtc.code.0[0] != group[0]);
        } else {
            return Err(Nrc::RequestOutOfRange);
        }
        self.events.push(EcuEvent::DtcsCleared {
            t: now,
            remaining: self.state.dtc_store.len(),
        });
        Ok(Vec::new())
    }

    /// Record a fault now, snapshotting every DID tagged for snapshots.
    pub fn inject_fault(&mut self, code: DtcCode, status: u8, now: SimTime) -> &DtcRecord {
        let snapshot: Vec<SnapshotValue> = self
            .cfg
            .dids
            .iter()
            .filter(|d| d.snapshot)
            .filter_map(|d| {
                self.did_value(d.did, now)
                    .map(|value| SnapshotValue { did: d.did, value })
            })
            .collect();
        self.events.push(EcuEvent::FaultInjected { t: now, code });
        let record = DtcRecord {
            dtc: Dtc { code, status },
            snapshot,
        };
        match self.state.dtc_store.iter().position(|r| r.dtc.code == code) {
            Some(i) => {
                self.state.dtc_store[i] = record;
                &self.state.dtc_store[i]
            }
            None => {
                self.state.dtc_store.push(record);
                self.state.dtc_store.last().expect("just pushed")
            }
        }
    }
}

#[cfg(test)]
mod tests;
