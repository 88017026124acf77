//! Diagnostic client: request/response correlation with P2/P2* timing,
//! TesterPresent keep-alive, seed/key unlock, and periodic DID polling.

mod poll;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::Link;
use crate::canbus::CanFrame;
use crate::codec::services::{session, sid};
use crate::codec::{
    decode_response, is_response_pending, parse_dtc_list, CodecError, Dtc, Nrc, Request, Response,
    SubFunction, SPR_BIT,
};
use crate::ecu::{EcuConfig, KeyFunction};
use crate::isotp::{FlowControlParams, IsoTpChannel, IsoTpError, TpEndpoint, TpTimers};
use crate::sample::{Sample, SampleError};
use crate::scalar::Scalar;
use crate::time::SimTime;

pub use poll::{DidCatalog, DidInfo, PollList, PollListError, PollSpec};

/// Keep-alive request: TesterPresent with the suppress bit.
pub const KEEP_ALIVE: [u8; 2] = [sid::TESTER_PRESENT, SPR_BIT];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TesterConfig {
    pub p2_timeout_ms: u64,
    pub p2_star_timeout_ms: u64,
    pub tp_period_ms: u64,
    pub max_pending_extensions: u32,
    pub keep_alive: bool,
}

impl Default for TesterConfig {
    fn default() -> Self {
        TesterConfig {
            p2_timeout_ms: 150,
            p2_star_timeout_ms: 5000,
            tp_period_ms: 2000,
            max_pending_extensions: 10,
            keep_alive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TesterError {
    #[error("no response within the timeout")]
    Timeout,
    #[error("more than {0} responsePending extensions")]
    TooManyPendingExtensions(u32),
    #[error("transport: {0}")]
    Transport(#[from] IsoTpError),
    #[error("response for service {got:#04x}, expected {expected:#04x}")]
    SidMismatch { expected: u8, got: u8 },
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
}

/// How an exchange ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Response(Response),
    /// Suppress bit set and the ECU stayed silent for the whole P2 window.
    SuppressedOk,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub outcome: Outcome,
    /// Instant the request was put on the bus.
    pub t_request: SimTime,
    /// Instant the outcome was settled.
    pub t_done: SimTime,
    /// responsePending (0x78) answers seen before the final one.
    pub pending: u32,
    /// Frames received from the ECU's response id during the exchange.
    pub response_frames: usize,
}

impl Exchange {
    pub fn response(&self) -> Option<&Response> {
        match &self.outcome {
            Outcome::Response(r) => Some(r),
            Outcome::SuppressedOk => None,
        }
    }

    pub fn nrc(&self) -> Option<Nrc> {
        self.response().and_then(Response::nrc)
    }

    pub fn is_positive(&self) -> bool {
        matches!(&self.outcome, Outcome::Response(r) if r.is_positive())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnlockOutcome {
    Unlocked,
    /// The ECU answered requestSeed with an all-zero seed.
    AlreadyUnlocked,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnlockError {
    #[error("security access needs a non-default session")]
    DefaultSession,
    #[error("{0:#04x} is not an odd requestSeed level")]
    BadLevel(u8),
    #[error("invalid key")]
    InvalidKey,
    #[error("locked out ({0})")]
    LockedOut(Nrc),
    #[error("request sequence error")]
    SequenceError,
    #[error("rejected ({0})")]
    Rejected(Nrc),
    #[error("malformed seed response")]
    MalformedSeed,
    #[error(transparent)]
    Tester(#[from] TesterError),
}

/// A request in wire form: either a PDU for the tester's own ISO-TP
/// channel, or prepared frames sent verbatim (for malformed requests).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Wire {
    Pdu(Vec<u8>),
    Frames(Vec<CanFrame>),
}

pub struct Tester<L, T> {
    link: L,
    cfg: TesterConfig,
    tp: IsoTpChannel,
    session: u8,
    last_keep_alive: SimTime,
    keep_alives: Vec<SimTime>,
    rx_frames: u64,
    catalog: DidCatalog<T>,
}

impl<L: Link, T: Scalar> Tester<L, T> {
    pub fn new(link: L, ecu: &EcuConfig, cfg: TesterConfig) -> Self {
        let endpoint = TpEndpoint::new(ecu.request_can_id(), ecu.response_can_id())
            .expect("config validation rejects equal ids");
        let now = link.now();
        Tester {
            link,
            cfg,
            tp: IsoTpChannel::new(endpoint, TpTimers::default(), FlowControlParams::default()),
            session: session::DEFAULT,
            last_keep_alive: now,
            keep_alives: Vec::new(),
            rx_frames: 0,
            catalog: DidCatalog::from_config(ecu),
        }
    }

    pub fn link(&self) -> &L {
        &self.link
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }

    pub fn into_link(self) -> L {
        self.link
    }

    pub fn config(&self) -> &TesterConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.link.now()
    }

    pub fn catalog(&self) -> &DidCatalog<T> {
        &self.catalog
    }

    /// Session the tester believes is active.
    pub fn session(&self) -> u8 {
        self.session
    }

    /// Times at which keep-alives went out.
    pub fn keep_alives(&self) -> &[SimTime] {
        &self.keep_alives
    }

    /// Frames received from the ECU's response id since construction.
    pub fn rx_frames(&self) -> u64 {
        self.rx_frames
    }

    pub fn set_keep_alive(&mut self, on: bool) {
        self.cfg.keep_alive = on;
    }

    fn keep_alive(&mut self, now: SimTime) -> Result<bool, TesterError> {
        let due = self.last_keep_alive + Duration::from_millis(self.cfg.tp_period_ms);
        if !self.cfg.keep_alive || self.session == session::DEFAULT || !self.tp.is_tx_idle() || now < due {
            return Ok(false);
        }
        self.tp.send(&KEEP_ALIVE, now)?;
        self.last_keep_alive = now;
        self.keep_alives.push(now);
        Ok(true)
    }

    /// One tick: keep-alive, transmit, advance the link, receive. Returns
    /// completed messages and the count of frames from the ECU.
    fn tick(&mut self) -> Result<(Vec<Vec<u8>>, usize), TesterError> {
        let now = self.link.now();
        self.keep_alive(now)?;
        let frames = match self.tp.poll(now) {
            Ok(f) => f,
            Err(e) => {
                self.tp.reset();
                return Err(e.into());
            }
        };
        for f in frames {
            self.link.send(f);
        }
        let rx_id = self.tp.endpoint().rx_id;
        let mut done = Vec::new();
        let mut count = 0;
        for f in self.link.advance() {
            if f.id() != rx_id {
                continue;
            }
            count += 1;
            self.rx_frames += 1;
            match self.tp.on_frame(&f, now) {
                Ok(Some(msg)) => done.push(msg.into_bytes()),
                Ok(None) => {}
                Err(e) => {
                    self.tp.reset();
                    return Err(e.into());
                }
            }
        }
        // flow control owed to the ECU goes out with the next tick
        Ok((done, count))
    }

    /// Let time pass, keeping the session alive. Unsolicited responses are
    /// discarded.
    pub fn idle(&mut self, d: Duration) -> Result<(), TesterError> {
        let end = self.link.now() + d;
        while self.link.now() < end {
            self.tick()?;
        }
        Ok(())
    }

    pub fn request(&mut self, req: &Request) -> Result<Exchange, TesterError> {
        let pdu = req.encode()?;
        self.exchange(Wire::Pdu(pdu))
    }

    /// Send raw request bytes.
    pub fn request_raw(&mut self, pdu: &[u8]) -> Result<Exchange, TesterError> {
        self.exchange(Wire::Pdu(pdu.to_vec()))
    }

    /// Send a request and wait for its outcome. The SID and suppress bit
    /// used for correlation are read from the PDU (or the first frame's
    /// single-frame payload).
    pub fn exchange(&mut self, wire: Wire) -> Result<Exchange, TesterError> {
        let head: Vec<u8> = match &wire {
            Wire::Pdu(p) => p.clone(),
            Wire::Frames(fs) => fs
                .first()
                .map(|f| f.data().get(1..).unwrap_or(&[]).to_vec())
                .unwrap_or_default(),
        };
        let req_sid = head.first().copied().unwrap_or(0);
        let suppress = crate::codec::services::has_sub_function(req_sid)
            && head.get(1).is_some_and(|b| SubFunction::from_wire(*b).suppress_positive_response);

        let t_request = self.link.now();
        match wire {
            Wire::Pdu(p) => self.tp.send(&p, t_request)?,
            Wire::Frames(fs) => {
                for f in fs {
                    self.link.send(f);
                }
            }
        }

        let p2 = Duration::from_millis(self.cfg.p2_timeout_ms);
        let p2_star = Duration::from_millis(self.cfg.p2_star_timeout_ms);
        let mut deadline: Option<SimTime> = None;
        let mut pending = 0u32;
        let mut frames = 0usize;
        loop {
            let now = self.link.now();
            let (msgs, n) = self.tick()?;
            frames += n;
            if deadline.is_none() && self.tp.is_tx_idle() {
                deadline = Some(now + p2);
            }
            for m in msgs {
                let resp = match decode_response(&m, req_sid) {
                    Ok(r) => r,
                    // a rejected keep-alive is not the answer we wait for
                    Err(_) if m.len() >= 2 && m[0] == sid::NEGATIVE_RESPONSE && m[1] == sid::TESTER_PRESENT => {
                        continue
                    }
                    Err(CodecError::SidMismatch { expected, got }) => {
                        return Err(TesterError::SidMismatch { expected, got })
                    }
                    Err(e) => return Err(e.into()),
                };
                if is_response_pending(&resp) {
                    pending += 1;
                    if pending > self.cfg.max_pending_extensions {
                        return Err(TesterError::TooManyPendingExtensions(self.cfg.max_pending_extensions));
                    }
                    deadline = Some(now + p2_star);
                    continue;
                }
                self.track_session(req_sid, &head, Some(&resp), now);
                return Ok(Exchange {
                    outcome: Outcome::Response(resp),
                    t_request,
                    t_done: now,
                    pending,
                    response_frames: frames,
                });
            }
            if deadline.is_some_and(|d| now >= d) {
                if suppress && pending == 0 {
                    self.track_session(req_sid, &head, None, now);
                    return Ok(Exchange {
                        outcome: Outcome::SuppressedOk,
                        t_request,
                        t_done: now,
                        pending,
                        response_frames: frames,
                    });
                }
                return Err(TesterError::Timeout);
            }
        }
    }

    fn track_session(&mut self, req_sid: u8, head: &[u8], resp: Option<&Response>, now: SimTime) {
        if req_sid != sid::DIAGNOSTIC_SESSION_CONTROL || resp.is_some_and(|r| !r.is_positive()) {
            return;
        }
        if let Some(&b) = head.get(1) {
            let target = SubFunction::from_wire(b).value;
            self.session = target;
            self.last_keep_alive = now;
        }
    }

    pub fn session_control(&mut self, target: u8) -> Result<Exchange, TesterError> {
        self.request(&Request::session_control(target, false))
    }

    /// requestSeed then sendKey with `key_fn`.
    pub fn unlock(&mut self, level: u8, key_fn: KeyFunction) -> Result<UnlockOutcome, UnlockError> {
        if level.is_multiple_of(2) || level > 0x7D {
            return Err(UnlockError::BadLevel(level));
        }
        if self.session == session::DEFAULT {
            return Err(UnlockError::DefaultSession);
        }
        let seed_ex = self.request(&Request::request_seed(level))?;
        let seed = match seed_ex.response() {
            Some(Response::Positive { data, .. }) if data.len() > 1 && data[0] == level => data[1..].to_vec(),
            Some(Response::Negative { nrc, .. }) => return Err(map_unlock_nrc(*nrc)),
            _ => return Err(UnlockError::MalformedSeed),
        };
        if seed.iter().all(|b| *b == 0) {
            return Ok(UnlockOutcome::AlreadyUnlocked);
        }
        let key = key_fn.derive(&seed);
        let key_ex = self.request(&Request::send_key(level, &key))?;
        match key_ex.response() {
            Some(Response::Positive { .. }) => Ok(UnlockOutcome::Unlocked),
            Some(Response::Negative { nrc, .. }) => Err(map_unlock_nrc(*nrc)),
            None => Err(UnlockError::MalformedSeed),
        }
    }

    /// ReadDTCInformation reportDTCByStatusMask.
    pub fn read_dtcs(&mut self, mask: u8) -> Result<Result<Vec<Dtc>, Nrc>, TesterError> {
        let ex = self.request(&Request::read_dtc_by_status(mask))?;
        Ok(match ex.response() {
            Some(Response::Positive { data, .. }) => Ok(parse_dtc_list(data).unwrap_or_default()),
            Some(Response::Negative { nrc, .. }) => Err(*nrc),
            None => Ok(Vec::new()),
        })
    }

    /// Issue reads for every due entry at the current instant. Samples are
    /// stamped with the time of the request that carried them.
    pub fn poll(&mut self, list: &mut PollList) -> Vec<Sample<T>> {
        let due = list.due(self.link.now());
        let mut out = Vec::new();
        for chunk in due.chunks(self.catalog.max_per_request()) {
            let t_req = self.link.now();
            out.extend(self.read_batch(chunk, t_req));
            for did in chunk {
                list.mark_read(*did, t_req);
            }
        }
        out
    }

    fn read_batch(&mut self, dids: &[u16], t: SimTime) -> Vec<Sample<T>> {
        let fail_all = |e: SampleError| dids.iter().map(|d| Sample::failed(t, *d, e.clone())).collect();
        let ex = match self.request(&Request::read_dids(dids)) {
            Ok(ex) => ex,
            Err(TesterError::Timeout) => return fail_all(SampleError::Timeout),
            Err(e) => {
                return fail_all(SampleError::Transport {
                    detail: e.to_string(),
                })
            }
        };
        let data = match ex.response() {
            Some(Response::Positive { data, .. }) => data.clone(),
            Some(Response::Negative { nrc, .. }) => return fail_all(SampleError::Nrc { code: nrc.code() }),
            None => return fail_all(SampleError::Missing),
        };
        let records = match self.catalog.split_records(&data) {
            Ok(r) => r,
            Err(did) => {
                return fail_all(SampleError::Transport {
                    detail: format!("cannot size record for DID {did:#06x}"),
                })
            }
        };
        dids.iter()
            .map(|did| match records.iter().find(|(d, _)| d == did) {
                Some((_, raw)) => self.catalog.sample(t, *did, raw),
                None => Sample::failed(t, *did, SampleError::Missing),
            })
            .collect()
    }

    /// Poll for `d`, idling between due times. Per-entry errors land in the
    /// sample stream; polling continues.
    pub fn run_poll(&mut self, list: &mut PollList, d: Duration) -> Result<Vec<Sample<T>>, TesterError> {
        let end = self.link.now() + d;
        let mut out = Vec::new();
        while self.link.now() < end {
            if list.due(self.link.now()).is_empty() {
                self.tick()?;
            } else {
                out.extend(self.poll(list));
            }
        }
        Ok(out)
    }
}

fn map_unlock_nrc(nrc: Nrc) -> UnlockError {
    match nrc {
        Nrc::InvalidKey => UnlockError::InvalidKey,
        Nrc::ExceededNumberOfAttempts | Nrc::RequiredTimeDelayNotExpired => UnlockError::LockedOut(nrc),
        Nrc::RequestSequenceError => UnlockError::SequenceError,
        other => UnlockError::Rejected(other),
    }
}
