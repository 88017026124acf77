//! One live diagnostic connection: a workbench, the tester driving it, an
//! optional poll list, and a cursor into the recording for streaming.

use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};
use udsbench::bench::{recording_bench, Link, Workbench};
use udsbench::codec::{describe_request, describe_response, to_hex, DtcCode, Nrc};
use udsbench::ecu::{DtcRecord, EcuConfig, KeyFunction};
use udsbench::tester::{Exchange, Outcome, PollList, PollListError, PollSpec, TesterConfig, TesterError, UnlockOutcome};
use udsbench::trace::{record_json, DEFAULT_CAPACITY};
use udsbench::{Sample, SimTime, Tester};

/// Result of one request, as reported by the CLI and the HTTP API.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExchangeView {
    pub request_hex: String,
    pub request_decode: String,
    /// positive, negative, suppressed, timeout or error.
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_hex: Option<String>,
    pub decode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nrc: Option<String>,
    pub pending: u32,
    pub t_request_ns: u64,
    pub t_done_ns: u64,
}

impl ExchangeView {
    fn new(pdu: &[u8], t_request: SimTime, result: Result<Exchange, TesterError>) -> Self {
        let mut view = ExchangeView {
            request_hex: to_hex(pdu),
            request_decode: describe_request(pdu),
            status: "error",
            response_hex: None,
            decode: String::new(),
            nrc: None,
            pending: 0,
            t_request_ns: t_request.as_nanos(),
            t_done_ns: t_request.as_nanos(),
        };
        match result {
            Ok(ex) => {
                view.pending = ex.pending;
                view.t_done_ns = ex.t_done.as_nanos();
                match ex.outcome {
                    Outcome::SuppressedOk => {
                        view.status = "suppressed";
                        view.decode = "positive response suppressed".into();
                    }
                    Outcome::Response(r) => {
                        let bytes = r.encode();
                        view.decode = describe_response(&bytes);
                        view.response_hex = Some(to_hex(&bytes));
                        match r.nrc() {
                            Some(n) => {
                                view.status = "negative";
                                view.nrc = Some(format!("{:02x}", n.code()));
                            }
                            None => view.status = "positive",
                        }
                    }
                }
            }
            Err(TesterError::Timeout) => {
                view.status = "timeout";
                view.decode = TesterError::Timeout.to_string();
            }
            Err(e) => view.decode = e.to_string(),
        }
        view
    }

    /// Positive or suppressed.
    pub fn ok(&self) -> bool {
        matches!(self.status, "positive" | "suppressed")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnlockView {
    pub level: u8,
    pub key_fn: KeyFunction,
    /// unlocked, already_unlocked or failed.
    pub outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateView {
    pub now_ns: u64,
    pub session: u8,
    pub unlocked_levels: Vec<u8>,
    pub s3_deadline_ns: Option<u64>,
    pub lockout_until_ns: Option<u64>,
    pub keep_alives: usize,
    pub gateway_mode: bool,
    pub poll_list: Vec<PollSpec>,
}

pub struct Live {
    tester: Tester<Workbench>,
    poll: Option<PollList>,
    cursor: u64,
}

impl Live {
    pub fn new(cfg: &EcuConfig) -> Self {
        Self::with_capacity(cfg, DEFAULT_CAPACITY)
    }

    pub fn with_capacity(cfg: &EcuConfig, capacity: usize) -> Self {
        let bench = recording_bench(cfg.clone(), capacity);
        Live {
            tester: Tester::new(bench, cfg, TesterConfig::default()),
            poll: None,
            cursor: 0,
        }
    }

    pub fn tester(&self) -> &Tester<Workbench> {
        &self.tester
    }

    pub fn tester_mut(&mut self) -> &mut Tester<Workbench> {
        &mut self.tester
    }

    pub fn now(&self) -> SimTime {
        self.tester.now()
    }

    pub fn set_realtime(&mut self, on: bool) {
        self.tester.link_mut().set_realtime(on);
    }

    pub fn set_keep_alive(&mut self, on: bool) {
        self.tester.set_keep_alive(on);
    }

    pub fn request(&mut self, pdu: &[u8]) -> ExchangeView {
        let t = self.now();
        let r = self.tester.request_raw(pdu);
        ExchangeView::new(pdu, t, r)
    }

    pub fn session_control(&mut self, session: u8) -> ExchangeView {
        self.request(&[0x10, session])
    }

    pub fn unlock(&mut self, level: u8, key_fn: KeyFunction) -> UnlockView {
        let (outcome, error) = match self.tester.unlock(level, key_fn) {
            Ok(UnlockOutcome::Unlocked) => ("unlocked", None),
            Ok(UnlockOutcome::AlreadyUnlocked) => ("already_unlocked", None),
            Err(e) => ("failed", Some(e.to_string())),
        };
        UnlockView {
            level,
            key_fn,
            outcome,
            error,
        }
    }

    pub fn read_dtcs(&mut self, mask: u8) -> ExchangeView {
        self.request(&[0x19, 0x02, mask])
    }

    pub fn clear_dtcs(&mut self, group: [u8; 3]) -> ExchangeView {
        self.request(&[0x14, group[0], group[1], group[2]])
    }

    /// Store a DTC with a snapshot of the current signal values.
    pub fn inject_fault(&mut self, code: DtcCode, status: u8) -> DtcRecord {
        let now = self.now();
        self.tester.link_mut().ecu_mut().ecu_mut().inject_fault(code, status, now).clone()
    }

    pub fn set_poll_list(&mut self, specs: &[PollSpec]) -> Result<(), PollListError> {
        self.poll = if specs.is_empty() {
            None
        } else {
            Some(PollList::new(specs, self.now())?)
        };
        Ok(())
    }

    pub fn poll_specs(&self) -> Vec<PollSpec> {
        self.poll.as_ref().map(PollList::specs).unwrap_or_default()
    }

    /// Let simulated time pass, polling if a list is set.
    pub fn advance(&mut self, d: Duration) -> Result<Vec<Sample>, TesterError> {
        match &mut self.poll {
            Some(list) => self.tester.run_poll(list, d),
            None => self.tester.idle(d).map(|_| Vec::new()),
        }
    }

    pub fn state(&self) -> StateView {
        let wb = self.tester.link();
        let st = wb.ecu().ecu().state();
        StateView {
            now_ns: wb.now().as_nanos(),
            session: st.active_session,
            unlocked_levels: st.unlocked_levels.iter().copied().collect(),
            s3_deadline_ns: st.s3_deadline.map(SimTime::as_nanos),
            lockout_until_ns: st.lockout_until.map(SimTime::as_nanos),
            keep_alives: self.tester.keep_alives().len(),
            gateway_mode: wb.gateway_mode(),
            poll_list: self.poll_specs(),
        }
    }

    /// Everything that happened since the last call, as stream events:
    /// new trace records, ECU state changes, the given samples, and a
    /// closing state snapshot.
    pub fn drain_events(&mut self, samples: &[Sample]) -> Vec<Value> {
        let mut out = Vec::new();
        if let Some(rec) = self.tester.link().recording() {
            for r in rec.since(self.cursor) {
                let mut v = record_json(r);
                v["type"] = json!("trace");
                out.push(v);
                self.cursor = r.seq + 1;
            }
        }
        for e in self.tester.link_mut().take_events() {
            let mut v = serde_json::to_value(e).expect("events serialize");
            v["type"] = json!("ecu");
            out.push(v);
        }
        for s in samples {
            let mut v = serde_json::to_value(s).expect("samples serialize");
            v["type"] = json!("sample");
            out.push(v);
        }
        let mut st = serde_json::to_value(self.state()).expect("state serializes");
        st["type"] = json!("state");
        out.push(st);
        out
    }
}

/// `"0x03"`, `"03"` or `3`.
pub fn parse_u8(v: &Value) -> Option<u8> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|n| u8::try_from(n).ok()),
        Value::String(s) => {
            let s = s.trim();
            let digits = s.trim_start_matches("0x").trim_start_matches("0X");
            u8::from_str_radix(digits, 16).ok()
        }
        _ => None,
    }
}

/// Name of an NRC code for messages.
pub fn nrc_text(code: u8) -> String {
    match Nrc::try_from(code) {
        Ok(n) => n.to_string(),
        Err(_) => format!("{code:#04X}"),
    }
}
