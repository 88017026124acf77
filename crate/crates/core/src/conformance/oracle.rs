//! Expected outcome of a test case, derived from the frame bytes, the
//! service table and the ECU configuration. This does not call into the ECU
//! or the ISO-TP implementation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::services::{self, dtc_report, sid, Grammar, SubRule, SEED_LEN};
use crate::codec::{Nrc, SPR_BIT};
use crate::ecu::EcuConfig;

use super::TestCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Expected {
    Positive,
    Negative {
        #[serde(with = "crate::hexnum::u8")]
        nrc: u8,
    },
    /// No response frame within the P2 window.
    Silence,
}

impl fmt::Display for Expected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expected::Positive => f.write_str("positive"),
            Expected::Negative { nrc } => match Nrc::try_from(*nrc) {
                Ok(n) => write!(f, "NRC {:#04x} {}", nrc, n.name()),
                Err(_) => write!(f, "NRC {nrc:#04x}"),
            },
            Expected::Silence => f.write_str("silence"),
        }
    }
}

fn neg(nrc: Nrc) -> Expected {
    Expected::Negative { nrc: nrc.code() }
}

/// The PDU a conforming receiver extracts from one classic CAN frame, or
/// why it discards the frame.
pub fn receiver_view(frame: &[u8]) -> Result<Vec<u8>, &'static str> {
    let Some(&pci) = frame.first() else {
        return Err("transport discard: empty frame");
    };
    if pci >> 4 != 0 {
        return Err("transport discard: not a single frame");
    }
    let len = (pci & 0x0F) as usize;
    if len == 0 || len > 7 {
        return Err("transport discard: invalid single-frame length");
    }
    if frame.len() < 1 + len {
        return Err("transport discard: DLC shorter than declared length");
    }
    Ok(frame[1..=len].to_vec())
}

/// What a strict ECU must answer to `pdu` in `session`, starting from a
/// fresh state (nothing unlocked, no pending seed, no lockout).
pub fn classify(cfg: &EcuConfig, session: u8, pdu: &[u8]) -> Expected {
    let Some(&s) = pdu.first() else {
        return Expected::Silence;
    };
    let supported = services::lookup(s).is_some() && cfg.sessions.iter().any(|x| x.services.iter().any(|a| a.sid == s));
    if !supported {
        return neg(Nrc::ServiceNotSupported);
    }
    let spec = services::lookup(s).expect("checked above");
    let in_session = cfg
        .sessions
        .iter()
        .find(|x| x.id == session)
        .is_some_and(|x| x.services.iter().any(|a| a.sid == s));
    if !in_session {
        return neg(Nrc::ServiceNotSupportedInActiveSession);
    }

    let has_sub = !spec.subs.is_empty() || spec.sub_rule == SubRule::SeedKeyPairs;
    let (sub, spr, body) = if has_sub {
        let Some(&b) = pdu.get(1) else {
            return neg(Nrc::IncorrectMessageLengthOrInvalidFormat);
        };
        (Some(b & !SPR_BIT), b & SPR_BIT != 0, &pdu[2..])
    } else {
        (None, false, &pdu[1..])
    };

    let grammar = match sub {
        None => spec.grammar,
        Some(v) => {
            let implemented = cfg.supported_subs(s).contains(&v);
            let Some(g) = spec.sub_grammar(v).filter(|_| implemented) else {
                return neg(Nrc::SubFunctionNotSupported);
            };
            if !cfg.subs_in_session(session, s).contains(&v) {
                return neg(Nrc::SubFunctionNotSupportedInActiveSession);
            }
            g
        }
    };

    let length_ok = match grammar {
        Grammar::Exact(n) => body.len() == n,
        Grammar::Key => body.len() == SEED_LEN,
        Grammar::DidList => !body.is_empty() && body.len() % 2 == 0 && body.len() <= 2 * cfg.max_dids_per_read,
        Grammar::DidWrite => body.len() >= 3,
    };
    if !length_ok {
        return neg(Nrc::IncorrectMessageLengthOrInvalidFormat);
    }

    let outcome = semantic(cfg, s, sub.unwrap_or(0), body);
    match outcome {
        Expected::Positive if spr => Expected::Silence,
        other => other,
    }
}

fn semantic(cfg: &EcuConfig, s: u8, sub: u8, body: &[u8]) -> Expected {
    match s {
        sid::DIAGNOSTIC_SESSION_CONTROL => match cfg.sessions.iter().find(|x| x.id == sub) {
            Some(x) if x.requires_level.is_some() => neg(Nrc::SecurityAccessDenied),
            _ => Expected::Positive,
        },
        sid::SECURITY_ACCESS => {
            if sub % 2 == 1 {
                Expected::Positive
            } else {
                neg(Nrc::RequestSequenceError)
            }
        }
        sid::TESTER_PRESENT => Expected::Positive,
        sid::READ_DATA_BY_IDENTIFIER => {
            let any_known = body
                .chunks_exact(2)
                .any(|p| cfg.dids.iter().any(|d| d.did == u16::from_be_bytes([p[0], p[1]])));
            if any_known {
                Expected::Positive
            } else {
                neg(Nrc::RequestOutOfRange)
            }
        }
        sid::WRITE_DATA_BY_IDENTIFIER => {
            let did = u16::from_be_bytes([body[0], body[1]]);
            match cfg.dids.iter().find(|d| d.did == did && d.writable) {
                None => neg(Nrc::RequestOutOfRange),
                Some(d) if d.write_level.is_some() => neg(Nrc::SecurityAccessDenied),
                Some(d) if body.len() - 2 != d.len() => neg(Nrc::IncorrectMessageLengthOrInvalidFormat),
                Some(_) => Expected::Positive,
            }
        }
        sid::READ_DTC_INFORMATION => match sub {
            dtc_report::SNAPSHOT_BY_DTC_NUMBER => {
                let known = cfg.dtcs.iter().any(|d| d.code.0 == [body[0], body[1], body[2]]);
                if known && (body[3] == 0x01 || body[3] == 0xFF) {
                    Expected::Positive
                } else {
                    neg(Nrc::RequestOutOfRange)
                }
            }
            _ => Expected::Positive,
        },
        sid::CLEAR_DIAGNOSTIC_INFORMATION => {
            let all = body == [0xFF, 0xFF, 0xFF];
            let family = cfg.dtcs.iter().any(|d| d.code.0[0] == body[0]) || cfg.dtc_groups.contains(&body[0]);
            if all || family {
                Expected::Positive
            } else {
                neg(Nrc::RequestOutOfRange)
            }
        }
        _ => neg(Nrc::ServiceNotSupported),
    }
}

/// Expected outcome of `case` and, for silence, the reason.
pub fn expected_verdict(cfg: &EcuConfig, case: &TestCase) -> (Expected, Option<&'static str>) {
    match receiver_view(&case.frame_bytes()) {
        Err(reason) => (Expected::Silence, Some(reason)),
        Ok(pdu) => {
            let e = classify(cfg, case.session, &pdu);
            let reason = (e == Expected::Silence).then_some("positive response suppressed");
            (e, reason)
        }
    }
}
