//! UDS request/response PDUs.

mod dtc;
pub mod services;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dtc::{format_dtc, status as dtc_status, Dtc, DtcCode, DtcParseError, AVAILABILITY_MASK};
pub use services::{lookup, service_name, sid, Grammar, ServiceSpec, SERVICE_TABLE};

use services::POSITIVE_OFFSET;

/// Suppress-positive-response bit of the sub-function byte.
pub const SPR_BIT: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("sub-function value {0:#04x} exceeds 0x7F")]
    SubFunctionOutOfRange(u8),
    #[error("service {0:#04x} requires a sub-function")]
    MissingSubFunction(u8),
    #[error("service {0:#04x} has no sub-function")]
    UnexpectedSubFunction(u8),
    #[error("SID {0:#04x} is reserved")]
    ReservedSid(u8),
    #[error("response SID {got:#04x} does not answer request {expected:#04x}")]
    SidMismatch { expected: u8, got: u8 },
    #[error("unknown NRC {0:#04x}")]
    UnknownNrc(u8),
    #[error("truncated PDU")]
    TruncatedPdu,
    #[error("negative response longer than 3 bytes")]
    TrailingBytes,
    #[error("invalid hex: {0}")]
    InvalidHex(String),
}

/// A request service identifier. `0x7F` is reserved for negative responses.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ServiceId(u8);

impl ServiceId {
    pub fn new(sid: u8) -> Result<Self, CodecError> {
        if sid == sid::NEGATIVE_RESPONSE {
            Err(CodecError::ReservedSid(sid))
        } else {
            Ok(ServiceId(sid))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn response_sid(self) -> u8 {
        self.0.wrapping_add(POSITIVE_OFFSET)
    }

    pub fn name(self) -> &'static str {
        service_name(self.0)
    }
}

impl TryFrom<u8> for ServiceId {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ServiceId::new(v)
    }
}

impl From<ServiceId> for u8 {
    fn from(s: ServiceId) -> u8 {
        s.0
    }
}

impl fmt::Debug for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({:#04x})", self.name(), self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubFunction {
    pub value: u8,
    pub suppress_positive_response: bool,
}

impl SubFunction {
    pub fn new(value: u8, suppress: bool) -> Self {
        SubFunction {
            value,
            suppress_positive_response: suppress,
        }
    }

    pub fn from_wire(byte: u8) -> Self {
        SubFunction {
            value: byte & !SPR_BIT,
            suppress_positive_response: byte & SPR_BIT != 0,
        }
    }

    pub fn to_wire(self) -> Result<u8, CodecError> {
        if self.value > 0x7F {
            return Err(CodecError::SubFunctionOutOfRange(self.value));
        }
        Ok(self.value | if self.suppress_positive_response { SPR_BIT } else { 0 })
    }
}

/// Negative response codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum Nrc {
    GeneralReject = 0x10,
    ServiceNotSupported = 0x11,
    SubFunctionNotSupported = 0x12,
    IncorrectMessageLengthOrInvalidFormat = 0x13,
    ConditionsNotCorrect = 0x22,
    RequestSequenceError = 0x24,
    RequestOutOfRange = 0x31,
    SecurityAccessDenied = 0x33,
    InvalidKey = 0x35,
    ExceededNumberOfAttempts = 0x36,
    RequiredTimeDelayNotExpired = 0x37,
    ResponsePending = 0x78,
    SubFunctionNotSupportedInActiveSession = 0x7E,
    ServiceNotSupportedInActiveSession = 0x7F,
}

impl Nrc {
    pub const ALL: [Nrc; 14] = [
        Nrc::GeneralReject,
        Nrc::ServiceNotSupported,
        Nrc::SubFunctionNotSupported,
        Nrc::IncorrectMessageLengthOrInvalidFormat,
        Nrc::ConditionsNotCorrect,
        Nrc::RequestSequenceError,
        Nrc::RequestOutOfRange,
        Nrc::SecurityAccessDenied,
        Nrc::InvalidKey,
        Nrc::ExceededNumberOfAttempts,
        Nrc::RequiredTimeDelayNotExpired,
        Nrc::ResponsePending,
        Nrc::SubFunctionNotSupportedInActiveSession,
        Nrc::ServiceNotSupportedInActiveSession,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Nrc::GeneralReject => "generalReject",
            Nrc::ServiceNotSupported => "serviceNotSupported",
            Nrc::SubFunctionNotSupported => "subFunctionNotSupported",
            Nrc::IncorrectMessageLengthOrInvalidFormat => "incorrectMessageLengthOrInvalidFormat",
            Nrc::ConditionsNotCorrect => "conditionsNotCorrect",
            Nrc::RequestSequenceError => "requestSequenceError",
            Nrc::RequestOutOfRange => "requestOutOfRange",
            Nrc::SecurityAccessDenied => "securityAccessDenied",
            Nrc::InvalidKey => "invalidKey",
            Nrc::ExceededNumberOfAttempts => "exceededNumberOfAttempts",
            Nrc::RequiredTimeDelayNotExpired => "requiredTimeDelayNotExpired",
            Nrc::ResponsePending => "requestCorrectlyReceivedResponsePending",
            Nrc::SubFunctionNotSupportedInActiveSession => "subFunctionNotSupportedInActiveSession",
            Nrc::ServiceNotSupportedInActiveSession => "serviceNotSupportedInActiveSession",
        }
    }
}

impl TryFrom<u8> for Nrc {
    type Error = CodecError;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Nrc::ALL
            .into_iter()
            .find(|n| n.code() == code)
            .ok_or(CodecError::UnknownNrc(code))
    }
}

impl From<Nrc> for u8 {
    fn from(n: Nrc) -> u8 {
        n.code()
    }
}

impl fmt::Display for Nrc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#04X} {}", self.code(), self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Request {
    pub sid: ServiceId,
    pub sub: Option<SubFunction>,
    pub data: Vec<u8>,
}

impl Request {
    pub fn new(sid: u8, sub: Option<SubFunction>, data: impl Into<Vec<u8>>) -> Result<Self, CodecError> {
        let sid = ServiceId::new(sid)?;
        match (services::has_sub_function(sid.value()), sub) {
            (true, None) => return Err(CodecError::MissingSubFunction(sid.value())),
            (false, Some(_)) => return Err(CodecError::UnexpectedSubFunction(sid.value())),
            (_, Some(s)) if s.value > 0x7F => return Err(CodecError::SubFunctionOutOfRange(s.value)),
            _ => {}
        }
        Ok(Request {
            sid,
            sub,
            data: data.into(),
        })
    }

    fn known(sid: u8, sub: Option<SubFunction>, data: Vec<u8>) -> Self {
        Request::new(sid, sub, data).expect("built from the service table")
    }

    pub fn session_control(session: u8, suppress: bool) -> Self {
        Self::known(
            sid::DIAGNOSTIC_SESSION_CONTROL,
            Some(SubFunction::new(session, suppress)),
            vec![],
        )
    }

    pub fn tester_present(suppress: bool) -> Self {
        Self::known(sid::TESTER_PRESENT, Some(SubFunction::new(0, suppress)), vec![])
    }

    pub fn read_dids(dids: &[u16]) -> Self {
        let data = dids.iter().flat_map(|d| d.to_be_bytes()).collect();
        Self::known(sid::READ_DATA_BY_IDENTIFIER, None, data)
    }

    pub fn write_did(did: u16, value: &[u8]) -> Self {
        let mut data = did.to_be_bytes().to_vec();
        data.extend_from_slice(value);
        Self::known(sid::WRITE_DATA_BY_IDENTIFIER, None, data)
    }

    /// `level` is the odd requestSeed sub-function value.
    pub fn request_seed(level: u8) -> Self {
        Self::known(sid::SECURITY_ACCESS, Some(SubFunction::new(level, false)), vec![])
    }

    pub fn send_key(level: u8, key: &[u8]) -> Self {
        Self::known(
            sid::SECURITY_ACCESS,
            Some(SubFunction::new(level + 1, false)),
            key.to_vec(),
        )
    }

    pub fn read_dtc_by_status(mask: u8) -> Self {
        Self::known(
            sid::READ_DTC_INFORMATION,
            Some(SubFunction::new(services::dtc_report::BY_STATUS_MASK, false)),
            vec![mask],
        )
    }

    pub fn read_dtc_snapshot(code: DtcCode, record: u8) -> Self {
        let mut data = code.bytes().to_vec();
        data.push(record);
        Self::known(
            sid::READ_DTC_INFORMATION,
            Some(SubFunction::new(services::dtc_report::SNAPSHOT_BY_DTC_NUMBER, false)),
            data,
        )
    }

    pub fn read_supported_dtcs() -> Self {
        Self::known(
            sid::READ_DTC_INFORMATION,
            Some(SubFunction::new(services::dtc_report::SUPPORTED_DTC, false)),
            vec![],
        )
    }

    pub fn clear_dtc(group: [u8; 3]) -> Self {
        Self::known(sid::CLEAR_DIAGNOSTIC_INFORMATION, None, group.to_vec())
    }

    pub fn suppress_positive_response(&self) -> bool {
        self.sub.is_some_and(|s| s.suppress_positive_response)
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        encode_request(self)
    }
}

/// `[sid] ++ [sub wire byte]? ++ data`
pub fn encode_request(r: &Request) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(2 + r.data.len());
    out.push(r.sid.value());
    if let Some(sub) = r.sub {
        out.push(sub.to_wire()?);
    }
    out.extend_from_slice(&r.data);
    Ok(out)
}

/// Inverse of [`encode_request`]; the service table decides whether the
/// second byte is a sub-function.
pub fn decode_request(bytes: &[u8]) -> Result<Request, CodecError> {
    let (&first, rest) = bytes.split_first().ok_or(CodecError::TruncatedPdu)?;
    let sid = ServiceId::new(first)?;
    if services::has_sub_function(first) {
        let (&sub, data) = rest.split_first().ok_or(CodecError::TruncatedPdu)?;
        Ok(Request {
            sid,
            sub: Some(SubFunction::from_wire(sub)),
            data: data.to_vec(),
        })
    } else {
        Ok(Request {
            sid,
            sub: None,
            data: rest.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Positive { sid: ServiceId, data: Vec<u8> },
    Negative { request_sid: u8, nrc: Nrc },
}

impl Response {
    pub fn positive(sid: ServiceId, data: impl Into<Vec<u8>>) -> Self {
        Response::Positive {
            sid,
            data: data.into(),
        }
    }

    pub fn negative(request_sid: u8, nrc: Nrc) -> Self {
        Response::Negative { request_sid, nrc }
    }

    pub fn is_positive(&self) -> bool {
        matches!(self, Response::Positive { .. })
    }

    pub fn nrc(&self) -> Option<Nrc> {
        match self {
            Response::Negative { nrc, .. } => Some(*nrc),
            Response::Positive { .. } => None,
        }
    }

    pub fn request_sid(&self) -> u8 {
        match self {
            Response::Positive { sid, .. } => sid.value(),
            Response::Negative { request_sid, .. } => *request_sid,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Response::Positive { sid, data } => {
                let mut out = Vec::with_capacity(1 + data.len());
                out.push(sid.response_sid());
                out.extend_from_slice(data);
                out
            }
            Response::Negative { request_sid, nrc } => {
                vec![sid::NEGATIVE_RESPONSE, *request_sid, nrc.code()]
            }
        }
    }
}

pub fn decode_response(bytes: &[u8], expected_sid: u8) -> Result<Response, CodecError> {
    let (&first, rest) = bytes.split_first().ok_or(CodecError::TruncatedPdu)?;
    if first == sid::NEGATIVE_RESPONSE {
        match rest {
            [req, nrc] => {
                if *req != expected_sid {
                    return Err(CodecError::SidMismatch {
                        expected: expected_sid,
                        got: *req,
                    });
                }
                Ok(Response::Negative {
                    request_sid: *req,
                    nrc: Nrc::try_from(*nrc)?,
                })
            }
            [_, _, _, ..] => Err(CodecError::TrailingBytes),
            _ => Err(CodecError::TruncatedPdu),
        }
    } else {
        let sid = ServiceId::new(expected_sid)?;
        if first != sid.response_sid() {
            return Err(CodecError::SidMismatch {
                expected: expected_sid,
                got: first.wrapping_sub(POSITIVE_OFFSET),
            });
        }
        Ok(Response::Positive {
            sid,
            data: rest.to_vec(),
        })
    }
}

pub fn is_response_pending(resp: &Response) -> bool {
    resp.nrc() == Some(Nrc::ResponsePending)
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses hex with optional whitespace, `0x` prefixes or `:` separators.
pub fn from_hex(s: &str) -> Result<Vec<u8>, CodecError> {
    let cleaned: String = s
        .split(|c: char| c.is_whitespace() || c == ':' || c == ',')
        .map(|t| t.trim_start_matches("0x").trim_start_matches("0X"))
        .collect();
    if !cleaned.len().is_multiple_of(2) || !cleaned.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(CodecError::InvalidHex(s.to_string()));
    }
    (0..cleaned.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&cleaned[i..i + 2], 16).map_err(|_| CodecError::InvalidHex(s.to_string())))
        .collect()
}

/// One-line human description of a request PDU, used by trace exports and
/// the service API.
pub fn describe_request(bytes: &[u8]) -> String {
    let Some(&first) = bytes.first() else {
        return "empty request".into();
    };
    let name = service_name(first);
    let spec = lookup(first);
    match (spec, bytes.get(1)) {
        (Some(spec), Some(&b)) if spec.has_sub_function() => {
            let sub = SubFunction::from_wire(b);
            let sub_name = spec.sub_name(sub.value).unwrap_or("unknown");
            let spr = if sub.suppress_positive_response { " spr" } else { "" };
            let rest = &bytes[2..];
            if rest.is_empty() {
                format!("{name} {sub_name}({:#04x}){spr}", sub.value)
            } else {
                format!("{name} {sub_name}({:#04x}){spr} {}", sub.value, to_hex(rest))
            }
        }
        _ if bytes.len() > 1 => format!("{name} {}", to_hex(&bytes[1..])),
        _ => name.to_string(),
    }
}

/// One-line human description of a response PDU.
pub fn describe_response(bytes: &[u8]) -> String {
    let Some(&first) = bytes.first() else {
        return "empty response".into();
    };
    if first == sid::NEGATIVE_RESPONSE {
        return match (bytes.get(1), bytes.get(2)) {
            (Some(&req), Some(&code)) => match Nrc::try_from(code) {
                Ok(nrc) => format!("{} NRC {nrc}", service_name(req)),
                Err(_) => format!("{} NRC {code:#04X}", service_name(req)),
            },
            _ => "malformed negative response".into(),
        };
    }
    let req = first.wrapping_sub(POSITIVE_OFFSET);
    let name = service_name(req);
    let data = &bytes[1..];
    if req == sid::READ_DTC_INFORMATION {
        if let Some(dtcs) = parse_dtc_list(data) {
            let list: Vec<String> = dtcs
                .iter()
                .map(|d| format!("{}({:#04x})", format_dtc(d), d.status))
                .collect();
            return if list.is_empty() {
                format!("{name} ok: no DTCs")
            } else {
                format!("{name} ok: {}", list.join(" "))
            };
        }
    }
    format!("{name} ok")
}

/// Parses the record of a positive reportDTCByStatusMask/reportSupportedDTC
/// response (sub-function, availability mask, then 4-byte DTC+status
/// entries).
pub fn parse_dtc_list(data: &[u8]) -> Option<Vec<Dtc>> {
    let (&sub, rest) = data.split_first()?;
    if sub != services::dtc_report::BY_STATUS_MASK && sub != services::dtc_report::SUPPORTED_DTC {
        return None;
    }
    let (_, entries) = rest.split_first()?;
    if entries.len() % 4 != 0 {
        return None;
    }
    Some(
        entries
            .chunks_exact(4)
            .map(|c| Dtc::new([c[0], c[1], c[2]], c[3]))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn request_wire_examples() {
        assert_eq!(
            Request::session_control(0x03, true).encode().unwrap(),
            vec![0x10, 0x83]
        );
        assert_eq!(Request::tester_present(false).encode().unwrap(), vec![0x3E, 0x00]);
        assert_eq!(Request::read_dids(&[0xF190]).encode().unwrap(), vec![0x22, 0xF1, 0x90]);
        assert_eq!(
            Request::clear_dtc([0xFF; 3]).encode().unwrap(),
            vec![0x14, 0xFF, 0xFF, 0xFF]
        );
    }

    #[test]
    fn sub_function_range() {
        let r = Request {
            sid: ServiceId::new(0x10).unwrap(),
            sub: Some(SubFunction::new(0x80, false)),
            data: vec![],
        };
        assert_eq!(encode_request(&r), Err(CodecError::SubFunctionOutOfRange(0x80)));
        assert_eq!(
            Request::new(0x10, Some(SubFunction::new(0x90, false)), vec![]),
            Err(CodecError::SubFunctionOutOfRange(0x90))
        );
        assert_eq!(Request::new(0x10, None, vec![]), Err(CodecError::MissingSubFunction(0x10)));
        assert_eq!(
            Request::new(0x22, Some(SubFunction::new(1, false)), vec![]),
            Err(CodecError::UnexpectedSubFunction(0x22))
        );
        assert_eq!(ServiceId::new(0x7F), Err(CodecError::ReservedSid(0x7F)));
    }

    #[test]
    fn decode_response_examples() {
        assert_eq!(
            decode_response(&[0x7F, 0x27, 0x35], 0x27),
            Ok(Response::negative(0x27, Nrc::InvalidKey))
        );
        assert_eq!(
            decode_response(&[0x50, 0x03, 0x00, 0x32, 0x01, 0xF4], 0x10),
            Ok(Response::positive(
                ServiceId::new(0x10).unwrap(),
                vec![0x03, 0x00, 0x32, 0x01, 0xF4]
            ))
        );
        assert_eq!(decode_response(&[0x7F, 0x27], 0x27), Err(CodecError::TruncatedPdu));
        assert_eq!(decode_response(&[], 0x27), Err(CodecError::TruncatedPdu));
        assert_eq!(
            decode_response(&[0x7F, 0x27, 0x99], 0x27),
            Err(CodecError::UnknownNrc(0x99))
        );
        assert_eq!(
            decode_response(&[0x7F, 0x22, 0x31], 0x27),
            Err(CodecError::SidMismatch {
                expected: 0x27,
                got: 0x22
            })
        );
        assert!(matches!(
            decode_response(&[0x62, 0xF1], 0x27),
            Err(CodecError::SidMismatch { .. })
        ));
        assert_eq!(decode_response(&[0x7F, 0x27, 0x35, 0], 0x27), Err(CodecError::TrailingBytes));
    }

    #[test]
    fn response_pending() {
        assert!(is_response_pending(&Response::negative(0x14, Nrc::ResponsePending)));
        assert!(!is_response_pending(&Response::negative(
            0x14,
            Nrc::IncorrectMessageLengthOrInvalidFormat
        )));
        assert!(!is_response_pending(&Response::positive(
            ServiceId::new(0x14).unwrap(),
            vec![]
        )));
    }

    #[test]
    fn nrc_set_is_closed() {
        let codes: Vec<u8> = Nrc::ALL.iter().map(|n| n.code()).collect();
        assert_eq!(
            codes,
            vec![0x10, 0x11, 0x12, 0x13, 0x22, 0x24, 0x31, 0x33, 0x35, 0x36, 0x37, 0x78, 0x7E, 0x7F]
        );
        for b in 0..=255u8 {
            assert_eq!(Nrc::try_from(b).is_ok(), codes.contains(&b));
        }
    }

    #[test]
    fn hex_helpers() {
        assert_eq!(from_hex("3E 00").unwrap(), vec![0x3E, 0x00]);
        assert_eq!(from_hex("0x22,0xF1,0x90").unwrap(), vec![0x22, 0xF1, 0x90]);
        assert!(from_hex("3E0").is_err());
        assert!(from_hex("zz").is_err());
        assert_eq!(to_hex(&[0x7E, 0x00]), "7e00");
    }

    #[test]
    fn descriptions() {
        assert_eq!(describe_request(&[0x3E, 0x80]), "TesterPresent zeroSubFunction(0x00) spr");
        assert_eq!(describe_request(&[0x22, 0xF1, 0x90]), "ReadDataByIdentifier f190");
        assert_eq!(describe_response(&[0x7E, 0x00]), "TesterPresent ok");
        assert_eq!(
            describe_response(&[0x7F, 0x27, 0x7F]),
            "SecurityAccess NRC 0x7F serviceNotSupportedInActiveSession"
        );
        assert_eq!(
            describe_response(&[0x59, 0x02, 0x09, 0x01, 0x23, 0x45, 0x09]),
            "ReadDTCInformation ok: P0123-45(0x09)"
        );
    }

    fn arb_request() -> impl Strategy<Value = Request> {
        let sids: Vec<u8> = SERVICE_TABLE.iter().map(|s| s.sid).collect();
        (
            proptest::sample::select(sids),
            0u8..=0x7F,
            any::<bool>(),
            proptest::collection::vec(any::<u8>(), 0..64),
        )
            .prop_map(|(sid, v, spr, data)| {
                let sub = services::has_sub_function(sid).then(|| SubFunction::new(v, spr));
                Request::new(sid, sub, data).unwrap()
            })
    }

    proptest! {
        #[test]
        fn request_roundtrip(r in arb_request()) {
            let wire = encode_request(&r).unwrap();
            prop_assert_eq!(decode_request(&wire).unwrap(), r.clone());
            if r.sub.is_some() {
                prop_assert_eq!(wire[1] & SPR_BIT != 0, r.suppress_positive_response());
            }
        }

        #[test]
        fn positive_and_negative_wire_forms_are_disjoint(
            sid in (0u8..=0xFF).prop_filter("reserved", |s| *s != 0x7F && s.wrapping_add(0x40) != 0x7F),
            data in proptest::collection::vec(any::<u8>(), 0..8),
            nrc in proptest::sample::select(Nrc::ALL.to_vec()),
        ) {
            let pos = Response::positive(ServiceId::new(sid).unwrap(), data).encode();
            prop_assert_ne!(pos[0], 0x7F);
            prop_assert!(decode_response(&pos, sid).unwrap().is_positive());
            let neg = Response::negative(sid, nrc).encode();
            prop_assert_eq!(decode_response(&neg, sid).unwrap(), Response::negative(sid, nrc));
        }
    }
}
