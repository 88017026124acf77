//! Alteration testing: every supported service, in the default and the
//! extended session, sent unmodified and with its length nibble, record
//! length, sub-function byte, suppress bit and DLC altered. Responses are
//! judged against an independent NRC oracle.

mod oracle;
mod runner;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canbus::{CanFrame, CanId};
use crate::codec::services::{self, session, sid};
use crate::codec::{to_hex, SPR_BIT};
use crate::ecu::EcuConfig;
use crate::isotp::{DEFAULT_PADDING, SF_MAX};

pub use oracle::{classify, expected_verdict, receiver_view, Expected};
pub use runner::{run, run_case, CaseResult, HarnessError, Report, SummaryRow};

/// Sessions the matrix covers.
pub const MATRIX_SESSIONS: [u8; 2] = [session::DEFAULT, session::EXTENDED];

/// Byte used to lengthen a service record.
pub const PAD_BYTE: u8 = 0x00;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    /// Single-frame PCI length nibble moved by `delta`.
    SfLengthNibble { delta: i8 },
    /// Service record truncated (negative) or padded (positive) by `delta`
    /// bytes before segmentation.
    ServiceLength { delta: i8 },
    /// Sub-function value replaced; the suppress bit is kept.
    SubFunctionValue { value: u8 },
    SprBit { set: bool },
    /// Frame DLC shortened to `dlc`, dropping the trailing bytes.
    Dlc { dlc: u8 },
}

impl Mutation {
    pub fn kind(&self) -> &'static str {
        match self {
            Mutation::SfLengthNibble { .. } => "sf_length",
            Mutation::ServiceLength { .. } => "service_length",
            Mutation::SubFunctionValue { .. } => "sub_function",
            Mutation::SprBit { .. } => "spr",
            Mutation::Dlc { .. } => "dlc",
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mutation::SfLengthNibble { delta } => write!(f, "sf_length{delta:+}"),
            Mutation::ServiceLength { delta } => write!(f, "service_length{delta:+}"),
            Mutation::SubFunctionValue { value } => write!(f, "sub_function={value:#04x}"),
            Mutation::SprBit { set } => write!(f, "spr={}", if *set { 1 } else { 0 }),
            Mutation::Dlc { dlc } => write!(f, "dlc={dlc}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: usize,
    #[serde(with = "crate::hexnum::u8")]
    pub service: u8,
    #[serde(with = "crate::hexnum::u8")]
    pub session: u8,
    /// The unmutated request, valid per the service table.
    #[serde(with = "crate::hexnum::bytes")]
    pub base: Vec<u8>,
    /// Applied in the order PDU edits, segmentation, frame edits; empty for
    /// controls.
    pub mutations: Vec<Mutation>,
}

impl TestCase {
    pub fn is_control(&self) -> bool {
        self.mutations.is_empty()
    }

    /// `control`, or the mutation kinds joined with `+`.
    pub fn kind(&self) -> String {
        if self.mutations.is_empty() {
            "control".into()
        } else {
            self.mutations.iter().map(Mutation::kind).collect::<Vec<_>>().join("+")
        }
    }

    pub fn label(&self) -> String {
        let muts: Vec<String> = self.mutations.iter().map(|m| m.to_string()).collect();
        format!(
            "#{} {:#04x} {} [{}]",
            self.id,
            self.service,
            session_name(self.session),
            if muts.is_empty() { "control".into() } else { muts.join(", ") }
        )
    }

    /// The request PDU after sub-function, suppress-bit and record-length
    /// edits.
    pub fn mutated_pdu(&self) -> Vec<u8> {
        let mut pdu = self.base.clone();
        for m in &self.mutations {
            match *m {
                Mutation::SubFunctionValue { value } => {
                    if let Some(b) = pdu.get_mut(1) {
                        *b = (*b & SPR_BIT) | (value & !SPR_BIT);
                    }
                }
                Mutation::SprBit { set } => {
                    if let Some(b) = pdu.get_mut(1) {
                        *b = if set { *b | SPR_BIT } else { *b & !SPR_BIT };
                    }
                }
                _ => {}
            }
        }
        for m in &self.mutations {
            if let Mutation::ServiceLength { delta } = *m {
                if delta > 0 {
                    pdu.extend(std::iter::repeat_n(PAD_BYTE, delta as usize));
                } else {
                    pdu.truncate(pdu.len().saturating_sub(delta.unsigned_abs() as usize));
                }
            }
        }
        pdu
    }

    /// Raw frame bytes and DLC as sent: a padded single frame with the
    /// frame-level edits applied.
    pub fn frame_bytes(&self) -> Vec<u8> {
        let pdu = self.mutated_pdu();
        let mut frame = vec![DEFAULT_PADDING; 8];
        frame[0] = pdu.len() as u8;
        frame[1..=pdu.len()].copy_from_slice(&pdu);
        for m in &self.mutations {
            match *m {
                Mutation::SfLengthNibble { delta } => {
                    frame[0] = (frame[0] as i16 + delta as i16).clamp(0, 0x0F) as u8;
                }
                Mutation::Dlc { dlc } => frame.truncate(dlc as usize),
                _ => {}
            }
        }
        frame
    }

    pub fn frames(&self, request_id: CanId) -> Vec<CanFrame> {
        vec![CanFrame::new(request_id, &self.frame_bytes()).expect("at most eight bytes")]
    }

    pub fn request_hex(&self) -> String {
        to_hex(&self.frame_bytes())
    }
}

pub fn session_name(id: u8) -> &'static str {
    match id {
        session::DEFAULT => "default",
        session::PROGRAMMING => "programming",
        session::EXTENDED => "extended",
        _ => "unknown",
    }
}

/// A request for `service` the shipped service table accepts, picked from
/// what the configuration offers. `None` if the ECU lacks what the service
/// needs (no DIDs, no security levels).
pub fn base_request(cfg: &EcuConfig, service: u8) -> Option<Vec<u8>> {
    match service {
        sid::DIAGNOSTIC_SESSION_CONTROL => Some(vec![service, session::EXTENDED]),
        sid::CLEAR_DIAGNOSTIC_INFORMATION => Some(vec![service, 0xFF, 0xFF, 0xFF]),
        sid::READ_DTC_INFORMATION => Some(vec![service, services::dtc_report::BY_STATUS_MASK, 0xFF]),
        sid::READ_DATA_BY_IDENTIFIER => {
            let did = cfg.dids.iter().min_by_key(|d| (d.len(), d.did))?;
            let mut pdu = vec![service];
            pdu.extend(did.did.to_be_bytes());
            Some(pdu)
        }
        sid::SECURITY_ACCESS => {
            let level = cfg.security_levels.iter().map(|l| l.level).min()?;
            Some(vec![service, level])
        }
        sid::WRITE_DATA_BY_IDENTIFIER => {
            let did = cfg
                .dids
                .iter()
                .filter(|d| d.writable)
                .min_by_key(|d| (d.write_level.is_some(), d.len(), d.did))?;
            let mut pdu = vec![service];
            pdu.extend(did.did.to_be_bytes());
            pdu.extend(std::iter::repeat_n(0x00, did.len()));
            (pdu.len() <= SF_MAX).then_some(pdu)
        }
        sid::TESTER_PRESENT => Some(vec![service, 0x00]),
        _ => None,
    }
}

/// The full alteration matrix for the sessions in [`MATRIX_SESSIONS`], in
/// a fixed order: service, session, then controls, length, DLC,
/// sub-function and suppress-bit cases.
pub fn generate_matrix(cfg: &EcuConfig) -> Vec<TestCase> {
    let mut cases = Vec::new();
    for spec in services::SERVICE_TABLE {
        if !cfg.service_supported(spec.sid) {
            continue;
        }
        let Some(base) = base_request(cfg, spec.sid) else { continue };
        for &sess in &MATRIX_SESSIONS {
            let mut push = |mutations: Vec<Mutation>| {
                cases.push(TestCase {
                    id: cases.len(),
                    service: spec.sid,
                    session: sess,
                    base: base.clone(),
                    mutations,
                })
            };
            let mut alterations: Vec<Mutation> = vec![
                Mutation::SfLengthNibble { delta: 1 },
                Mutation::SfLengthNibble { delta: -1 },
                Mutation::ServiceLength { delta: 1 },
                Mutation::ServiceLength { delta: -1 },
            ];
            alterations.extend((0..8).map(|dlc| Mutation::Dlc { dlc }));
            if spec.has_sub_function() {
                let valid = cfg.subs_in_session(sess, spec.sid);
                alterations.extend(
                    (0u8..0x80)
                        .filter(|v| *v != base[1] && !valid.contains(v))
                        .map(|value| Mutation::SubFunctionValue { value }),
                );
            }
            push(Vec::new());
            for m in &alterations {
                push(vec![*m]);
            }
            if spec.has_sub_function() {
                let spr = Mutation::SprBit { set: true };
                push(vec![spr]);
                for m in &alterations {
                    push(vec![*m, spr]);
                }
            }
        }
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn controls_are_fourteen() {
        let cfg = EcuConfig::shipped();
        let controls = generate_matrix(&cfg).into_iter().filter(|c| c.is_control()).count();
        assert_eq!(controls, 14);
    }

    #[test]
    fn no_sub_function_cases_for_read_did() {
        let cases = generate_matrix(&EcuConfig::shipped());
        let rdbi: Vec<&TestCase> = cases.iter().filter(|c| c.service == 0x22).collect();
        assert_eq!(rdbi.len(), 2 * 13);
        assert!(rdbi.iter().all(|c| c
            .mutations
            .iter()
            .all(|m| !matches!(m, Mutation::SprBit { .. } | Mutation::SubFunctionValue { .. }))));
    }

    #[test]
    fn frame_edits() {
        let case = TestCase {
            id: 0,
            service: 0x3E,
            session: 3,
            base: vec![0x3E, 0x00],
            mutations: vec![Mutation::ServiceLength { delta: 1 }, Mutation::SprBit { set: true }],
        };
        assert_eq!(case.frame_bytes(), vec![0x03, 0x3E, 0x80, 0x00, 0xAA, 0xAA, 0xAA, 0xAA]);
        let nib = TestCase {
            mutations: vec![Mutation::SfLengthNibble { delta: -1 }],
            ..case.clone()
        };
        assert_eq!(nib.frame_bytes()[0], 0x01);
        let dlc = TestCase {
            mutations: vec![Mutation::Dlc { dlc: 2 }],
            ..case
        };
        assert_eq!(dlc.frame_bytes(), vec![0x02, 0x3E]);
    }

    #[test]
    fn ids_are_positions() {
        let cases = generate_matrix(&EcuConfig::shipped());
        assert!(cases.iter().enumerate().all(|(i, c)| c.id == i));
    }
}
