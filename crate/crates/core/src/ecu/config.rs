//! ECU configuration, loaded from JSON. See `docs/ecu-config.md`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canbus::{validate_id, CanError, CanId};
use crate::codec::services::{self, session, sid, SubRule};
use crate::codec::DtcCode;
use crate::hexnum;
use crate::signal::{Scaling, SignalModel};

use super::security::KeyFunction;

/// The configuration shipped with the crate.
pub const SHIPPED_CONFIG_JSON: &str = include_str!("../../configs/ecu_default.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("default session 0x01 must be supported")]
    MissingDefaultSession,
    #[error("session {0:#04x} is not a DiagnosticSessionControl value")]
    UnknownSession(u8),
    #[error("session {session:#04x} allows service {sid:#04x}, which is not in the service table")]
    UnknownService { session: u8, sid: u8 },
    #[error("session {session:#04x} lists sub-function {sub:#04x} not defined for {sid:#04x}")]
    UnknownSubFunction { session: u8, sid: u8, sub: u8 },
    #[error("security level {0:#04x} must be an odd requestSeed value")]
    BadSecurityLevel(u8),
    #[error("duplicate DID {0:#06x}")]
    DuplicateDid(u16),
    #[error("DID {0:#06x}: {1}")]
    BadDid(u16, &'static str),
    #[error("DTC {code} snapshot references unknown DID {did:#06x}")]
    SnapshotDid { code: DtcCode, did: u16 },
    #[error("DTC {code} snapshot value for {did:#06x} has wrong length")]
    SnapshotLength { code: DtcCode, did: u16 },
    #[error("diagnostic ids: {0}")]
    CanId(#[from] CanError),
    #[error("request and response ids must differ")]
    SameIds,
    #[error("{0} must be greater than zero")]
    Zero(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcuConfig {
    pub name: String,
    #[serde(with = "hexnum::u32")]
    pub request_id: u32,
    #[serde(with = "hexnum::u32")]
    pub response_id: u32,
    #[serde(default)]
    pub extended_ids: bool,
    pub sessions: Vec<SessionConfig>,
    #[serde(default)]
    pub security_levels: Vec<SecurityLevelConfig>,
    #[serde(default)]
    pub dids: Vec<DidConfig>,
    #[serde(default)]
    pub dtcs: Vec<DtcFixture>,
    /// Extra high-byte DTC families ClearDiagnosticInformation accepts.
    #[serde(default, with = "hexnum::vec_u8")]
    pub dtc_groups: Vec<u8>,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u8,
    #[serde(default)]
    pub gateway_mode: bool,
    #[serde(default)]
    pub rng_seed: u64,
    /// Advertised limit on DIDs per ReadDataByIdentifier request.
    #[serde(default = "default_max_dids")]
    pub max_dids_per_read: usize,
    /// Services whose handling takes longer than P2 and therefore answer
    /// with NRC 0x78 first.
    #[serde(default)]
    pub work_delays: Vec<WorkDelay>,
    /// Enables NRC 0x13 length validation. Only the conformance harness turns
    /// this off, to prove that it notices.
    #[serde(default = "yes")]
    pub length_check: bool,
}

fn default_max_attempts() -> u8 {
    3
}

fn default_max_dids() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub s3_ms: u64,
    pub p2_ms: u64,
    pub p2_star_ms: u64,
    pub lockout_delay_ms: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            s3_ms: 5000,
            p2_ms: 50,
            p2_star_ms: 5000,
            lockout_delay_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(with = "hexnum::u8")]
    pub id: u8,
    #[serde(default)]
    pub name: String,
    pub services: Vec<ServiceAccess>,
    /// Security level that must be unlocked to enter this session.
    #[serde(default, with = "hexnum::opt_u8", skip_serializing_if = "Option::is_none")]
    pub requires_level: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceAccess {
    #[serde(with = "hexnum::u8")]
    pub sid: u8,
    /// Sub-functions allowed in this session; `None` allows every one the
    /// ECU supports.
    #[serde(default, with = "hexnum::opt_vec_u8", skip_serializing_if = "Option::is_none")]
    pub subs: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityLevelConfig {
    /// Odd requestSeed sub-function; the matching sendKey is `level + 1`.
    #[serde(with = "hexnum::u8")]
    pub level: u8,
    #[serde(default)]
    pub key_fn: KeyFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidConfig {
    #[serde(with = "hexnum::u16")]
    pub did: u16,
    pub name: String,
    pub source: DidSource,
    #[serde(default)]
    pub writable: bool,
    /// Security level required for writes; `None` means no unlock needed.
    #[serde(default, with = "hexnum::opt_u8", skip_serializing_if = "Option::is_none")]
    pub write_level: Option<u8>,
    /// Captured into the snapshot when a fault is injected.
    #[serde(default)]
    pub snapshot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DidSource {
    Signal {
        model: SignalModel<f64>,
        scaling: Scaling<f64>,
    },
    /// Stored bytes, given as ASCII text or hex.
    Bytes {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ascii: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hex: Option<String>,
    },
}

impl DidConfig {
    /// Initial stored bytes for a `Bytes` source.
    pub fn initial_bytes(&self) -> Option<Vec<u8>> {
        match &self.source {
            DidSource::Bytes { ascii: Some(a), .. } => Some(a.as_bytes().to_vec()),
            DidSource::Bytes { hex: Some(h), .. } => crate::codec::from_hex(h).ok(),
            _ => None,
        }
    }

    /// Length of the data record in bytes.
    pub fn len(&self) -> usize {
        match &self.source {
            DidSource::Signal { scaling, .. } => scaling.width,
            DidSource::Bytes { .. } => self.initial_bytes().map_or(0, |b| b.len()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scaling(&self) -> Option<&Scaling<f64>> {
        match &self.source {
            DidSource::Signal { scaling, .. } => Some(scaling),
            DidSource::Bytes { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtcFixture {
    pub code: DtcCode,
    #[serde(with = "hexnum::u8")]
    pub status: u8,
    #[serde(default)]
    pub snapshot: Vec<SnapshotValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotValue {
    #[serde(with = "hexnum::u16")]
    pub did: u16,
    #[serde(with = "hexnum::bytes")]
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkDelay {
    #[serde(with = "hexnum::u8")]
    pub sid: u8,
    pub delay_ms: u64,
}

impl EcuConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: EcuConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_CONFIG_JSON).expect("shipped config is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let req = validate_id(self.request_id, self.extended_ids)?;
        let resp = validate_id(self.response_id, self.extended_ids)?;
        if req == resp {
            return Err(ConfigError::SameIds);
        }
        if self.session(session::DEFAULT).is_none() {
            return Err(ConfigError::MissingDefaultSession);
        }
        let session_spec = services::lookup(sid::DIAGNOSTIC_SESSION_CONTROL).expect("in table");
        for s in &self.sessions {
            if session_spec.sub_grammar(s.id).is_none() {
                return Err(ConfigError::UnknownSession(s.id));
            }
            for access in &s.services {
                let spec = services::lookup(access.sid).ok_or(ConfigError::UnknownService {
                    session: s.id,
                    sid: access.sid,
                })?;
                for &sub in access.subs.iter().flatten() {
                    if spec.sub_grammar(sub).is_none() {
                        return Err(ConfigError::UnknownSubFunction {
                            session: s.id,
                            sid: access.sid,
                            sub,
                        });
                    }
                }
            }
        }
        for l in &self.security_levels {
            if l.level % 2 == 0 || l.level > 0x7D {
                return Err(ConfigError::BadSecurityLevel(l.level));
            }
        }
        let mut seen = BTreeSet::new();
        for d in &self.dids {
            if !seen.insert(d.did) {
                return Err(ConfigError::DuplicateDid(d.did));
            }
            match &d.source {
                DidSource::Signal { scaling, .. } => {
                    if ![1, 2, 4].contains(&scaling.width) {
                        return Err(ConfigError::BadDid(d.did, "scaling width must be 1, 2 or 4"));
                    }
                    if scaling.factor == 0.0 {
                        return Err(ConfigError::BadDid(d.did, "scaling factor must be non-zero"));
                    }
                    if d.writable {
                        return Err(ConfigError::BadDid(d.did, "signal DIDs are read-only"));
                    }
                }
                DidSource::Bytes { .. } => {
                    if d.initial_bytes().is_none_or(|b| b.is_empty()) {
                        return Err(ConfigError::BadDid(d.did, "needs non-empty ascii or hex value"));
                    }
                }
            }
        }
        for f in &self.dtcs {
            for s in &f.snapshot {
                let did = self.did(s.did).ok_or(ConfigError::SnapshotDid {
                    code: f.code,
                    did: s.did,
                })?;
                if did.len() != s.value.len() {
                    return Err(ConfigError::SnapshotLength {
                        code: f.code,
                        did: s.did,
                    });
                }
            }
        }
        if self.timing.s3_ms == 0 {
            return Err(ConfigError::Zero("s3_ms"));
        }
        if self.timing.p2_ms == 0 {
            return Err(ConfigError::Zero("p2_ms"));
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::Zero("max_attempts"));
        }
        if self.max_dids_per_read == 0 {
            return Err(ConfigError::Zero("max_dids_per_read"));
        }
        Ok(())
    }

    pub fn request_can_id(&self) -> CanId {
        CanId::new(self.request_id, self.extended_ids).expect("validated")
    }

    pub fn response_can_id(&self) -> CanId {
        CanId::new(self.response_id, self.extended_ids).expect("validated")
    }

    pub fn session(&self, id: u8) -> Option<&SessionConfig> {
        self.sessions.iter().find(|s| s.id == id)
    }

    pub fn did(&self, did: u16) -> Option<&DidConfig> {
        self.dids.iter().find(|d| d.did == did)
    }

    pub fn security_level(&self, level: u8) -> Option<&SecurityLevelConfig> {
        self.security_levels.iter().find(|l| l.level == level)
    }

    /// Sub-functions of `sid` this ECU implements, regardless of session.
    pub fn supported_subs(&self, sid_value: u8) -> Vec<u8> {
        let Some(spec) = services::lookup(sid_value) else {
            return Vec::new();
        };
        match spec.sub_rule {
            SubRule::SeedKeyPairs => self
                .security_levels
                .iter()
                .flat_map(|l| [l.level, l.level + 1])
                .collect(),
            SubRule::Listed if sid_value == sid::DIAGNOSTIC_SESSION_CONTROL => {
                self.sessions.iter().map(|s| s.id).collect()
            }
            SubRule::Listed => spec.subs.iter().map(|s| s.value).collect(),
        }
    }

    /// Whether `sid` is allowed at all in `session`.
    pub fn service_allowed(&self, session: u8, sid_value: u8) -> bool {
        self.session(session)
            .is_some_and(|s| s.services.iter().any(|a| a.sid == sid_value))
    }

    /// Whether `sid` is allowed in some session.
    pub fn service_supported(&self, sid_value: u8) -> bool {
        self.sessions
            .iter()
            .any(|s| s.services.iter().any(|a| a.sid == sid_value))
    }

    /// Sub-functions of `sid` allowed in `session`.
    pub fn subs_in_session(&self, session: u8, sid_value: u8) -> Vec<u8> {
        let supported = self.supported_subs(sid_value);
        let Some(access) = self
            .session(session)
            .and_then(|s| s.services.iter().find(|a| a.sid == sid_value))
        else {
            return Vec::new();
        };
        match &access.subs {
            None => supported,
            Some(list) => supported.into_iter().filter(|v| list.contains(v)).collect(),
        }
    }

    pub fn work_delay_ms(&self, sid_value: u8) -> u64 {
        self.work_delays
            .iter()
            .find(|w| w.sid == sid_value)
            .map_or(0, |w| w.delay_ms)
    }

    /// High-byte DTC families known to ClearDiagnosticInformation.
    pub fn dtc_families(&self) -> BTreeSet<u8> {
        self.dtcs
            .iter()
            .map(|d| d.code.0[0])
            .chain(self.dtc_groups.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_loads() {
        let cfg = EcuConfig::shipped();
        assert_eq!(cfg.timing, Timing::default());
        assert_eq!(cfg.max_attempts, 3);
        assert!(cfg.length_check);
        assert!(!cfg.service_allowed(session::DEFAULT, sid::SECURITY_ACCESS));
        assert!(!cfg.service_allowed(session::DEFAULT, sid::WRITE_DATA_BY_IDENTIFIER));
        assert!(cfg.service_allowed(session::EXTENDED, sid::SECURITY_ACCESS));
        assert_eq!(cfg.did(0xF190).unwrap().len(), 17);
        // roundtrip through our own serialiser
        let again = EcuConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let base = EcuConfig::shipped();

        let mut c = base.clone();
        c.sessions.retain(|s| s.id != session::DEFAULT);
        assert!(matches!(c.validate(), Err(ConfigError::MissingDefaultSession)));

        let mut c = base.clone();
        c.sessions[0].services.push(ServiceAccess { sid: 0x31, subs: None });
        assert!(matches!(c.validate(), Err(ConfigError::UnknownService { sid: 0x31, .. })));

        let mut c = base.clone();
        c.dtcs[0].snapshot.push(SnapshotValue {
            did: 0x1234,
            value: vec![0],
        });
        assert!(matches!(c.validate(), Err(ConfigError::SnapshotDid { .. })));

        let mut c = base.clone();
        c.security_levels[0].level = 2;
        assert!(matches!(c.validate(), Err(ConfigError::BadSecurityLevel(2))));

        let mut c = base.clone();
        c.response_id = c.request_id;
        assert!(matches!(c.validate(), Err(ConfigError::SameIds)));

        let mut c = base;
        c.request_id = 0x800;
        assert!(matches!(c.validate(), Err(ConfigError::CanId(_))));
    }

    #[test]
    fn session_sub_functions() {
        let cfg = EcuConfig::shipped();
        assert_eq!(cfg.supported_subs(sid::SECURITY_ACCESS), vec![0x01, 0x02, 0x03, 0x04]);
        assert_eq!(
            cfg.subs_in_session(session::DEFAULT, sid::DIAGNOSTIC_SESSION_CONTROL),
            vec![0x01, 0x03]
        );
        assert_eq!(
            cfg.subs_in_session(session::EXTENDED, sid::DIAGNOSTIC_SESSION_CONTROL),
            vec![0x01, 0x02, 0x03]
        );
    }
}
