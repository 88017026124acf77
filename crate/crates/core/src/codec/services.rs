//! Static service table: which services exist, which carry a sub-function,
//! and how long their request records are. The ECU, the tester and the
//! conformance oracle all read from here.

pub mod sid {
    pub const DIAGNOSTIC_SESSION_CONTROL: u8 = 0x10;
    pub const CLEAR_DIAGNOSTIC_INFORMATION: u8 = 0x14;
    pub const READ_DTC_INFORMATION: u8 = 0x19;
    pub const READ_DATA_BY_IDENTIFIER: u8 = 0x22;
    pub const SECURITY_ACCESS: u8 = 0x27;
    pub const WRITE_DATA_BY_IDENTIFIER: u8 = 0x2E;
    pub const TESTER_PRESENT: u8 = 0x3E;
    pub const NEGATIVE_RESPONSE: u8 = 0x7F;
}

pub mod session {
    pub const DEFAULT: u8 = 0x01;
    pub const PROGRAMMING: u8 = 0x02;
    pub const EXTENDED: u8 = 0x03;
}

pub mod dtc_report {
    pub const BY_STATUS_MASK: u8 = 0x02;
    pub const SNAPSHOT_BY_DTC_NUMBER: u8 = 0x04;
    pub const SUPPORTED_DTC: u8 = 0x0A;
}

/// Offset between a request SID and its positive response SID.
pub const POSITIVE_OFFSET: u8 = 0x40;
/// Group-of-DTC value meaning "all groups".
pub const ALL_DTC_GROUPS: [u8; 3] = [0xFF, 0xFF, 0xFF];
/// Length of the SecurityAccess seed and key records.
pub const SEED_LEN: usize = 4;

/// Shape of the bytes that follow the SID (and sub-function, if any).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grammar {
    Exact(usize),
    /// One or more 16-bit DIDs.
    DidList,
    /// A 16-bit DID followed by exactly that DID's record length.
    DidWrite,
    /// A key record of [`SEED_LEN`] bytes.
    Key,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubFunctionSpec {
    pub value: u8,
    pub name: &'static str,
    pub grammar: Grammar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServiceSpec {
    pub sid: u8,
    pub name: &'static str,
    /// Empty for services without a sub-function byte.
    pub subs: &'static [SubFunctionSpec],
    /// Grammar of services without a sub-function.
    pub grammar: Grammar,
    /// SecurityAccess sub-functions are a range, not a list.
    pub sub_rule: SubRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubRule {
    Listed,
    /// Odd values request a seed, even values send a key.
    SeedKeyPairs,
}

impl ServiceSpec {
    pub fn has_sub_function(&self) -> bool {
        !self.subs.is_empty() || self.sub_rule == SubRule::SeedKeyPairs
    }

    /// The grammar that applies after the sub-function byte, if `value` is
    /// defined for this service.
    pub fn sub_grammar(&self, value: u8) -> Option<Grammar> {
        match self.sub_rule {
            SubRule::SeedKeyPairs => match value {
                0x01..=0x7E if value % 2 == 1 => Some(Grammar::Exact(0)),
                0x02..=0x7E => Some(Grammar::Key),
                _ => None,
            },
            SubRule::Listed => self.subs.iter().find(|s| s.value == value).map(|s| s.grammar),
        }
    }

    pub fn sub_name(&self, value: u8) -> Option<&'static str> {
        match self.sub_rule {
            SubRule::SeedKeyPairs => self.sub_grammar(value).map(|g| match g {
                Grammar::Key => "sendKey",
                _ => "requestSeed",
            }),
            SubRule::Listed => self.subs.iter().find(|s| s.value == value).map(|s| s.name),
        }
    }
}

const NO_SUBS: &[SubFunctionSpec] = &[];

pub static SERVICE_TABLE: &[ServiceSpec] = &[
    ServiceSpec {
        sid: sid::DIAGNOSTIC_SESSION_CONTROL,
        name: "DiagnosticSessionControl",
        subs: &[
            SubFunctionSpec {
                value: session::DEFAULT,
                name: "defaultSession",
                grammar: Grammar::Exact(0),
            },
            SubFunctionSpec {
                value: session::PROGRAMMING,
                name: "programmingSession",
                grammar: Grammar::Exact(0),
            },
            SubFunctionSpec {
                value: session::EXTENDED,
                name: "extendedDiagnosticSession",
                grammar: Grammar::Exact(0),
            },
        ],
        grammar: Grammar::Exact(0),
        sub_rule: SubRule::Listed,
    },
    ServiceSpec {
        sid: sid::CLEAR_DIAGNOSTIC_INFORMATION,
        name: "ClearDiagnosticInformation",
        subs: NO_SUBS,
        grammar: Grammar::Exact(3),
        sub_rule: SubRule::Listed,
    },
    ServiceSpec {
        sid: sid::READ_DTC_INFORMATION,
        name: "ReadDTCInformation",
        subs: &[
            SubFunctionSpec {
                value: dtc_report::BY_STATUS_MASK,
                name: "reportDTCByStatusMask",
                grammar: Grammar::Exact(1),
            },
            SubFunctionSpec {
                value: dtc_report::SNAPSHOT_BY_DTC_NUMBER,
                name: "reportDTCSnapshotRecordByDTCNumber",
                grammar: Grammar::Exact(4),
            },
            SubFunctionSpec {
                value: dtc_report::SUPPORTED_DTC,
                name: "reportSupportedDTC",
                grammar: Grammar::Exact(0),
            },
        ],
        grammar: Grammar::Exact(0),
        sub_rule: SubRule::Listed,
    },
    ServiceSpec {
        sid: sid::READ_DATA_BY_IDENTIFIER,
        name: "ReadDataByIdentifier",
        subs: NO_SUBS,
        grammar: Grammar::DidList,
        sub_rule: SubRule::Listed,
    },
    ServiceSpec {
        sid: sid::SECURITY_ACCESS,
        name: "SecurityAccess",
        subs: NO_SUBS,
        grammar: Grammar::Exact(0),
        sub_rule: SubRule::SeedKeyPairs,
    },
    ServiceSpec {
        sid: sid::WRITE_DATA_BY_IDENTIFIER,
        name: "WriteDataByIdentifier",
        subs: NO_SUBS,
        grammar: Grammar::DidWrite,
        sub_rule: SubRule::Listed,
    },
    ServiceSpec {
        sid: sid::TESTER_PRESENT,
        name: "TesterPresent",
        subs: &[SubFunctionSpec {
            value: 0x00,
            name: "zeroSubFunction",
            grammar: Grammar::Exact(0),
        }],
        grammar: Grammar::Exact(0),
        sub_rule: SubRule::Listed,
    },
];

pub fn lookup(sid: u8) -> Option<&'static ServiceSpec> {
    SERVICE_TABLE.iter().find(|s| s.sid == sid)
}

pub fn service_name(sid: u8) -> &'static str {
    lookup(sid).map_or("UnknownService", |s| s.name)
}

/// Whether requests with this SID carry a sub-function byte. Unknown
/// services are treated as sub-function-less.
pub fn has_sub_function(sid: u8) -> bool {
    lookup(sid).is_some_and(ServiceSpec::has_sub_function)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shape() {
        assert_eq!(SERVICE_TABLE.len(), 7);
        let with_sub: Vec<u8> = SERVICE_TABLE
            .iter()
            .filter(|s| s.has_sub_function())
            .map(|s| s.sid)
            .collect();
        assert_eq!(with_sub, vec![0x10, 0x19, 0x27, 0x3E]);
        assert!(!has_sub_function(0x22));
        assert!(!has_sub_function(0x99));
    }

    #[test]
    fn security_access_sub_rule() {
        let sa = lookup(sid::SECURITY_ACCESS).unwrap();
        assert_eq!(sa.sub_grammar(0x01), Some(Grammar::Exact(0)));
        assert_eq!(sa.sub_grammar(0x02), Some(Grammar::Key));
        assert_eq!(sa.sub_grammar(0x00), None);
        assert_eq!(sa.sub_grammar(0x7F), None);
        assert_eq!(sa.sub_name(0x03), Some("requestSeed"));
    }
}
