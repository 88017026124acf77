use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub mod status {
    pub const TEST_FAILED: u8 = 0x01;
    pub const PENDING: u8 = 0x04;
    pub const CONFIRMED: u8 = 0x08;
}

/// Status bits this implementation tracks, reported as the availability mask.
pub const AVAILABILITY_MASK: u8 = status::TEST_FAILED | status::CONFIRMED;

/// The 3-byte identifier of a diagnostic trouble code.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DtcCode(pub [u8; 3]);

impl DtcCode {
    pub fn bytes(&self) -> [u8; 3] {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid DTC {0:?}, expected e.g. P0123-45")]
pub struct DtcParseError(pub String);

impl fmt::Display for DtcCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [b0, b1, b2] = self.0;
        let letter = ['P', 'C', 'B', 'U'][(b0 >> 6) as usize];
        let number = (((b0 & 0x3F) as u16) << 8) | b1 as u16;
        write!(f, "{letter}{number:04X}-{b2:02X}")
    }
}

impl fmt::Debug for DtcCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DtcCode({self})")
    }
}

impl FromStr for DtcCode {
    type Err = DtcParseError;

    /// Parses the display form (`P0123-45`) or six hex digits (`012345`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DtcParseError(s.to_string());
        let s = s.trim();
        if s.len() == 6 && s.bytes().all(|b| b.is_ascii_hexdigit()) {
            let v = u32::from_str_radix(s, 16).map_err(|_| err())?;
            return Ok(DtcCode([(v >> 16) as u8, (v >> 8) as u8, v as u8]));
        }
        let (head, tail) = s.split_once('-').ok_or_else(err)?;
        if head.len() != 5 || tail.len() != 2 {
            return Err(err());
        }
        let top = match head.as_bytes()[0].to_ascii_uppercase() {
            b'P' => 0u8,
            b'C' => 1,
            b'B' => 2,
            b'U' => 3,
            _ => return Err(err()),
        };
        let number = u16::from_str_radix(&head[1..], 16).map_err(|_| err())?;
        if number > 0x3FFF {
            return Err(err());
        }
        let b2 = u8::from_str_radix(tail, 16).map_err(|_| err())?;
        Ok(DtcCode([(top << 6) | (number >> 8) as u8, number as u8, b2]))
    }
}

impl Serialize for DtcCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DtcCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A trouble code with its status byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dtc {
    pub code: DtcCode,
    pub status: u8,
}

impl Dtc {
    pub fn new(raw: [u8; 3], status: u8) -> Self {
        Dtc {
            code: DtcCode(raw),
            status,
        }
    }

    pub fn raw(&self) -> [u8; 3] {
        self.code.0
    }
}

/// Display form: category letter from the top two bits, four hex digits
/// from the remaining 14 bits, then the failure-type byte.
pub fn format_dtc(d: &Dtc) -> String {
    d.code.to_string()
}
