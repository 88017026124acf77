//! Serde adapters that read integers written either as JSON numbers or as
//! `"0x.."` strings, and write them back as hex strings.

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrStr {
    Num(u64),
    Str(String),
}

fn parse(v: NumOrStr) -> Result<u64, String> {
    match v {
        NumOrStr::Num(n) => Ok(n),
        NumOrStr::Str(s) => {
            let t = s.trim();
            let (digits, radix) = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
                Some(h) => (h, 16),
                None => (t, 10),
            };
            u64::from_str_radix(digits, radix).map_err(|e| format!("{s:?}: {e}"))
        }
    }
}

fn narrow<'de, D: Deserializer<'de>>(v: NumOrStr, max: u64) -> Result<u64, D::Error> {
    let n = parse(v).map_err(de::Error::custom)?;
    if n > max {
        return Err(de::Error::custom(format!("{n:#x} out of range")));
    }
    Ok(n)
}

pub mod u8 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u8, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{v:02X}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u8, D::Error> {
        narrow::<D>(NumOrStr::deserialize(d)?, u8::MAX as u64).map(|n| n as u8)
    }
}

pub mod u16 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u16, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{v:04X}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u16, D::Error> {
        narrow::<D>(NumOrStr::deserialize(d)?, u16::MAX as u64).map(|n| n as u16)
    }
}

pub mod u32 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u32, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{v:X}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
        narrow::<D>(NumOrStr::deserialize(d)?, u32::MAX as u64).map(|n| n as u32)
    }
}

pub mod vec_u8 {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for b in v {
            seq.serialize_element(&format!("0x{b:02X}"))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Vec::<NumOrStr>::deserialize(d)?
            .into_iter()
            .map(|v| narrow::<D>(v, 0xFF).map(|n| n as u8))
            .collect()
    }
}

pub mod opt_vec_u8 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::vec_u8::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<Vec<NumOrStr>>::deserialize(d)?
            .map(|v| {
                v.into_iter()
                    .map(|x| narrow::<D>(x, 0xFF).map(|n| n as u8))
                    .collect()
            })
            .transpose()
    }
}

pub mod opt_u8 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<u8>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::u8::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u8>, D::Error> {
        Option::<NumOrStr>::deserialize(d)?
            .map(|v| narrow::<D>(v, 0xFF).map(|n| n as u8))
            .transpose()
    }
}

/// Byte strings as lowercase hex.
pub mod bytes {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::codec::to_hex(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        crate::codec::from_hex(&s).map_err(de::Error::custom)
    }
}
