use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::time::SimTime;

/// Why a polled DID produced no value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum SampleError {
    /// The ECU answered the read with a negative response.
    Nrc { code: u8 },
    /// The DID is not in the tester's catalog or was absent from the response.
    Missing,
    Timeout,
    Transport { detail: String },
}

/// One polled reading of a DID, stamped with the request time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub t: SimTime,
    #[serde(with = "crate::hexnum::u16")]
    pub did: u16,
    #[serde(with = "crate::hexnum::bytes")]
    pub raw: Vec<u8>,
    pub value: Option<T>,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none", flatten)]
    pub error: Option<SampleError>,
}

impl<T: Scalar> Sample<T> {
    pub fn ok(t: SimTime, did: u16, raw: Vec<u8>, value: T, unit: impl Into<String>) -> Self {
        Sample {
            t,
            did,
            raw,
            value: Some(value),
            unit: unit.into(),
            error: None,
        }
    }

    pub fn failed(t: SimTime, did: u16, error: SampleError) -> Self {
        Sample {
            t,
            did,
            raw: Vec::new(),
            value: None,
            unit: String::new(),
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}
