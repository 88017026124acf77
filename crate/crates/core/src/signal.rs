//! Signal sources behind data identifiers and their fixed-point scaling.
//!
//! A model is evaluated at a simulated time to a physical value, which the
//! scaling quantises into a big-endian raw integer of 1, 2 or 4 bytes.
//! Reading back: `physical = raw * factor + offset`.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SignalModel<T> {
    Constant {
        value: T,
    },
    /// `start + slope * t`, slope in units per second.
    Ramp {
        #[serde(default)]
        start: T,
        slope: T,
    },
    /// `offset + amplitude * sin(2π t / period)`.
    Sinusoid {
        #[serde(default)]
        offset: T,
        amplitude: T,
        period_ms: u64,
    },
}

impl<T: Scalar> SignalModel<T> {
    /// Physical value at `t`. Pure in `(self, t)`.
    pub fn value_at(&self, t: SimTime) -> T {
        let secs = T::from_u64(t.as_nanos()).unwrap_or_else(T::zero) / T::from_f64_lossy(1e9);
        match *self {
            SignalModel::Constant { value } => value,
            SignalModel::Ramp { start, slope } => start + slope * secs,
            SignalModel::Sinusoid {
                offset,
                amplitude,
                period_ms,
            } => {
                let period = T::from_u64(period_ms.max(1)).unwrap_or_else(T::one) / T::from_f64_lossy(1e3);
                let two = T::one() + T::one();
                offset + amplitude * (two * T::PI() * secs / period).sin()
            }
        }
    }
}

/// Fixed-point encoding of a physical value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling<T> {
    pub factor: T,
    #[serde(default)]
    pub offset: T,
    #[serde(default)]
    pub unit: String,
    /// Raw width in bytes: 1, 2 or 4.
    pub width: usize,
    #[serde(default)]
    pub signed: bool,
}

impl<T: Scalar> Scaling<T> {
    pub fn identity(width: usize) -> Self {
        Scaling {
            factor: T::one(),
            offset: T::zero(),
            unit: String::new(),
            width,
            signed: false,
        }
    }

    fn raw_range(&self) -> (i64, i64) {
        let bits = (self.width * 8) as u32;
        if self.signed {
            (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
        } else {
            (0, (1i64 << bits) - 1)
        }
    }

    /// Raw integer for a physical value, rounded to nearest and saturated.
    pub fn to_raw(&self, physical: T) -> i64 {
        let (lo, hi) = self.raw_range();
        let raw = ((physical - self.offset) / self.factor).round();
        if raw.is_nan() {
            return 0;
        }
        raw.to_i64().unwrap_or(if raw > T::zero() { hi } else { lo }).clamp(lo, hi)
    }

    pub fn from_raw(&self, raw: i64) -> T {
        T::from_i64(raw).unwrap_or_else(T::zero) * self.factor + self.offset
    }

    pub fn encode(&self, physical: T) -> Vec<u8> {
        let raw = self.to_raw(physical) as u64;
        raw.to_be_bytes()[8 - self.width..].to_vec()
    }

    /// Raw integer from big-endian bytes; `None` on width mismatch.
    pub fn raw_from_bytes(&self, bytes: &[u8]) -> Option<i64> {
        if bytes.len() != self.width || !(1..=8).contains(&self.width) {
            return None;
        }
        let mut v: u64 = 0;
        for &b in bytes {
            v = (v << 8) | b as u64;
        }
        if self.signed {
            let shift = 64 - self.width as u32 * 8;
            Some(((v << shift) as i64) >> shift)
        } else {
            Some(v as i64)
        }
    }

    pub fn decode(&self, bytes: &[u8]) -> Option<T> {
        self.raw_from_bytes(bytes).map(|r| self.from_raw(r))
    }

    /// Converts the scaling into another scalar type.
    pub fn cast<U: Scalar>(&self) -> Scaling<U> {
        Scaling {
            factor: U::from_f64_lossy(self.factor.to_f64_lossy()),
            offset: U::from_f64_lossy(self.offset.to_f64_lossy()),
            unit: self.unit.clone(),
            width: self.width,
            signed: self.signed,
        }
    }
}
