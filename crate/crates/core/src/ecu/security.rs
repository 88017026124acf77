use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Seed-to-key transforms known to both the ECU and the tester.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyFunction {
    /// Bitwise complement of every seed byte.
    #[default]
    Complement,
    /// Every seed byte XOR 0x5A.
    Xor5a,
}

impl KeyFunction {
    pub fn derive(self, seed: &[u8]) -> Vec<u8> {
        match self {
            KeyFunction::Complement => seed.iter().map(|b| !b).collect(),
            KeyFunction::Xor5a => seed.iter().map(|b| b ^ 0x5A).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KeyFunction::Complement => "complement",
            KeyFunction::Xor5a => "xor5a",
        }
    }
}

impl fmt::Display for KeyFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KeyFunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "complement" => Ok(KeyFunction::Complement),
            "xor5a" => Ok(KeyFunction::Xor5a),
            other => Err(format!("unknown key function {other:?}")),
        }
    }
}
