use std::fmt;

use serde::{Deserialize, Serialize};

/// Binary ground truth / prediction for both patches and whole images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Authentic,
    Tampered,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Authentic, Label::Tampered];

    /// Class index used by the network's output layer.
    pub fn index(self) -> usize {
        match self {
            Label::Authentic => 0,
            Label::Tampered => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Authentic),
            1 => Some(Label::Tampered),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Authentic => "authentic",
            Label::Tampered => "tampered",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "authentic" | "real" | "0" => Some(Label::Authentic),
            "tampered" | "fake" | "altered" | "1" => Some(Label::Tampered),
            _ => None,
        }
    }

    /// `+1` for tampered, `-1` for authentic.
    pub fn sign(self) -> f64 {
        match self {
            Label::Authentic => -1.0,
            Label::Tampered => 1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
