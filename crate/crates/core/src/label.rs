use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Three-way sentiment label.
///
/// The class index order (positive, negative, neutral) matches the column
/// order of the published class-distribution tables and is the index used by
/// every classifier output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Positive, Label::Negative, Label::Neutral];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
            Label::Neutral => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    /// Polarity as -1 / 0 / 1.
    pub fn polarity(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
            Label::Neutral => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Neutral => "neutral",
        }
    }

    /// True for the two sentiment-bearing classes.
    pub fn is_polar(self) -> bool {
        self != Label::Neutral
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    /// Accepts the words `positive`/`negative`/`neutral` (any case) and the
    /// integers `1`/`-1`/`0`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "1" | "+1" => Ok(Label::Positive),
            "negative" | "-1" => Ok(Label::Negative),
            "neutral" | "0" => Ok(Label::Neutral),
            other => Err(Error::Invalid(format!("unknown label `{other}`"))),
        }
    }
}
