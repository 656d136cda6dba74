use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary class. Encoded as NDD = 0, DD = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "NDD")]
    Ndd,
    #[serde(rename = "DD")]
    Dd,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Ndd, Label::Dd];

    pub fn index(self) -> usize {
        match self {
            Label::Ndd => 0,
            Label::Dd => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Ndd),
            1 => Some(Label::Dd),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Ndd => "NDD",
            Label::Dd => "DD",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    /// Case-sensitive: only "DD" and "NDD" are accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DD" => Ok(Label::Dd),
            "NDD" => Ok(Label::Ndd),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}
