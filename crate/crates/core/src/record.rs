use alloc::string::String;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Query,
    Passage,
}

impl Kind {
    /// Text prepended to the record before student tokenization.
    pub fn prefix(self) -> &'static str {
        match self {
            Kind::Query => "query: ",
            Kind::Passage => "document: ",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Query => "query",
            Kind::Passage => "passage",
        }
    }
}

/// One query or passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub kind: Kind,
    pub text: String,
}

impl TextRecord {
    pub fn new(id: impl Into<String>, kind: Kind, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            text: text.into(),
        }
    }

    pub fn query(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(id, Kind::Query, text)
    }

    pub fn passage(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(id, Kind::Passage, text)
    }
}
