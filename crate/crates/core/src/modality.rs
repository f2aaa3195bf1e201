use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three account views fused by the model, in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Metadata,
    Text,
    Graph,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Metadata, Modality::Text, Modality::Graph];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Metadata => "metadata",
            Modality::Text => "text",
            Modality::Graph => "graph",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "metadata" | "meta" => Ok(Modality::Metadata),
            "text" => Ok(Modality::Text),
            "graph" => Ok(Modality::Graph),
            other => Err(format!("unknown modality '{other}'")),
        }
    }
}
