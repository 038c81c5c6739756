//! Environment spec files.
//!
//! ```json
//! {
//!   "env_id": "ticketing",
//!   "description": "...",
//!   "tools": [
//!     {
//!       "name": "get_zipcode",
//!       "description": "Retrieve the zipcode of a city.",
//!       "params": [{"name": "city", "kind": "string", "generator_hint": "city-name"}],
//!       "prerequisites": [],
//!       "executor": "ticketing.get_zipcode",
//!       "returns": "string",
//!       "intent": "look up the zipcode of {city}",
//!       "referent": "the city {city}"
//!     }
//!   ],
//!   "fixtures": { "golden_seed": 0, "cities": {"Rivermist": "83214"} }
//! }
//! ```
//!
//! Executors are `<backend>.<operation>`; every tool in one file must use the
//! same backend. `fixtures` is backend-specific seed data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apigraph::ToolSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    #[serde(default)]
    pub description: String,
    pub tools: Vec<ToolSpec>,
    #[serde(default)]
    pub fixtures: serde_json::Value,
}

impl EnvSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_path(path: &Path) -> Result<Self, SpecFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpecFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| SpecFileError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SpecFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub(crate) const TICKETING_SPEC: &str = include_str!("../../fixtures/envs/ticketing.json");
pub(crate) const FILESYS_SPEC: &str = include_str!("../../fixtures/envs/filesys.json");
