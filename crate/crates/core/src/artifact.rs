//! Versioned JSON model artifacts: a kind tag, a format version, the hash of
//! the producing config and the payload.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    pub payload: T,
}

impl<T: Serialize> Artifact<T> {
    pub fn new(kind: &str, config_hash: &str, payload: T) -> Self {
        Self { kind: kind.to_string(), format_version: FORMAT_VERSION, config_hash: config_hash.to_string(), payload }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes through a temporary sibling so a failed write leaves no
    /// partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

impl<T: DeserializeOwned> Artifact<T> {
    /// Parses and checks the kind and version before touching the payload.
    pub fn from_json(kind: &str, text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            kind: String,
            format_version: u32,
        }
        let h: Header = serde_json::from_str(text)?;
        if h.kind != kind || h.format_version != FORMAT_VERSION {
            return Err(Error::ArtifactVersionMismatch {
                kind: format!("{} (expected {kind})", h.kind),
                found: h.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(kind: &str, path: &Path) -> Result<Self> {
        Self::from_json(kind, &fs::read_to_string(path)?)
    }
}

/// Short hex digest of arbitrary bytes.
pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}
