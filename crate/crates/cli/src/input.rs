use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

use crate::report::{InputDigest, SCHEMA_VERSION};

/// Files read by a command, with their digests and any lenient-mode warnings.
#[derive(Debug, Default)]
pub struct Inputs {
    pub digests: BTreeMap<String, InputDigest>,
    pub warnings: Vec<String>,
    pub lenient: bool,
}

impl Inputs {
    pub fn new(lenient: bool) -> Self {
        Self {
            lenient,
            ..Self::default()
        }
    }

    pub fn read(&mut self, role: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.digests.insert(
            role.to_string(),
            InputDigest {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        Ok(bytes)
    }

    /// Deserialise JSON, rejecting unknown fields unless lenient.
    pub fn parse_json<T: DeserializeOwned>(&mut self, role: &str, text: &str) -> Result<T> {
        let mut de = serde_json::Deserializer::from_str(text);
        let mut unknown = Vec::new();
        let value: T = serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string()))
            .with_context(|| format!("parsing {role}"))?;
        de.end().with_context(|| format!("parsing {role}"))?;
        self.unknown_fields(role, unknown)?;
        Ok(value)
    }

    pub fn unknown_fields(&mut self, role: &str, unknown: Vec<String>) -> Result<()> {
        if unknown.is_empty() {
            return Ok(());
        }
        if !self.lenient {
            bail!(
                "{role}: unknown field(s) {} (pass --lenient to ignore)",
                unknown.join(", ")
            );
        }
        for field in unknown {
            self.warnings.push(format!("{role}: ignored unknown field {field}"));
        }
        Ok(())
    }

    pub fn read_json<T: DeserializeOwned>(&mut self, role: &str, path: &Path) -> Result<T> {
        let bytes = self.read(role, path)?;
        let text = std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
        self.parse_json(role, text)
    }
}

/// Rejects documents whose `schema_version` is not the supported one.
pub fn check_schema(role: &str, version: Option<u32>) -> Result<()> {
    match version {
        Some(v) if v != SCHEMA_VERSION => {
            bail!("{role}: unsupported schema_version {v} (this build reads {SCHEMA_VERSION})")
        }
        _ => Ok(()),
    }
}
