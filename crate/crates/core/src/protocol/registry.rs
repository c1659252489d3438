//! Cache registry: one line per cache, `cache_id address master_key_hex`.
//!
//! Fields may be separated by whitespace or commas; `#` starts a comment.
//! Duplicate ids and duplicate addresses are rejected, which is the only
//! Sybil control the publisher applies.

use std::path::Path;

use crate::crypto::MasterKey;

use super::wire::CacheDescriptor;
use super::ProtocolError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisteredCache {
    pub descriptor: CacheDescriptor,
    pub master_key: MasterKey,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    caches: Vec<RegisteredCache>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        cache_id: u32,
        address: impl Into<String>,
        master_key: MasterKey,
    ) -> Result<(), ProtocolError> {
        let address = address.into();
        if self
            .caches
            .iter()
            .any(|c| c.descriptor.cache_id == cache_id)
        {
            return Err(ProtocolError::Config(format!(
                "duplicate cache id {cache_id}"
            )));
        }
        if self.caches.iter().any(|c| c.descriptor.address == address) {
            return Err(ProtocolError::Config(format!(
                "duplicate cache address {address}"
            )));
        }
        self.caches.push(RegisteredCache {
            descriptor: CacheDescriptor { cache_id, address },
            master_key,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.caches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }

    pub fn get(&self, i: usize) -> &RegisteredCache {
        &self.caches[i]
    }

    pub fn by_id(&self, cache_id: u32) -> Option<&RegisteredCache> {
        self.caches
            .iter()
            .find(|c| c.descriptor.cache_id == cache_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RegisteredCache> {
        self.caches.iter()
    }

    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let mut reg = Registry::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            let err =
                |msg: String| ProtocolError::Config(format!("registry line {}: {msg}", lineno + 1));
            let [id, addr, key] = fields[..] else {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            };
            let id: u32 = id
                .parse()
                .map_err(|e| err(format!("bad cache id {id:?}: {e}")))?;
            let key = MasterKey::from_hex(key).map_err(|e| err(e.to_string()))?;
            reg.register(id, addr, key)
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ProtocolError::Config(format!("reading registry {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.caches
            .iter()
            .map(|c| {
                format!(
                    "{} {} {}\n",
                    c.descriptor.cache_id,
                    c.descriptor.address,
                    c.master_key.to_hex()
                )
            })
            .collect()
    }
}
