//! Plain-text `key = value` node configuration.
//!
//! ```text
//! listen      = 127.0.0.1:7000
//! registry    = caches.txt        # publisher; caches may use it to find their key
//! content_dir = content
//! n           = 4
//! r_puzzle    = 5
//! chunk_size  = 1048576
//! piece_size  = 16
//! secret      = <64 hex chars>    # publisher token secret
//! cache_id    = 1                 # cache only
//! master_key  = <64 hex chars>    # cache only; else looked up in the registry
//! check_source_ip = true          # cache: reject chunk requests from other IPs
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::crypto::MasterKey;
use crate::params::PuzzleParams;

use super::ProtocolError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub listen: String,
    pub registry: Option<PathBuf>,
    pub content_dir: PathBuf,
    pub params: PuzzleParams,
    pub secret: Option<MasterKey>,
    pub cache_id: Option<u32>,
    pub master_key: Option<MasterKey>,
    pub check_source_ip: bool,
}

fn parse_num<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, ProtocolError>
where
    T::Err: std::fmt::Display,
{
    map.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| ProtocolError::Config(format!("{key} = {v:?}: {e}")))
        })
        .transpose()
}

fn key(map: &HashMap<String, String>, name: &str) -> Result<Option<MasterKey>, ProtocolError> {
    map.get(name)
        .map(|v| MasterKey::from_hex(v).map_err(|e| ProtocolError::Config(format!("{name}: {e}"))))
        .transpose()
}

impl NodeConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ProtocolError> {
        let mut map = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ProtocolError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            map.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }

        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base_dir.join(p)
            } else {
                p
            }
        };
        let require = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| ProtocolError::Config(format!("missing required key {k}")))
        };

        let params = PuzzleParams::new(
            parse_num(&map, "n")?.unwrap_or(4),
            parse_num(&map, "r_puzzle")?.unwrap_or(5),
            parse_num(&map, "chunk_size")?.unwrap_or(1 << 20),
            parse_num(&map, "piece_size")?.unwrap_or(16),
        )?;

        Ok(Self {
            listen: require("listen")?,
            registry: map.get("registry").map(|p| resolve(p)),
            content_dir: resolve(&require("content_dir")?),
            params,
            secret: key(&map, "secret")?,
            cache_id: parse_num(&map, "cache_id")?,
            master_key: key(&map, "master_key")?,
            check_source_ip: parse_num(&map, "check_source_ip")?.unwrap_or(true),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProtocolError::Config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_publisher_config() {
        let text = "listen = 0.0.0.0:9000\nregistry = reg.txt\ncontent_dir=/srv/content\n\
                    n=2\nr_puzzle = 3 # rounds\nchunk_size=4096\npiece_size=32\n\
                    secret = 1111111111111111111111111111111111111111111111111111111111111111\n";
        let cfg = NodeConfig::parse(text, Path::new("/etc/cp")).unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000");
        assert_eq!(cfg.registry.as_deref(), Some(Path::new("/etc/cp/reg.txt")));
        assert_eq!(cfg.content_dir, PathBuf::from("/srv/content"));
        assert_eq!(cfg.params, PuzzleParams::new(2, 3, 4096, 32).unwrap());
        assert_eq!(cfg.secret, Some(MasterKey([0x11; 32])));
        assert!(cfg.check_source_ip);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(NodeConfig::parse("content_dir = x", Path::new(".")).is_err());
        assert!(
            NodeConfig::parse("listen = a:1\ncontent_dir = x\nn = four", Path::new(".")).is_err()
        );
        assert!(NodeConfig::parse(
            "listen = a:1\ncontent_dir = x\npiece_size = 20",
            Path::new(".")
        )
        .is_err());
        assert!(NodeConfig::parse("listen a:1", Path::new(".")).is_err());
        assert!(
            NodeConfig::parse("listen = a:1\ncontent_dir = x\nsecret = 12", Path::new("."))
                .is_err()
        );
    }
}
