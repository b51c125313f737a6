//! Low-level put/get/exists/evict access to a mediated channel.
//!
//! A connector is rebuilt anywhere from its [`ConnectorConfig`], whose text
//! form is `kind=<memory|file|relay>;k1=v1;k2=v2` with parameter keys sorted.
//! Parameter values escape `%`, `;` and `=` as `%25`, `%3B` and `%3D`.
//!
//! | kind     | parameters                       |
//! |----------|----------------------------------|
//! | `memory` | `space`: name of an in-process space |
//! | `file`   | `path`: directory holding one file per key |
//! | `relay`  | `addr`: `host:port` of a relay server |
//!
//! The memory backend only makes sense inside one process. Two memory
//! connectors naming the same space share objects; other processes see an
//! empty space of the same name.

mod file;
mod memory;
mod relay;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use file::FileConnector;
pub use memory::MemoryConnector;
pub use relay::RelayConnector;

use crate::error::{Error, Result};
use crate::key::ObjectKey;
use crate::relay::StoreStats;

/// Operations every backend provides. Implementations are safe to share
/// between threads and each operation is atomic.
pub trait Connector: Send + Sync {
    fn put(&self, key: &ObjectKey, value: Vec<u8>) -> Result<()>;

    /// `Ok(None)` means not found; transport failures are errors.
    fn get(&self, key: &ObjectKey) -> Result<Option<Vec<u8>>>;

    fn exists(&self, key: &ObjectKey) -> Result<bool>;

    /// Succeeds when the key is already absent.
    fn evict(&self, key: &ObjectKey) -> Result<()>;

    fn config(&self) -> ConnectorConfig;

    fn stats(&self) -> Result<StoreStats>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConnectorKind {
    Memory,
    File,
    Relay,
}

impl ConnectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConnectorKind::Memory => "memory",
            ConnectorKind::File => "file",
            ConnectorKind::Relay => "relay",
        }
    }
}

impl FromStr for ConnectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(ConnectorKind::Memory),
            "file" => Ok(ConnectorKind::File),
            "relay" => Ok(ConnectorKind::Relay),
            other => Err(Error::Config(format!("unknown connector kind {other:?}"))),
        }
    }
}

impl fmt::Display for ConnectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnectorConfig {
    pub kind: ConnectorKind,
    pub params: BTreeMap<String, String>,
}

impl ConnectorConfig {
    pub fn new(kind: ConnectorKind) -> Self {
        Self {
            kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.param(key).ok_or_else(|| {
            Error::Config(format!("{} connector needs parameter {key:?}", self.kind))
        })
    }
}

impl fmt::Display for ConnectorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kind={}", self.kind)?;
        for (k, v) in &self.params {
            write!(f, ";{}={}", escape(k), escape(v))?;
        }
        Ok(())
    }
}

impl FromStr for ConnectorConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(';');
        let kind = match parts.next().and_then(|p| p.strip_prefix("kind=")) {
            Some(kind) => kind.parse()?,
            None => return Err(Error::Config(format!("config {s:?} must start with kind="))),
        };
        let mut params = BTreeMap::new();
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("parameter {part:?} has no '='")))?;
            let k = unescape(k)?;
            if k == "kind" || params.insert(k.clone(), unescape(v)?).is_some() {
                return Err(Error::Config(format!("duplicate parameter {k:?}")));
            }
        }
        Ok(Self { kind, params })
    }
}

impl serde::Serialize for ConnectorConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ConnectorConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            ';' => out.push_str("%3B"),
            '=' => out.push_str("%3D"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('%') {
        out.push_str(&rest[..i]);
        let code = rest.get(i + 1..i + 3);
        out.push(match code {
            Some("25") => '%',
            Some("3B") => ';',
            Some("3D") => '=',
            _ => return Err(Error::Config(format!("bad escape in {s:?}"))),
        });
        rest = &rest[i + 3..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Builds a connector observing the key space described by `config`.
///
/// Relay configs are checked for reachability immediately.
pub fn from_config(config: &ConnectorConfig) -> Result<Arc<dyn Connector>> {
    Ok(match config.kind {
        ConnectorKind::Memory => Arc::new(MemoryConnector::open(
            config.param("space").unwrap_or(memory::DEFAULT_SPACE),
        )),
        ConnectorKind::File => Arc::new(FileConnector::new(config.require("path")?)?),
        ConnectorKind::Relay => Arc::new(RelayConnector::connect(config.require("addr")?)?),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn text_form_sorts_parameters() {
        let c = ConnectorConfig::new(ConnectorKind::Relay)
            .with("zeta", "1")
            .with("addr", "127.0.0.1:9000");
        assert_eq!(c.to_string(), "kind=relay;addr=127.0.0.1:9000;zeta=1");
        assert_eq!(c.to_string().parse::<ConnectorConfig>().unwrap(), c);
    }

    #[test]
    fn file_config_round_trip_keeps_path() {
        let c = ConnectorConfig::new(ConnectorKind::File).with("path", "/tmp/a;b=c%d");
        let back: ConnectorConfig = c.to_string().parse().unwrap();
        assert_eq!(back.param("path"), Some("/tmp/a;b=c%d"));
    }

    #[test]
    fn unknown_kind_is_a_config_error() {
        let err = "kind=quux".parse::<ConnectorConfig>().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn malformed_configs_are_rejected() {
        for bad in ["", "memory", "space=x;kind=memory", "kind=memory;x", "kind=memory;a=1;a=2", "kind=file;p=%zz"] {
            assert!(bad.parse::<ConnectorConfig>().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn missing_required_parameter() {
        let err = from_config(&ConnectorConfig::new(ConnectorKind::File)).err().unwrap();
        assert!(matches!(err, Error::Config(_)));
    }

    proptest! {
        #[test]
        fn config_text_round_trip(params in proptest::collection::btree_map("[a-z%;=]{1,6}", "\\PC{0,12}", 0..5)) {
            prop_assume!(!params.contains_key("kind"));
            let c = ConnectorConfig { kind: ConnectorKind::File, params };
            let back: ConnectorConfig = c.to_string().parse().unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
