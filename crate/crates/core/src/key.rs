use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const MAX_NAMESPACE_LEN: usize = 255;

/// Identifier of one stored object.
///
/// The canonical text form is `<namespace>:<32 lowercase hex digits>`. The
/// namespace is the name of the store that created the key and is limited to
/// ASCII alphanumerics plus `_`, `-` and `.` so the text form is also a
/// valid file name.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectKey {
    namespace: String,
    id: [u8; 16],
}

impl ObjectKey {
    /// Mints a fresh random key in `namespace`.
    pub fn new(namespace: &str) -> Result<Self> {
        validate_namespace(namespace)?;
        Ok(Self {
            namespace: namespace.to_owned(),
            id: rand::random(),
        })
    }

    pub fn from_parts(namespace: &str, id: [u8; 16]) -> Result<Self> {
        validate_namespace(namespace)?;
        Ok(Self {
            namespace: namespace.to_owned(),
            id,
        })
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn id(&self) -> &[u8; 16] {
        &self.id
    }
}

pub(crate) fn validate_namespace(namespace: &str) -> Result<()> {
    if namespace.is_empty() || namespace.len() > MAX_NAMESPACE_LEN {
        return Err(Error::InvalidKey(format!(
            "namespace must be 1..={MAX_NAMESPACE_LEN} bytes, got {}",
            namespace.len()
        )));
    }
    if let Some(c) = namespace
        .chars()
        .find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')))
    {
        return Err(Error::InvalidKey(format!(
            "namespace {namespace:?} contains {c:?}"
        )));
    }
    Ok(())
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.namespace, hex::encode(self.id))
    }
}

impl fmt::Debug for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectKey({self})")
    }
}

impl FromStr for ObjectKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (namespace, hex_id) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::InvalidKey(format!("{s:?} has no ':' separator")))?;
        if hex_id.len() != 32 || hex_id.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(Error::InvalidKey(format!(
                "{s:?}: id must be 32 lowercase hex digits"
            )));
        }
        let mut id = [0u8; 16];
        hex::decode_to_slice(hex_id, &mut id)
            .map_err(|e| Error::InvalidKey(format!("{s:?}: {e}")))?;
        Self::from_parts(namespace, id)
    }
}

impl Serialize for ObjectKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObjectKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
