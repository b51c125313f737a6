//! Canonical self-describing binary format.
//!
//! Every encoded value starts with a one-byte tag. Lengths and counts are
//! unsigned 32-bit big-endian integers; numbers are 8-byte big-endian.
//!
//! | tag    | value       | body                                               |
//! |--------|-------------|----------------------------------------------------|
//! | `0x00` | null        | none                                               |
//! | `0x01` | false       | none                                               |
//! | `0x02` | true        | none                                               |
//! | `0x03` | integer     | `i64`, two's complement                            |
//! | `0x04` | float       | IEEE-754 `f64` bits                                |
//! | `0x05` | byte string | `u32` length, bytes                                |
//! | `0x06` | text        | `u32` length, UTF-8 bytes                          |
//! | `0x07` | list        | `u32` count, encoded items                         |
//! | `0x08` | map         | `u32` count, then per entry: `u32` key length, UTF-8 key, encoded value |
//!
//! Map entries are written in ascending byte order of their keys, and a
//! decoder rejects maps whose keys are out of order or repeated, so a given
//! value has exactly one encoding.
//!
//! Typed Rust values reach the format through serde: [`to_value`] and
//! [`from_value`] convert between any `Serialize`/`Deserialize` type and a
//! [`Value`] tree, and [`Serializer`] implementations turn that tree into
//! bytes. Unsigned integers above `i64::MAX` and 128-bit integers have no
//! encoding and fail with a serialization error. `None` and unit encode as
//! null, so `Some(x)` where `x` itself encodes as null reads back as `None`.

mod de;
mod ser;
mod value;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

pub use de::from_value;
pub use ser::to_value;
pub use value::{decode, encode, encode_into, Value};

use crate::error::{Error, Result};

/// Identifier of the built-in serializer.
pub const CANONICAL: &str = "canonical";

/// A byte-level serializer for [`Value`] trees, selected by id.
///
/// Factories name the serializer that produced their target so the resolving
/// process can pick the same one.
pub trait Serializer: Send + Sync {
    fn id(&self) -> &str;
    fn serialize(&self, value: &Value) -> Result<Vec<u8>>;
    fn deserialize(&self, bytes: &[u8]) -> Result<Value>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CanonicalSerializer;

impl Serializer for CanonicalSerializer {
    fn id(&self) -> &str {
        CANONICAL
    }

    fn serialize(&self, value: &Value) -> Result<Vec<u8>> {
        encode(value)
    }

    fn deserialize(&self, bytes: &[u8]) -> Result<Value> {
        decode(bytes)
    }
}

fn serializers() -> &'static RwLock<HashMap<String, Arc<dyn Serializer>>> {
    static REGISTRY: OnceLock<RwLock<HashMap<String, Arc<dyn Serializer>>>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut map: HashMap<String, Arc<dyn Serializer>> = HashMap::new();
        map.insert(CANONICAL.to_owned(), Arc::new(CanonicalSerializer));
        RwLock::new(map)
    })
}

/// Makes a serializer available to every store and factory in this process.
///
/// Replaces any serializer previously registered under the same id, except
/// the canonical one, which cannot be replaced.
pub fn register_serializer(serializer: Arc<dyn Serializer>) -> Result<()> {
    let id = serializer.id().to_owned();
    if id == CANONICAL {
        return Err(Error::Config(
            "the canonical serializer cannot be replaced".into(),
        ));
    }
    serializers().write().unwrap().insert(id, serializer);
    Ok(())
}

pub fn serializer(id: &str) -> Result<Arc<dyn Serializer>> {
    serializers()
        .read()
        .unwrap()
        .get(id)
        .cloned()
        .ok_or_else(|| Error::UnknownSerializer(id.to_owned()))
}

/// Serializes `value` to canonical bytes.
pub fn to_bytes<T: serde::Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    encode(&to_value(value)?)
}

/// Decodes canonical bytes into `T`.
pub fn from_bytes<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    from_value(decode(bytes)?)
}

/// Wrapper that serializes as a byte string rather than a list of integers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bytes(pub Vec<u8>);

impl serde::Serialize for Bytes {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_bytes(&self.0)
    }
}

impl<'de> serde::Deserialize<'de> for Bytes {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct BytesVisitor;

        impl<'de> serde::de::Visitor<'de> for BytesVisitor {
            type Value = Bytes;

            fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str("a byte string")
            }

            fn visit_bytes<E: serde::de::Error>(self, v: &[u8]) -> std::result::Result<Bytes, E> {
                Ok(Bytes(v.to_vec()))
            }

            fn visit_byte_buf<E: serde::de::Error>(
                self,
                v: Vec<u8>,
            ) -> std::result::Result<Bytes, E> {
                Ok(Bytes(v))
            }

            fn visit_seq<A: serde::de::SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<Bytes, A::Error> {
                let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
                while let Some(b) = seq.next_element::<u8>()? {
                    out.push(b);
                }
                Ok(Bytes(out))
            }
        }

        d.deserialize_byte_buf(BytesVisitor)
    }
}

impl From<Vec<u8>> for Bytes {
    fn from(v: Vec<u8>) -> Self {
        Bytes(v)
    }
}

impl std::ops::Deref for Bytes {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}
