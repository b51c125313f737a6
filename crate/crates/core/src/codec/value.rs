use std::collections::BTreeMap;

use crate::error::{Error, Result};

const TAG_NULL: u8 = 0x00;
const TAG_FALSE: u8 = 0x01;
const TAG_TRUE: u8 = 0x02;
const TAG_INT: u8 = 0x03;
const TAG_FLOAT: u8 = 0x04;
const TAG_BYTES: u8 = 0x05;
const TAG_STR: u8 = 0x06;
const TAG_LIST: u8 = 0x07;
const TAG_MAP: u8 = 0x08;

const MAX_DEPTH: usize = 128;

/// A dynamically typed value in the canonical data model.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Bytes(Vec<u8>),
    Str(String),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

/// Floats compare by bit pattern, so `NaN == NaN` and `0.0 != -0.0`. Two
/// values are equal exactly when their encodings are equal.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::Bytes(a), Value::Bytes(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::List(a), Value::List(b)) => a == b,
            (Value::Map(a), Value::Map(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Bytes(_) => "bytes",
            Value::Str(_) => "str",
            Value::List(_) => "list",
            Value::Map(_) => "map",
        }
    }

    /// Exact number of bytes [`encode`] produces for this value.
    pub fn encoded_len(&self) -> usize {
        match self {
            Value::Null | Value::Bool(_) => 1,
            Value::Int(_) | Value::Float(_) => 9,
            Value::Bytes(b) => 5 + b.len(),
            Value::Str(s) => 5 + s.len(),
            Value::List(items) => 5 + items.iter().map(Value::encoded_len).sum::<usize>(),
            Value::Map(m) => {
                5 + m
                    .iter()
                    .map(|(k, v)| 4 + k.len() + v.encoded_len())
                    .sum::<usize>()
            }
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

fn len_u32(len: usize) -> Result<[u8; 4]> {
    u32::try_from(len)
        .map(u32::to_be_bytes)
        .map_err(|_| Error::Serialization(format!("length {len} does not fit in 32 bits")))
}

pub fn encode(value: &Value) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(value.encoded_len());
    encode_into(value, &mut out)?;
    Ok(out)
}

pub fn encode_into(value: &Value, out: &mut Vec<u8>) -> Result<()> {
    match value {
        Value::Null => out.push(TAG_NULL),
        Value::Bool(false) => out.push(TAG_FALSE),
        Value::Bool(true) => out.push(TAG_TRUE),
        Value::Int(i) => {
            out.push(TAG_INT);
            out.extend_from_slice(&i.to_be_bytes());
        }
        Value::Float(f) => {
            out.push(TAG_FLOAT);
            out.extend_from_slice(&f.to_bits().to_be_bytes());
        }
        Value::Bytes(b) => {
            out.push(TAG_BYTES);
            out.extend_from_slice(&len_u32(b.len())?);
            out.extend_from_slice(b);
        }
        Value::Str(s) => {
            out.push(TAG_STR);
            out.extend_from_slice(&len_u32(s.len())?);
            out.extend_from_slice(s.as_bytes());
        }
        Value::List(items) => {
            out.push(TAG_LIST);
            out.extend_from_slice(&len_u32(items.len())?);
            for item in items {
                encode_into(item, out)?;
            }
        }
        Value::Map(map) => {
            out.push(TAG_MAP);
            out.extend_from_slice(&len_u32(map.len())?);
            // BTreeMap<String, _> iterates in byte order of the keys.
            for (k, v) in map {
                out.extend_from_slice(&len_u32(k.len())?);
                out.extend_from_slice(k.as_bytes());
                encode_into(v, out)?;
            }
        }
    }
    Ok(())
}

/// Decodes exactly one value; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Value> {
    let mut reader = Reader { buf: bytes, pos: 0 };
    let value = reader.value(0)?;
    if reader.pos != bytes.len() {
        return Err(Error::Deserialization(format!(
            "{} trailing bytes after value",
            bytes.len() - reader.pos
        )));
    }
    Ok(value)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| {
                Error::Deserialization(format!(
                    "truncated input: need {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    fn text(&mut self) -> Result<String> {
        let len = self.u32()?;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|e| Error::Deserialization(format!("invalid UTF-8: {e}")))
    }

    fn value(&mut self, depth: usize) -> Result<Value> {
        if depth > MAX_DEPTH {
            return Err(Error::Deserialization(format!(
                "nesting deeper than {MAX_DEPTH}"
            )));
        }
        let tag = self.take(1)?[0];
        Ok(match tag {
            TAG_NULL => Value::Null,
            TAG_FALSE => Value::Bool(false),
            TAG_TRUE => Value::Bool(true),
            TAG_INT => Value::Int(self.u64()? as i64),
            TAG_FLOAT => Value::Float(f64::from_bits(self.u64()?)),
            TAG_BYTES => {
                let len = self.u32()?;
                Value::Bytes(self.take(len)?.to_vec())
            }
            TAG_STR => Value::Str(self.text()?),
            TAG_LIST => {
                let count = self.u32()?;
                // Every item takes at least one byte; cap the preallocation.
                let mut items = Vec::with_capacity(count.min(self.buf.len() - self.pos));
                for _ in 0..count {
                    items.push(self.value(depth + 1)?);
                }
                Value::List(items)
            }
            TAG_MAP => {
                let count = self.u32()?;
                let mut map = BTreeMap::new();
                let mut prev: Option<String> = None;
                for _ in 0..count {
                    let key = self.text()?;
                    if let Some(p) = &prev {
                        if p.as_bytes() >= key.as_bytes() {
                            return Err(Error::Deserialization(format!(
                                "map key {key:?} out of order after {p:?}"
                            )));
                        }
                    }
                    let v = self.value(depth + 1)?;
                    prev = Some(key.clone());
                    map.insert(key, v);
                }
                Value::Map(map)
            }
            other => {
                return Err(Error::Deserialization(format!(
                    "unknown tag 0x{other:02x} at offset {}",
                    self.pos - 1
                )))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(Value::Int),
            any::<f64>().prop_map(Value::Float),
            proptest::collection::vec(any::<u8>(), 0..32).prop_map(Value::Bytes),
            ".{0,16}".prop_map(Value::Str),
        ];
        leaf.prop_recursive(4, 64, 8, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..8).prop_map(Value::List),
                proptest::collection::btree_map(".{0,8}", inner, 0..8).prop_map(Value::Map),
            ]
        })
    }

    #[test]
    fn known_encodings() {
        assert_eq!(encode(&Value::Null).unwrap(), [0x00]);
        assert_eq!(encode(&Value::Bool(true)).unwrap(), [0x02]);
        assert_eq!(
            encode(&Value::Int(-2)).unwrap(),
            [0x03, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xfe]
        );
        assert_eq!(
            encode(&Value::from("value")).unwrap(),
            [0x06, 0, 0, 0, 5, b'v', b'a', b'l', b'u', b'e']
        );
        let mut map = BTreeMap::new();
        map.insert("b".to_owned(), Value::Int(1));
        map.insert("a".to_owned(), Value::Null);
        assert_eq!(
            encode(&Value::Map(map)).unwrap(),
            [
                0x08, 0, 0, 0, 2, 0, 0, 0, 1, b'a', 0x00, 0, 0, 0, 1, b'b', 0x03, 0, 0, 0, 0, 0,
                0, 0, 1
            ]
        );
    }

    #[test]
    fn rejects_unsorted_and_duplicate_keys() {
        let unsorted = [0x08, 0, 0, 0, 2, 0, 0, 0, 1, b'b', 0x00, 0, 0, 0, 1, b'a', 0x00];
        assert!(decode(&unsorted).is_err());
        let duplicate = [0x08, 0, 0, 0, 2, 0, 0, 0, 1, b'a', 0x00, 0, 0, 0, 1, b'a', 0x00];
        assert!(decode(&duplicate).is_err());
    }

    #[test]
    fn rejects_truncation_trailing_and_unknown_tags() {
        assert!(decode(&[]).is_err());
        assert!(decode(&[0x06, 0, 0, 0, 9, b'x']).is_err());
        assert!(decode(&[0x00, 0x00]).is_err());
        assert!(decode(&[0x42]).is_err());
        assert!(decode(&[0x07, 0xff, 0xff, 0xff, 0xff]).is_err());
    }

    #[test]
    fn rejects_excessive_nesting() {
        let mut deep = Vec::new();
        for _ in 0..200 {
            deep.extend_from_slice(&[0x07, 0, 0, 0, 1]);
        }
        deep.push(0x00);
        assert!(decode(&deep).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(v in arb_value()) {
            let bytes = encode(&v).unwrap();
            prop_assert_eq!(bytes.len(), v.encoded_len());
            prop_assert_eq!(decode(&bytes).unwrap(), v);
        }

        #[test]
        fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode(&bytes);
        }
    }
}
