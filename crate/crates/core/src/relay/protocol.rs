//! Relay wire framing.
//!
//! Request: 1-byte opcode, `u32` big-endian key/topic length, key/topic
//! bytes, `u64` big-endian value length, value bytes. Unused fields are
//! zero-length.
//!
//! Response: 1-byte status, `u64` big-endian payload length, payload.
//!
//! | op     | key              | value                     | OK payload                |
//! |--------|------------------|---------------------------|---------------------------|
//! | `PUT`  | object key text  | object bytes              | empty                     |
//! | `GET`  | object key text  | empty                     | object bytes, or `NOT_FOUND` |
//! | `EXISTS` | object key text | empty                    | one byte, `0x01` or `0x00` |
//! | `EVICT` | object key text | empty                     | empty                     |
//! | `PUBLISH` | topic         | message bytes             | empty                     |
//! | `SUBSCRIBE` | topic       | empty                     | empty                     |
//! | `NEXT` | topic            | empty, or `u64` timeout in ms | message, or `TIMEOUT` / `END_OF_STREAM` |
//! | `STATS` | empty           | empty                     | six `u64`: objects, bytes, puts, gets, evicts, overwrites |
//! | `CLOSE` | topic           | empty                     | empty                     |
//!
//! `NEXT` with an empty value blocks until a message or the close marker
//! arrives. It must name a topic this connection subscribed to.
//!
//! An `ERROR` payload starts with a one-byte error class. Class
//! [`ERR_CAPACITY`] is followed by the rejected size and the limit as two
//! `u64`; the other classes are followed by a UTF-8 message.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub const OP_PUT: u8 = 0x01;
pub const OP_GET: u8 = 0x02;
pub const OP_EXISTS: u8 = 0x03;
pub const OP_EVICT: u8 = 0x04;
pub const OP_PUBLISH: u8 = 0x05;
pub const OP_SUBSCRIBE: u8 = 0x06;
pub const OP_NEXT: u8 = 0x07;
pub const OP_STATS: u8 = 0x08;
pub const OP_CLOSE: u8 = 0x09;

pub const STATUS_OK: u8 = 0x00;
pub const STATUS_NOT_FOUND: u8 = 0x01;
pub const STATUS_TIMEOUT: u8 = 0x02;
pub const STATUS_END_OF_STREAM: u8 = 0x03;
pub const STATUS_ERROR: u8 = 0x7F;

pub const ERR_CAPACITY: u8 = 0x01;
pub const ERR_BAD_REQUEST: u8 = 0x02;
pub const ERR_INTERNAL: u8 = 0x03;

/// Longest key or topic field a peer will accept.
pub const MAX_KEY_LEN: u32 = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestHeader {
    pub op: u8,
    pub key: Vec<u8>,
    pub value_len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u8,
    pub payload: Vec<u8>,
}

impl Response {
    pub fn ok(payload: Vec<u8>) -> Self {
        Self {
            status: STATUS_OK,
            payload,
        }
    }

    pub fn status(status: u8) -> Self {
        Self {
            status,
            payload: Vec::new(),
        }
    }

    pub fn error(class: u8, message: &str) -> Self {
        let mut payload = Vec::with_capacity(1 + message.len());
        payload.push(class);
        payload.extend_from_slice(message.as_bytes());
        Self {
            status: STATUS_ERROR,
            payload,
        }
    }

    pub fn capacity(size: u64, max: u64) -> Self {
        let mut payload = vec![ERR_CAPACITY];
        payload.extend_from_slice(&size.to_be_bytes());
        payload.extend_from_slice(&max.to_be_bytes());
        Self {
            status: STATUS_ERROR,
            payload,
        }
    }

    /// Maps an `ERROR` response to the matching [`Error`].
    pub fn into_error(self) -> Error {
        match self.payload.split_first() {
            Some((&ERR_CAPACITY, rest)) if rest.len() == 16 => Error::Capacity {
                size: u64::from_be_bytes(rest[..8].try_into().unwrap()),
                max: u64::from_be_bytes(rest[8..].try_into().unwrap()),
            },
            Some((_, rest)) => Error::Remote(String::from_utf8_lossy(rest).into_owned()),
            None => Error::Remote("unspecified error".into()),
        }
    }
}

pub fn encode_request(op: u8, key: &[u8], value: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + key.len() + value.len());
    out.push(op);
    out.extend_from_slice(&(key.len() as u32).to_be_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&(value.len() as u64).to_be_bytes());
    out.extend_from_slice(value);
    out
}

pub fn write_request<W: Write>(w: &mut W, op: u8, key: &[u8], value: &[u8]) -> Result<()> {
    if key.len() > MAX_KEY_LEN as usize {
        return Err(Error::Protocol(format!(
            "key of {} bytes exceeds {MAX_KEY_LEN}",
            key.len()
        )));
    }
    w.write_all(&[op])?;
    w.write_all(&(key.len() as u32).to_be_bytes())?;
    w.write_all(key)?;
    w.write_all(&(value.len() as u64).to_be_bytes())?;
    w.write_all(value)?;
    w.flush()?;
    Ok(())
}

/// Reads everything up to, but excluding, the value bytes.
///
/// Returns `Ok(None)` on a clean end of stream before the first byte.
pub fn read_request_header<R: Read>(r: &mut R) -> Result<Option<RequestHeader>> {
    let mut op = [0u8; 1];
    match r.read_exact(&mut op) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let key_len = read_u32(r)?;
    if key_len > MAX_KEY_LEN {
        return Err(Error::Protocol(format!(
            "key length {key_len} exceeds {MAX_KEY_LEN}"
        )));
    }
    let mut key = vec![0u8; key_len as usize];
    r.read_exact(&mut key)?;
    let value_len = read_u64(r)?;
    Ok(Some(RequestHeader {
        op: op[0],
        key,
        value_len,
    }))
}

pub fn read_value<R: Read>(r: &mut R, len: u64) -> Result<Vec<u8>> {
    let mut value = Vec::new();
    r.take(len).read_to_end(&mut value)?;
    if value.len() as u64 != len {
        return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
    }
    Ok(value)
}

/// Consumes and drops `len` bytes.
pub fn skip_value<R: Read>(r: &mut R, len: u64) -> Result<()> {
    let copied = io::copy(&mut r.take(len), &mut io::sink())?;
    if copied != len {
        return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
    }
    Ok(())
}

pub fn encode_response(status: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + payload.len());
    out.push(status);
    out.extend_from_slice(&(payload.len() as u64).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn write_response<W: Write>(w: &mut W, status: u8, payload: &[u8]) -> Result<()> {
    w.write_all(&[status])?;
    w.write_all(&(payload.len() as u64).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// Reads one response, refusing payloads longer than `max_payload`.
pub fn read_response<R: Read>(r: &mut R, max_payload: u64) -> Result<Response> {
    let mut status = [0u8; 1];
    r.read_exact(&mut status)?;
    let len = read_u64(r)?;
    if len > max_payload {
        return Err(Error::Protocol(format!(
            "response payload of {len} bytes exceeds {max_payload}"
        )));
    }
    Ok(Response {
        status: status[0],
        payload: read_value(r, len)?,
    })
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_be_bytes(b))
}
