use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::protocol::*;
use super::{validate_topic, Delivery, StoreStats};
use crate::error::{Error, Result};
use crate::key::ObjectKey;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

/// Blocking client for one relay connection.
///
/// A client serves one caller at a time; open more connections for
/// concurrent use.
pub struct RelayClient {
    addr: SocketAddr,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl RelayClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let mut last_err = None;
        for addr in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
                Ok(stream) => return Self::from_stream(addr, stream),
                Err(e) => last_err = Some(e),
            }
        }
        Err(Error::Unreachable(match last_err {
            Some(e) => e.to_string(),
            None => "address resolved to nothing".into(),
        }))
    }

    fn from_stream(addr: SocketAddr, stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            addr,
            reader: BufReader::with_capacity(256 * 1024, stream.try_clone()?),
            writer: BufWriter::with_capacity(256 * 1024, stream),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn call(&mut self, op: u8, key: &[u8], value: &[u8]) -> Result<Response> {
        write_request(&mut self.writer, op, key, value)?;
        read_response(&mut self.reader, u64::MAX)
    }

    fn expect_ok(&mut self, op: u8, key: &[u8], value: &[u8]) -> Result<Vec<u8>> {
        let resp = self.call(op, key, value)?;
        match resp.status {
            STATUS_OK => Ok(resp.payload),
            STATUS_ERROR => Err(resp.into_error()),
            s => Err(Error::Protocol(format!("unexpected status 0x{s:02x}"))),
        }
    }

    pub fn put(&mut self, key: &ObjectKey, value: &[u8]) -> Result<()> {
        self.expect_ok(OP_PUT, key.to_string().as_bytes(), value)?;
        Ok(())
    }

    pub fn get(&mut self, key: &ObjectKey) -> Result<Option<Vec<u8>>> {
        let resp = self.call(OP_GET, key.to_string().as_bytes(), &[])?;
        match resp.status {
            STATUS_OK => Ok(Some(resp.payload)),
            STATUS_NOT_FOUND => Ok(None),
            STATUS_ERROR => Err(resp.into_error()),
            s => Err(Error::Protocol(format!("unexpected status 0x{s:02x}"))),
        }
    }

    pub fn exists(&mut self, key: &ObjectKey) -> Result<bool> {
        match self.expect_ok(OP_EXISTS, key.to_string().as_bytes(), &[])?[..] {
            [0] => Ok(false),
            [1] => Ok(true),
            ref other => Err(Error::Protocol(format!("bad EXISTS payload {other:?}"))),
        }
    }

    pub fn evict(&mut self, key: &ObjectKey) -> Result<()> {
        self.expect_ok(OP_EVICT, key.to_string().as_bytes(), &[])?;
        Ok(())
    }

    pub fn publish(&mut self, topic: &str, message: &[u8]) -> Result<()> {
        validate_topic(topic)?;
        self.expect_ok(OP_PUBLISH, topic.as_bytes(), message)?;
        Ok(())
    }

    /// Sends the close marker on `topic`.
    pub fn close_topic(&mut self, topic: &str) -> Result<()> {
        validate_topic(topic)?;
        self.expect_ok(OP_CLOSE, topic.as_bytes(), &[])?;
        Ok(())
    }

    /// Subscribes this connection to `topic`; read with [`RelayClient::next`].
    pub fn subscribe(&mut self, topic: &str) -> Result<()> {
        validate_topic(topic)?;
        self.expect_ok(OP_SUBSCRIBE, topic.as_bytes(), &[])?;
        Ok(())
    }

    pub fn next(&mut self, topic: &str, timeout: Option<Duration>) -> Result<Delivery> {
        let value = match timeout {
            Some(t) => (t.as_millis().min(u64::MAX as u128) as u64)
                .to_be_bytes()
                .to_vec(),
            None => Vec::new(),
        };
        let resp = self.call(OP_NEXT, topic.as_bytes(), &value)?;
        match resp.status {
            STATUS_OK => Ok(Delivery::Message(resp.payload)),
            STATUS_TIMEOUT => Ok(Delivery::Timeout),
            STATUS_END_OF_STREAM => Ok(Delivery::EndOfStream),
            STATUS_ERROR => Err(resp.into_error()),
            s => Err(Error::Protocol(format!("unexpected status 0x{s:02x}"))),
        }
    }

    pub fn stats(&mut self) -> Result<StoreStats> {
        StoreStats::from_bytes(&self.expect_ok(OP_STATS, &[], &[])?)
    }
}

/// A dedicated connection subscribed to a single topic.
pub struct RelaySubscriber {
    client: RelayClient,
    topic: String,
}

impl RelaySubscriber {
    pub fn connect<A: ToSocketAddrs>(addr: A, topic: &str) -> Result<Self> {
        let mut client = RelayClient::connect(addr)?;
        client.subscribe(topic)?;
        Ok(Self {
            client,
            topic: topic.to_owned(),
        })
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn next(&mut self, timeout: Option<Duration>) -> Result<Delivery> {
        self.client.next(&self.topic, timeout)
    }
}
