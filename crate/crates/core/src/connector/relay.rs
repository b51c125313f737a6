use std::sync::Mutex;

use super::{Connector, ConnectorConfig, ConnectorKind};
use crate::error::{Error, Result};
use crate::key::ObjectKey;
use crate::relay::{RelayClient, StoreStats};

/// Idle connections kept per connector.
const MAX_IDLE: usize = 8;

/// Connector speaking the relay protocol, with a small connection pool so
/// concurrent callers do not serialize on one socket.
pub struct RelayConnector {
    addr: String,
    idle: Mutex<Vec<RelayClient>>,
}

impl RelayConnector {
    /// Connects once to fail early on an unreachable server.
    pub fn connect(addr: &str) -> Result<Self> {
        let client = RelayClient::connect(addr).map_err(|e| match e {
            Error::Transport(io) => Error::Unreachable(format!("{addr}: {io}")),
            Error::Unreachable(msg) => Error::Unreachable(format!("{addr}: {msg}")),
            other => other,
        })?;
        Ok(Self {
            addr: addr.to_owned(),
            idle: Mutex::new(vec![client]),
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn with_client<T>(&self, op: impl FnOnce(&mut RelayClient) -> Result<T>) -> Result<T> {
        let pooled = self.idle.lock().unwrap().pop();
        let mut client = match pooled {
            Some(c) => c,
            None => RelayClient::connect(self.addr.as_str())?,
        };
        let out = op(&mut client);
        // A transport or framing failure leaves the stream in an unknown
        // state, so only healthy connections go back to the pool.
        if !matches!(out, Err(Error::Transport(_) | Error::Protocol(_))) {
            let mut idle = self.idle.lock().unwrap();
            if idle.len() < MAX_IDLE {
                idle.push(client);
            }
        }
        out
    }
}

impl Connector for RelayConnector {
    fn put(&self, key: &ObjectKey, value: Vec<u8>) -> Result<()> {
        self.with_client(|c| c.put(key, &value))
    }

    fn get(&self, key: &ObjectKey) -> Result<Option<Vec<u8>>> {
        self.with_client(|c| c.get(key))
    }

    fn exists(&self, key: &ObjectKey) -> Result<bool> {
        self.with_client(|c| c.exists(key))
    }

    fn evict(&self, key: &ObjectKey) -> Result<()> {
        self.with_client(|c| c.evict(key))
    }

    fn config(&self) -> ConnectorConfig {
        ConnectorConfig::new(ConnectorKind::Relay).with("addr", self.addr.as_str())
    }

    fn stats(&self) -> Result<StoreStats> {
        self.with_client(|c| c.stats())
    }
}
