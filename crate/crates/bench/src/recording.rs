//! Connector wrapper that logs every data operation.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use proxyflow::connector::{Connector, ConnectorConfig};
use proxyflow::relay::StoreStats;
use proxyflow::{ObjectKey, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Put,
    Get,
    Evict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    /// Seconds since the connector was created.
    pub at: f64,
    pub op: Op,
    pub key: ObjectKey,
    /// Bytes written or read; 0 for evictions and misses.
    pub bytes: u64,
}

/// `exists` calls pass through unlogged; future polling would drown the log.
pub struct RecordingConnector {
    inner: Arc<dyn Connector>,
    epoch: Instant,
    log: Mutex<Vec<Event>>,
}

impl RecordingConnector {
    pub fn new(inner: Arc<dyn Connector>) -> Self {
        Self {
            inner,
            epoch: Instant::now(),
            log: Mutex::new(Vec::new()),
        }
    }

    fn record(&self, op: Op, key: &ObjectKey, bytes: u64) {
        let at = self.epoch.elapsed().as_secs_f64();
        self.log.lock().unwrap().push(Event {
            at,
            op,
            key: key.clone(),
            bytes,
        });
    }

    pub fn events(&self) -> Vec<Event> {
        self.log.lock().unwrap().clone()
    }

    /// Keys of evictions that removed something, in order.
    pub fn evictions(&self) -> Vec<ObjectKey> {
        self.events()
            .into_iter()
            .filter(|e| e.op == Op::Evict && e.bytes > 0)
            .map(|e| e.key)
            .collect()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl Connector for RecordingConnector {
    fn put(&self, key: &ObjectKey, value: Vec<u8>) -> Result<()> {
        let n = value.len() as u64;
        self.inner.put(key, value)?;
        self.record(Op::Put, key, n);
        Ok(())
    }

    fn get(&self, key: &ObjectKey) -> Result<Option<Vec<u8>>> {
        let value = self.inner.get(key)?;
        self.record(Op::Get, key, value.as_ref().map_or(0, |v| v.len() as u64));
        Ok(value)
    }

    fn exists(&self, key: &ObjectKey) -> Result<bool> {
        self.inner.exists(key)
    }

    // Logged with a nonzero byte count only when the key was present.
    fn evict(&self, key: &ObjectKey) -> Result<()> {
        let present = self.inner.exists(key)?;
        self.inner.evict(key)?;
        self.record(Op::Evict, key, present as u64);
        Ok(())
    }

    fn config(&self) -> ConnectorConfig {
        self.inner.config()
    }

    fn stats(&self) -> Result<StoreStats> {
        self.inner.stats()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proxyflow::connector::MemoryConnector;

    #[test]
    fn logs_in_order() {
        let r = RecordingConnector::new(Arc::new(MemoryConnector::unique()));
        let a = ObjectKey::new("t").unwrap();
        let b = ObjectKey::new("t").unwrap();
        r.put(&a, vec![1, 2, 3]).unwrap();
        r.get(&a).unwrap();
        r.get(&b).unwrap();
        r.exists(&a).unwrap();
        r.evict(&b).unwrap();
        r.evict(&a).unwrap();
        let ops: Vec<_> = r.events().iter().map(|e| (e.op, e.bytes)).collect();
        assert_eq!(ops, [(Op::Put, 3), (Op::Get, 3), (Op::Get, 0), (Op::Evict, 0), (Op::Evict, 1)]);
        assert_eq!(r.evictions(), [a]);
    }
}
