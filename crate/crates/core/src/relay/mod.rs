//! Key-value storage plus topic publish/subscribe.
//!
//! [`RelayCore`] is the in-process implementation. [`RelayServer`] exposes a
//! core over TCP using the framing in [`protocol`], and [`RelayClient`]
//! speaks that protocol. Both modes follow the same contract:
//!
//! * `put` overwrites an existing key (last writer wins) and counts the
//!   overwrite in [`StoreStats::overwrite_count`].
//! * `evict` is idempotent; evicting an absent key succeeds.
//! * A subscriber receives only messages published after it subscribed,
//!   in publish order. A close marker on the topic ends every current
//!   subscription after the messages published before it.

mod client;
pub mod protocol;
mod server;

use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub use client::{RelayClient, RelaySubscriber};
pub use server::{RelayServer, ServerHandle};

use crate::error::{Error, Result};
use crate::key::ObjectKey;

/// Default cap on a single stored value, 512 MiB.
pub const DEFAULT_MAX_VALUE_BYTES: u64 = 512 * 1024 * 1024;

pub const MAX_TOPIC_LEN: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StoreStats {
    pub object_count: u64,
    pub total_bytes: u64,
    pub put_count: u64,
    pub get_count: u64,
    pub evict_count: u64,
    pub overwrite_count: u64,
}

impl StoreStats {
    pub const ENCODED_LEN: usize = 48;

    pub fn to_bytes(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        for (chunk, v) in out.chunks_exact_mut(8).zip(self.fields()) {
            chunk.copy_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::ENCODED_LEN {
            return Err(Error::Protocol(format!(
                "stats payload must be {} bytes, got {}",
                Self::ENCODED_LEN,
                bytes.len()
            )));
        }
        let f: Vec<u64> = bytes
            .chunks_exact(8)
            .map(|c| u64::from_be_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            object_count: f[0],
            total_bytes: f[1],
            put_count: f[2],
            get_count: f[3],
            evict_count: f[4],
            overwrite_count: f[5],
        })
    }

    fn fields(&self) -> [u64; 6] {
        [
            self.object_count,
            self.total_bytes,
            self.put_count,
            self.get_count,
            self.evict_count,
            self.overwrite_count,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Message(Vec<u8>),
    EndOfStream,
    Timeout,
}

#[derive(Debug, Clone, Copy)]
pub struct RelayConfig {
    pub max_value_bytes: u64,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            max_value_bytes: DEFAULT_MAX_VALUE_BYTES,
        }
    }
}

pub(crate) fn validate_topic(topic: &str) -> Result<()> {
    if topic.is_empty() || topic.len() > MAX_TOPIC_LEN {
        return Err(Error::InvalidTopic(format!(
            "topic must be 1..={MAX_TOPIC_LEN} bytes, got {}",
            topic.len()
        )));
    }
    Ok(())
}

enum Broadcast {
    Message(Arc<Vec<u8>>),
    Close,
}

#[derive(Default)]
struct ObjectTable {
    objects: HashMap<ObjectKey, Arc<Vec<u8>>>,
    stats: StoreStats,
}

struct CoreInner {
    config: RelayConfig,
    table: Mutex<ObjectTable>,
    topics: Mutex<HashMap<String, Vec<Sender<Arc<Broadcast>>>>>,
}

/// In-process relay store. Cloning yields another handle to the same data.
#[derive(Clone)]
pub struct RelayCore {
    inner: Arc<CoreInner>,
}

impl Default for RelayCore {
    fn default() -> Self {
        Self::new(RelayConfig::default())
    }
}

impl RelayCore {
    pub fn new(config: RelayConfig) -> Self {
        Self {
            inner: Arc::new(CoreInner {
                config,
                table: Mutex::new(ObjectTable::default()),
                topics: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn config(&self) -> RelayConfig {
        self.inner.config
    }

    pub fn put(&self, key: &ObjectKey, value: Vec<u8>) -> Result<()> {
        let size = value.len() as u64;
        let max = self.inner.config.max_value_bytes;
        if size > max {
            return Err(Error::Capacity { size, max });
        }
        let mut table = self.inner.table.lock().unwrap();
        let previous = table.objects.insert(key.clone(), Arc::new(value));
        let stats = &mut table.stats;
        stats.put_count += 1;
        stats.total_bytes += size;
        match previous {
            Some(old) => {
                stats.total_bytes -= old.len() as u64;
                stats.overwrite_count += 1;
            }
            None => stats.object_count += 1,
        }
        Ok(())
    }

    pub fn get(&self, key: &ObjectKey) -> Option<Arc<Vec<u8>>> {
        let mut table = self.inner.table.lock().unwrap();
        table.stats.get_count += 1;
        table.objects.get(key).cloned()
    }

    pub fn exists(&self, key: &ObjectKey) -> bool {
        self.inner.table.lock().unwrap().objects.contains_key(key)
    }

    pub fn evict(&self, key: &ObjectKey) {
        let mut table = self.inner.table.lock().unwrap();
        if let Some(old) = table.objects.remove(key) {
            table.stats.object_count -= 1;
            table.stats.total_bytes -= old.len() as u64;
            table.stats.evict_count += 1;
        }
    }

    pub fn stats(&self) -> StoreStats {
        self.inner.table.lock().unwrap().stats
    }

    /// Keys currently stored, in no particular order.
    pub fn keys(&self) -> Vec<ObjectKey> {
        self.inner
            .table
            .lock()
            .unwrap()
            .objects
            .keys()
            .cloned()
            .collect()
    }

    pub fn publish(&self, topic: &str, message: Vec<u8>) -> Result<()> {
        validate_topic(topic)?;
        self.broadcast(topic, Broadcast::Message(Arc::new(message)));
        Ok(())
    }

    /// Sends the close marker to every current subscriber of `topic`.
    pub fn close_topic(&self, topic: &str) -> Result<()> {
        validate_topic(topic)?;
        self.broadcast(topic, Broadcast::Close);
        Ok(())
    }

    fn broadcast(&self, topic: &str, event: Broadcast) {
        let event = Arc::new(event);
        let mut topics = self.inner.topics.lock().unwrap();
        if let Some(subscribers) = topics.get_mut(topic) {
            subscribers.retain(|tx| tx.send(Arc::clone(&event)).is_ok());
            if subscribers.is_empty() {
                topics.remove(topic);
            }
        }
    }

    pub fn subscribe(&self, topic: &str) -> Result<LocalSubscription> {
        validate_topic(topic)?;
        let (tx, rx) = mpsc::channel();
        self.inner
            .topics
            .lock()
            .unwrap()
            .entry(topic.to_owned())
            .or_default()
            .push(tx);
        Ok(LocalSubscription {
            topic: topic.to_owned(),
            rx,
            ended: false,
        })
    }
}

/// Subscription to one topic of a [`RelayCore`].
pub struct LocalSubscription {
    topic: String,
    rx: Receiver<Arc<Broadcast>>,
    ended: bool,
}

impl LocalSubscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Waits up to `timeout` for the next message; `None` waits forever.
    ///
    /// Once the close marker has been seen every later call returns
    /// [`Delivery::EndOfStream`].
    pub fn next(&mut self, timeout: Option<Duration>) -> Delivery {
        if self.ended {
            return Delivery::EndOfStream;
        }
        let received = match timeout {
            Some(t) => self.rx.recv_timeout(t),
            None => self.rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        match received {
            Ok(event) => match &*event {
                Broadcast::Message(m) => Delivery::Message(m.as_ref().clone()),
                Broadcast::Close => {
                    self.ended = true;
                    Delivery::EndOfStream
                }
            },
            Err(RecvTimeoutError::Timeout) => Delivery::Timeout,
            // The sender side lives in the core, so this only happens when
            // the core is gone.
            Err(RecvTimeoutError::Disconnected) => {
                self.ended = true;
                Delivery::EndOfStream
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap as Map;

    fn key(n: u8) -> ObjectKey {
        ObjectKey::from_parts("t", [n; 16]).unwrap()
    }

    #[test]
    fn put_get_round_trip() {
        let core = RelayCore::default();
        core.put(&key(1), Vec::new()).unwrap();
        assert_eq!(core.get(&key(1)).unwrap().as_slice(), b"");
        let data: Vec<u8> = (0..100).map(|_| rand::random()).collect();
        core.put(&key(2), data.clone()).unwrap();
        assert_eq!(*core.get(&key(2)).unwrap(), data);
        assert!(core.get(&key(3)).is_none());
    }

    #[test]
    fn overwrite_matches_sequential_map_semantics() {
        let core = RelayCore::default();
        let mut oracle: Map<ObjectKey, Vec<u8>> = Map::new();
        let ops: [(u8, &[u8]); 5] = [(1, b"v1"), (1, b"v2"), (2, b"x"), (1, b"v3"), (2, b"")];
        for (k, v) in ops {
            core.put(&key(k), v.to_vec()).unwrap();
            oracle.insert(key(k), v.to_vec());
        }
        for (k, v) in &oracle {
            assert_eq!(core.get(k).unwrap().as_slice(), v.as_slice());
        }
        let stats = core.stats();
        assert_eq!(stats.object_count, 2);
        assert_eq!(stats.overwrite_count, 3);
        assert_eq!(stats.total_bytes, 2);
    }

    #[test]
    fn evict_is_idempotent_and_counted() {
        let core = RelayCore::default();
        core.evict(&key(9));
        for n in 0..3 {
            core.put(&key(n), vec![n; 4]).unwrap();
        }
        for n in 0..3 {
            core.evict(&key(n));
            core.evict(&key(n));
            assert!(!core.exists(&key(n)));
        }
        let stats = core.stats();
        assert_eq!(stats.object_count, 0);
        assert_eq!(stats.total_bytes, 0);
        assert_eq!(stats.evict_count, 3);
    }

    #[test]
    fn stats_counts_live_objects() {
        let core = RelayCore::default();
        assert_eq!(core.stats(), StoreStats::default());
        for n in 0..8 {
            core.put(&key(n), vec![0; 10]).unwrap();
        }
        for n in 0..3 {
            core.evict(&key(n));
        }
        assert_eq!(core.stats().object_count, 5);
        assert_eq!(core.stats().object_count as usize, core.keys().len());
    }

    #[test]
    fn large_value_accounting() {
        let core = RelayCore::default();
        core.put(&key(1), vec![7; 10_000_000]).unwrap();
        assert_eq!(core.stats().total_bytes, 10_000_000);
    }

    #[test]
    fn oversize_put_is_rejected() {
        let core = RelayCore::new(RelayConfig { max_value_bytes: 4 });
        assert!(matches!(
            core.put(&key(1), vec![0; 5]),
            Err(Error::Capacity { size: 5, max: 4 })
        ));
        core.put(&key(1), vec![0; 4]).unwrap();
    }

    #[test]
    fn pubsub_fifo_fanout_and_close() {
        let core = RelayCore::default();
        let mut a = core.subscribe("t").unwrap();
        let mut b = core.subscribe("t").unwrap();
        for m in [b"m1", b"m2", b"m3"] {
            core.publish("t", m.to_vec()).unwrap();
        }
        core.close_topic("t").unwrap();
        for sub in [&mut a, &mut b] {
            for m in [b"m1", b"m2", b"m3"] {
                assert_eq!(sub.next(None), Delivery::Message(m.to_vec()));
            }
            assert_eq!(sub.next(None), Delivery::EndOfStream);
            assert_eq!(sub.next(Some(Duration::ZERO)), Delivery::EndOfStream);
        }
    }

    #[test]
    fn late_subscribers_miss_earlier_messages() {
        let core = RelayCore::default();
        core.publish("t", b"early".to_vec()).unwrap();
        let mut sub = core.subscribe("t").unwrap();
        core.publish("t", b"late".to_vec()).unwrap();
        assert_eq!(sub.next(None), Delivery::Message(b"late".to_vec()));
    }

    #[test]
    fn idle_topic_times_out() {
        let core = RelayCore::default();
        let mut sub = core.subscribe("idle").unwrap();
        let start = std::time::Instant::now();
        assert_eq!(sub.next(Some(Duration::from_millis(50))), Delivery::Timeout);
        assert!(start.elapsed() >= Duration::from_millis(50));
    }

    #[test]
    fn topic_validation() {
        let core = RelayCore::default();
        assert!(core.publish("", vec![]).is_err());
        assert!(core.subscribe(&"x".repeat(256)).is_err());
        assert!(core.publish(&"x".repeat(255), vec![]).is_ok());
    }

    #[test]
    fn stats_wire_form_round_trips() {
        let s = StoreStats {
            object_count: 1,
            total_bytes: 2,
            put_count: 3,
            get_count: 4,
            evict_count: 5,
            overwrite_count: 6,
        };
        assert_eq!(StoreStats::from_bytes(&s.to_bytes()).unwrap(), s);
        assert!(StoreStats::from_bytes(&[0; 8]).is_err());
    }
}
