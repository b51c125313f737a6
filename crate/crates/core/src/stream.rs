//! Streams of proxies: small events over pub/sub, payloads in a store.
//!
//! [`StreamProducer::send`] stores the payload, then publishes a
//! [`StreamEvent`] describing where it lives. [`StreamConsumer::next`]
//! yields unresolved proxies, so a consumer that only forwards them never
//! moves payload bytes.
//!
//! An event is a canonical map:
//!
//! | key       | value                                        |
//! |-----------|----------------------------------------------|
//! | `topic`   | topic name                                   |
//! | `factory` | payload factory map, `null` for `close`      |
//! | `meta`    | string to string map of user metadata        |
//! | `seq`     | per-producer, per-topic sequence number from 0 |
//! | `kind`    | `item` or `close`                            |
//!
//! A message is one event map or, when batching, a list of them.
//!
//! Payloads default to evict-on-resolve, which suits streams where each item
//! is resolved by exactly one consumer. With several consumers resolving the
//! same item, the first wins and the others get a dangling reference, so
//! fan-out streams should send with `evict_on_resolve = false`.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::marker::PhantomData;
use std::time::{Duration, Instant};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, Value};
use crate::error::{Error, Result};
use crate::relay::{Delivery, LocalSubscription, RelayClient, RelayCore, RelaySubscriber};
use crate::store::{Factory, Proxy, ResolveKind, Store};

pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Item,
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub topic: String,
    pub factory: Option<Factory>,
    #[serde(rename = "meta")]
    pub metadata: Metadata,
    #[serde(rename = "seq")]
    pub sequence: u64,
    pub kind: EventKind,
}

impl StreamEvent {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        codec::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        codec::from_bytes(bytes).map_err(|e| Error::MalformedEvent(e.to_string()))
    }
}

/// Decodes one published message into its events.
pub fn decode_message(bytes: &[u8]) -> Result<Vec<StreamEvent>> {
    let malformed = |e: Error| Error::MalformedEvent(e.to_string());
    match codec::decode(bytes).map_err(malformed)? {
        Value::List(items) => items
            .into_iter()
            .map(|v| codec::from_value(v).map_err(malformed))
            .collect(),
        v @ Value::Map(_) => Ok(vec![codec::from_value(v).map_err(malformed)?]),
        other => Err(Error::MalformedEvent(format!(
            "expected an event map or list, found {}",
            other.type_name()
        ))),
    }
}

fn encode_message(events: &[StreamEvent]) -> Result<Vec<u8>> {
    match events {
        [single] => single.to_bytes(),
        many => codec::to_bytes(many),
    }
}

/// Sending side of a broker.
pub trait Publisher: Send {
    fn publish(&mut self, topic: &str, message: Vec<u8>) -> Result<()>;

    fn close_topic(&mut self, topic: &str) -> Result<()>;
}

/// Receiving side of a broker subscription.
pub trait Subscriber: Send {
    fn next_message(&mut self, timeout: Option<Duration>) -> Result<Delivery>;
}

impl<P: Publisher + ?Sized> Publisher for Box<P> {
    fn publish(&mut self, topic: &str, message: Vec<u8>) -> Result<()> {
        (**self).publish(topic, message)
    }

    fn close_topic(&mut self, topic: &str) -> Result<()> {
        (**self).close_topic(topic)
    }
}

impl<S: Subscriber + ?Sized> Subscriber for Box<S> {
    fn next_message(&mut self, timeout: Option<Duration>) -> Result<Delivery> {
        (**self).next_message(timeout)
    }
}

impl Publisher for RelayCore {
    fn publish(&mut self, topic: &str, message: Vec<u8>) -> Result<()> {
        RelayCore::publish(self, topic, message)
    }

    fn close_topic(&mut self, topic: &str) -> Result<()> {
        RelayCore::close_topic(self, topic)
    }
}

impl Publisher for RelayClient {
    fn publish(&mut self, topic: &str, message: Vec<u8>) -> Result<()> {
        RelayClient::publish(self, topic, &message)
    }

    fn close_topic(&mut self, topic: &str) -> Result<()> {
        RelayClient::close_topic(self, topic)
    }
}

impl Subscriber for LocalSubscription {
    fn next_message(&mut self, timeout: Option<Duration>) -> Result<Delivery> {
        Ok(self.next(timeout))
    }
}

impl Subscriber for RelaySubscriber {
    fn next_message(&mut self, timeout: Option<Duration>) -> Result<Delivery> {
        self.next(timeout)
    }
}

type MetaFilter = Box<dyn Fn(&Metadata) -> bool + Send>;

/// Topic to store mapping plus batching and filtering for a producer.
pub struct ProducerConfig {
    topics: HashMap<String, Store>,
    batch_size: usize,
    filter: Option<MetaFilter>,
}

impl Default for ProducerConfig {
    fn default() -> Self {
        Self {
            topics: HashMap::new(),
            batch_size: 1,
            filter: None,
        }
    }
}

impl ProducerConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn topic(mut self, topic: &str, store: &Store) -> Self {
        self.topics.insert(topic.to_owned(), store.clone());
        self
    }

    /// Events per published message. Values below 1 are treated as 1.
    pub fn batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    /// Items whose metadata fails `keep` are dropped before storing.
    pub fn filter(mut self, keep: impl Fn(&Metadata) -> bool + Send + 'static) -> Self {
        self.filter = Some(Box::new(keep));
        self
    }
}

pub struct StreamProducer<P> {
    publisher: P,
    config: ProducerConfig,
    pending: HashMap<String, Vec<StreamEvent>>,
    next_seq: HashMap<String, u64>,
    closed: HashSet<String>,
}

impl<P: Publisher> StreamProducer<P> {
    pub fn new(publisher: P, config: ProducerConfig) -> Self {
        Self {
            publisher,
            config,
            pending: HashMap::new(),
            next_seq: HashMap::new(),
            closed: HashSet::new(),
        }
    }

    pub fn publisher(&self) -> &P {
        &self.publisher
    }

    fn store_for(&self, topic: &str) -> Result<&Store> {
        self.config
            .topics
            .get(topic)
            .ok_or_else(|| Error::UnmappedTopic(topic.to_owned()))
    }

    fn take_seq(&mut self, topic: &str) -> u64 {
        let seq = self.next_seq.entry(topic.to_owned()).or_insert(0);
        let current = *seq;
        *seq += 1;
        current
    }

    /// Sends with `evict_on_resolve = true`.
    pub fn send<T: Serialize>(&mut self, topic: &str, value: &T, metadata: Metadata) -> Result<()> {
        self.send_with(topic, value, metadata, true)
    }

    pub fn send_with<T: Serialize>(
        &mut self,
        topic: &str,
        value: &T,
        metadata: Metadata,
        evict_on_resolve: bool,
    ) -> Result<()> {
        let store = self.store_for(topic)?.clone();
        if self.closed.contains(topic) {
            return Err(Error::StreamClosed(topic.to_owned()));
        }
        if let Some(keep) = &self.config.filter {
            if !keep(&metadata) {
                return Ok(());
            }
        }
        let key = store.put_object(value)?;
        let event = StreamEvent {
            topic: topic.to_owned(),
            factory: Some(store.factory(key, ResolveKind::Stream, evict_on_resolve)),
            metadata,
            sequence: self.take_seq(topic),
            kind: EventKind::Item,
        };
        let batch = self.pending.entry(topic.to_owned()).or_default();
        batch.push(event);
        if batch.len() >= self.config.batch_size {
            self.flush(topic)?;
        }
        Ok(())
    }

    /// Publishes any partially filled batch for `topic`.
    pub fn flush(&mut self, topic: &str) -> Result<()> {
        let Some(batch) = self.pending.remove(topic) else {
            return Ok(());
        };
        if batch.is_empty() {
            return Ok(());
        }
        let message = encode_message(&batch)?;
        self.publisher.publish(topic, message)
    }

    /// Flushes, then publishes the close event. Closing twice is a no-op.
    pub fn close(&mut self, topic: &str) -> Result<()> {
        self.store_for(topic)?;
        if self.closed.contains(topic) {
            return Ok(());
        }
        self.flush(topic)?;
        let event = StreamEvent {
            topic: topic.to_owned(),
            factory: None,
            metadata: Metadata::new(),
            sequence: self.take_seq(topic),
            kind: EventKind::Close,
        };
        self.publisher.publish(topic, event.to_bytes()?)?;
        self.closed.insert(topic.to_owned());
        Ok(())
    }

    pub fn close_all(&mut self) -> Result<()> {
        let mut topics: Vec<_> = self.config.topics.keys().cloned().collect();
        topics.sort();
        for t in topics {
            self.close(&t)?;
        }
        Ok(())
    }
}

/// An item yielded by a consumer: the unresolved payload proxy plus its
/// event's metadata.
pub struct StreamItem<T> {
    pub proxy: Proxy<T>,
    pub metadata: Metadata,
    pub topic: String,
    pub sequence: u64,
}

impl<T> fmt::Debug for StreamItem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StreamItem")
            .field("topic", &self.topic)
            .field("sequence", &self.sequence)
            .field("metadata", &self.metadata)
            .field("proxy", &self.proxy)
            .finish()
    }
}

pub struct StreamConsumer<T, S> {
    subscriber: S,
    filter: Option<MetaFilter>,
    sampler: Option<(f64, ChaCha8Rng)>,
    buffer: VecDeque<StreamEvent>,
    ended: bool,
    bytes_received: u64,
    skipped: u64,
    _item: PhantomData<fn() -> T>,
}

impl<T, S: Subscriber> StreamConsumer<T, S> {
    pub fn new(subscriber: S) -> Self {
        Self {
            subscriber,
            filter: None,
            sampler: None,
            buffer: VecDeque::new(),
            ended: false,
            bytes_received: 0,
            skipped: 0,
            _item: PhantomData,
        }
    }

    /// Skips items whose metadata fails `keep`.
    pub fn filter(mut self, keep: impl Fn(&Metadata) -> bool + Send + 'static) -> Self {
        self.filter = Some(Box::new(keep));
        self
    }

    /// Keeps each item with probability `rate`, drawn from a generator
    /// seeded with `seed`.
    pub fn sample(mut self, rate: f64, seed: u64) -> Self {
        self.sampler = Some((rate.clamp(0.0, 1.0), ChaCha8Rng::seed_from_u64(seed)));
        self
    }

    /// Bytes of event messages received so far.
    pub fn bytes_received(&self) -> u64 {
        self.bytes_received
    }

    /// Items dropped by the filter or sampler.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn is_ended(&self) -> bool {
        self.ended && self.buffer.is_empty()
    }

    fn keep(&mut self, event: &StreamEvent) -> bool {
        if let Some(keep) = &self.filter {
            if !keep(&event.metadata) {
                return false;
            }
        }
        if let Some((rate, rng)) = &mut self.sampler {
            if rng.gen::<f64>() >= *rate {
                return false;
            }
        }
        true
    }

    // A skipped evict-on-resolve payload would otherwise never be removed.
    fn discard(&mut self, factory: &Factory) {
        self.skipped += 1;
        if !factory.evict_on_resolve {
            return;
        }
        let evicted = factory.store().and_then(|s| s.evict(&factory.key));
        if let Err(e) = evicted {
            warn!("could not evict skipped payload {}: {e}", factory.key);
        }
    }

    /// Next item event, after filtering. `Ok(None)` once the stream closed;
    /// [`Error::Timeout`] if nothing arrived within `timeout`.
    pub fn next_event(&mut self, timeout: Option<Duration>) -> Result<Option<StreamEvent>> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            while let Some(event) = self.buffer.pop_front() {
                match event.kind {
                    EventKind::Close => {
                        self.ended = true;
                        self.buffer.clear();
                        return Ok(None);
                    }
                    EventKind::Item => {
                        let Some(factory) = &event.factory else {
                            return Err(Error::MalformedEvent("item event without factory".into()));
                        };
                        if self.keep(&event) {
                            return Ok(Some(event));
                        }
                        let factory = factory.clone();
                        self.discard(&factory);
                    }
                }
            }
            if self.ended {
                return Ok(None);
            }
            let wait = deadline.map(|d| d.saturating_duration_since(Instant::now()));
            match self.subscriber.next_message(wait)? {
                Delivery::Message(bytes) => {
                    self.bytes_received += bytes.len() as u64;
                    self.buffer.extend(decode_message(&bytes)?);
                }
                Delivery::EndOfStream => self.ended = true,
                Delivery::Timeout => return Err(Error::Timeout(timeout.unwrap_or_default())),
            }
        }
    }

    /// Next unresolved proxy with its metadata.
    pub fn next(&mut self, timeout: Option<Duration>) -> Result<Option<StreamItem<T>>> {
        Ok(self.next_event(timeout)?.map(|event| StreamItem {
            proxy: Proxy::from_factory(event.factory.expect("item events carry a factory")),
            metadata: event.metadata,
            topic: event.topic,
            sequence: event.sequence,
        }))
    }
}

/// Blocks for each item; ends when the stream closes.
impl<T, S: Subscriber> Iterator for StreamConsumer<T, S> {
    type Item = Result<StreamItem<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        StreamConsumer::next(self, None).transpose()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::connector::MemoryConnector;

    fn setup() -> (Store, RelayCore) {
        let mem = MemoryConnector::unique();
        let core = mem.core().clone();
        (Store::new("stream", Arc::new(mem)).unwrap(), core)
    }

    fn meta(pairs: &[(&str, &str)]) -> Metadata {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    const T: Option<Duration> = Some(Duration::from_secs(5));

    #[test]
    fn items_arrive_unresolved_in_order() {
        let (store, core) = setup();
        let mut consumer: StreamConsumer<String, _> = StreamConsumer::new(core.subscribe("t").unwrap());
        let mut producer = StreamProducer::new(core.clone(), ProducerConfig::new().topic("t", &store));
        for (i, s) in ["a", "b", "c"].iter().enumerate() {
            producer.send("t", &s.to_string(), meta(&[("step", &i.to_string())])).unwrap();
        }
        producer.close("t").unwrap();
        let mut seen = Vec::new();
        while let Some(item) = consumer.next(T).unwrap() {
            assert!(!item.proxy.is_resolved());
            assert_eq!(item.metadata["step"], item.sequence.to_string());
            seen.push(item.proxy.resolve().unwrap().clone());
        }
        assert_eq!(seen, ["a", "b", "c"]);
        assert_eq!(store.stats().unwrap().object_count, 0);
        assert!(consumer.next(T).unwrap().is_none());
    }

    #[test]
    fn metadata_without_resolving() {
        let (store, core) = setup();
        let mut consumer: StreamConsumer<Vec<u8>, _> = StreamConsumer::new(core.subscribe("t").unwrap());
        let mut producer = StreamProducer::new(core.clone(), ProducerConfig::new().topic("t", &store));
        producer.send("t", &vec![0u8; 1000], meta(&[("step", "3")])).unwrap();
        let item = consumer.next(T).unwrap().unwrap();
        assert_eq!(item.metadata["step"], "3");
        assert_eq!(store.stats().unwrap().get_count, 0);
    }

    #[test]
    fn close_flushes_partial_batch() {
        let (store, core) = setup();
        let mut sub = core.subscribe("t").unwrap();
        let mut consumer: StreamConsumer<i64, _> = StreamConsumer::new(core.subscribe("t").unwrap());
        let mut producer = StreamProducer::new(
            core.clone(),
            ProducerConfig::new().topic("t", &store).batch_size(4),
        );
        producer.send("t", &1i64, Metadata::new()).unwrap();
        producer.send("t", &2i64, Metadata::new()).unwrap();
        assert_eq!(sub.next(Some(Duration::from_millis(20))), Delivery::Timeout);
        producer.close("t").unwrap();
        producer.close("t").unwrap();
        let values: Vec<i64> = consumer.by_ref().map(|i| *i.unwrap().proxy).collect();
        assert_eq!(values, [1, 2]);
        // One batch message plus one close message.
        let Delivery::Message(batch) = sub.next(T) else { panic!() };
        assert_eq!(decode_message(&batch).unwrap().len(), 2);
        assert!(matches!(codec::decode(&batch).unwrap(), Value::List(_)));
        let Delivery::Message(close) = sub.next(T) else { panic!() };
        assert_eq!(decode_message(&close).unwrap()[0].kind, EventKind::Close);
        assert_eq!(sub.next(Some(Duration::from_millis(20))), Delivery::Timeout);
    }

    #[test]
    fn producer_filter_skips_storage() {
        let (store, core) = setup();
        let mut producer = StreamProducer::new(
            core.clone(),
            ProducerConfig::new()
                .topic("t", &store)
                .filter(|m| m.get("keep").is_some_and(|v| v == "yes")),
        );
        let mut sub = core.subscribe("t").unwrap();
        producer.send("t", &1i64, meta(&[("keep", "no")])).unwrap();
        assert_eq!(store.stats().unwrap().object_count, 0);
        assert_eq!(sub.next(Some(Duration::from_millis(20))), Delivery::Timeout);
        producer.send("t", &1i64, meta(&[("keep", "yes")])).unwrap();
        assert_eq!(store.stats().unwrap().object_count, 1);
    }

    #[test]
    fn consumer_filter_evicts_skipped_payloads() {
        let (store, core) = setup();
        let mut consumer: StreamConsumer<i64, _> =
            StreamConsumer::new(core.subscribe("t").unwrap()).filter(|_| false);
        let mut producer = StreamProducer::new(core.clone(), ProducerConfig::new().topic("t", &store));
        for i in 0..10i64 {
            producer.send("t", &i, Metadata::new()).unwrap();
        }
        producer.close("t").unwrap();
        assert!(consumer.next(T).unwrap().is_none());
        assert_eq!(consumer.skipped(), 10);
        assert_eq!(store.stats().unwrap().object_count, 0);
    }

    #[test]
    fn full_rate_sampling_keeps_everything() {
        let (store, core) = setup();
        let consumer: StreamConsumer<i64, _> =
            StreamConsumer::new(core.subscribe("t").unwrap()).sample(1.0, 7);
        let mut producer = StreamProducer::new(core.clone(), ProducerConfig::new().topic("t", &store));
        for i in 0..50i64 {
            producer.send("t", &i, Metadata::new()).unwrap();
        }
        producer.close("t").unwrap();
        assert_eq!(consumer.count(), 50);
    }

    #[test]
    fn half_rate_sampling_is_binomial() {
        let (store, core) = setup();
        let mut consumer: StreamConsumer<i64, _> =
            StreamConsumer::new(core.subscribe("t").unwrap()).sample(0.5, 42);
        let mut producer = StreamProducer::new(
            core.clone(),
            ProducerConfig::new().topic("t", &store).batch_size(100),
        );
        let n = 10_000i64;
        for i in 0..n {
            producer.send("t", &i, Metadata::new()).unwrap();
        }
        producer.close("t").unwrap();
        let mut kept = 0;
        while let Some(item) = consumer.next(T).unwrap() {
            drop(item);
            kept += 1;
        }
        // 3 sigma of Binomial(10000, 0.5) is 150.
        assert!((kept - 5000i64).abs() <= 150, "kept {kept}");
        assert_eq!(consumer.skipped() as i64, n - kept);
    }

    #[test]
    fn idle_topic_times_out() {
        let (_, core) = setup();
        let mut consumer: StreamConsumer<i64, _> = StreamConsumer::new(core.subscribe("idle").unwrap());
        let start = Instant::now();
        assert!(matches!(consumer.next(Some(Duration::from_millis(50))), Err(Error::Timeout(_))));
        assert!(start.elapsed() >= Duration::from_millis(50));
    }

    #[test]
    fn unmapped_topic_and_closed_topic() {
        let (store, core) = setup();
        let mut producer = StreamProducer::new(core, ProducerConfig::new().topic("t", &store));
        assert!(matches!(producer.send("x", &1i64, Metadata::new()), Err(Error::UnmappedTopic(_))));
        assert!(matches!(producer.close("x"), Err(Error::UnmappedTopic(_))));
        producer.close("t").unwrap();
        assert!(matches!(producer.send("t", &1i64, Metadata::new()), Err(Error::StreamClosed(_))));
    }

    #[test]
    fn malformed_message_is_reported() {
        let (_, core) = setup();
        let mut consumer: StreamConsumer<i64, _> = StreamConsumer::new(core.subscribe("t").unwrap());
        core.publish("t", b"\xffjunk".to_vec()).unwrap();
        assert!(matches!(consumer.next(T), Err(Error::MalformedEvent(_))));
        core.publish("t", codec::to_bytes(&5i64).unwrap()).unwrap();
        assert!(matches!(consumer.next(T), Err(Error::MalformedEvent(_))));
    }

    #[test]
    fn event_size_is_independent_of_payload() {
        let (store, _) = setup();
        let small = store.factory(store.new_key(), ResolveKind::Stream, true);
        let event = StreamEvent {
            topic: "t".into(),
            factory: Some(small),
            metadata: meta(&[("k", "v")]),
            sequence: 12,
            kind: EventKind::Item,
        };
        let bytes = event.to_bytes().unwrap();
        assert!(bytes.len() <= 1024);
        let map = codec::decode(&bytes).unwrap();
        let keys: Vec<_> = map.as_map().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["factory", "kind", "meta", "seq", "topic"]);
        assert_eq!(StreamEvent::from_bytes(&bytes).unwrap(), event);
    }

    #[test]
    fn broker_close_marker_ends_consumer() {
        let (_, core) = setup();
        let mut consumer: StreamConsumer<i64, _> = StreamConsumer::new(core.subscribe("t").unwrap());
        core.close_topic("t").unwrap();
        assert!(consumer.next(T).unwrap().is_none());
    }
}
