//! One side of a future handed between processes.
//!
//! The future travels as the hex form of its serialized factory. Both sides
//! reach the backend through the connector configuration inside it.

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use proxyflow::future::Future;
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::error::Result;

/// Microseconds since the Unix epoch; comparable across processes on one host.
pub fn unix_micros() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

pub fn encode_future<T>(future: &Future<T>) -> Result<String> {
    Ok(hex::encode(future.factory().to_bytes()?))
}

pub fn decode_future<T>(text: &str) -> Result<Future<T>> {
    let bytes = hex::decode(text.trim())
        .map_err(|e| ConfigError(format!("future is not valid hex: {e}")))?;
    Ok(proxyflow::codec::from_bytes(&bytes)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consumed {
    pub value: String,
    /// When the result became available to the consumer.
    pub at_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Produced {
    /// When `set_result` returned.
    pub at_us: u64,
}

/// Waits for the result. `ready` runs once the consumer is about to block.
pub fn consume(future: &str, timeout: Option<Duration>, ready: impl FnOnce()) -> Result<Consumed> {
    let future: Future<String> = decode_future(future)?;
    ready();
    let value = future.result(timeout)?;
    Ok(Consumed { value, at_us: unix_micros() })
}

pub fn produce(future: &str, value: &str) -> Result<Produced> {
    let future: Future<String> = decode_future(future)?;
    future.set_result(&value.to_owned())?;
    Ok(Produced { at_us: unix_micros() })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;
    use std::thread;

    use proxyflow::connector::MemoryConnector;
    use proxyflow::store::Store;

    use super::*;

    #[test]
    fn hex_form_round_trips() {
        let store = Store::new("peer-test", Arc::new(MemoryConnector::unique())).unwrap();
        let f: Future<String> = store.future_with(None, Duration::from_millis(5));
        let text = encode_future(&f).unwrap();
        let back: Future<String> = decode_future(&text).unwrap();
        assert_eq!(back.key(), f.key());
        assert_eq!(back.poll_interval(), Duration::from_millis(5));
        assert!(decode_future::<String>("zz").is_err());
    }

    #[test]
    fn consumer_sees_producer_value() {
        let store = Store::new("peer-threads", Arc::new(MemoryConnector::unique())).unwrap();
        proxyflow::store::register_store(&store).unwrap();
        let f: Future<String> = store.future_with(None, Duration::from_millis(5));
        let text = encode_future(&f).unwrap();
        let t2 = text.clone();
        let consumer = thread::spawn(move || consume(&t2, Some(Duration::from_secs(5)), || ()).unwrap());
        thread::sleep(Duration::from_millis(30));
        let p = produce(&text, "hello").unwrap();
        let c = consumer.join().unwrap();
        assert_eq!(c.value, "hello");
        assert!(c.at_us >= p.at_us.saturating_sub(1_000));
        proxyflow::store::unregister_store("peer-threads");
    }
}
