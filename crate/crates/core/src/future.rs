//! Write-once result slots whose proxies block until the result is set.
//!
//! Readiness is detected by polling `exists` on the slot key, starting at
//! 1 ms and doubling up to the poll interval (100 ms by default). Nothing
//! but the connector is shared, so a serialized future works in any process
//! that can reach the backend.
//!
//! Write-once is enforced with an existence check followed by a put. Two
//! setters racing in different processes can both pass the check; the
//! caller contract is a single producer per future.

use std::fmt;
use std::marker::PhantomData;
use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::key::ObjectKey;
use crate::store::{Factory, Proxy, ResolveKind, Store};

pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_millis(100);
const INITIAL_POLL: Duration = Duration::from_millis(1);

/// Handle to one result slot.
pub struct Future<T> {
    factory: Factory,
    _value: PhantomData<fn() -> T>,
}

impl Store {
    /// A fresh unset future that waits forever.
    pub fn future<T>(&self) -> Future<T> {
        self.future_with(None, DEFAULT_POLL_INTERVAL)
    }

    pub fn future_with<T>(&self, timeout: Option<Duration>, poll_interval: Duration) -> Future<T> {
        let mut factory = self.factory(self.new_key(), ResolveKind::Future, false);
        factory.timeout_ms = timeout.map(duration_ms);
        factory.poll_ms = Some(duration_ms(poll_interval).max(1));
        Future {
            factory,
            _value: PhantomData,
        }
    }
}

fn duration_ms(d: Duration) -> u64 {
    d.as_millis().min(u64::MAX as u128) as u64
}

impl<T> Future<T> {
    pub fn key(&self) -> &ObjectKey {
        &self.factory.key
    }

    pub fn factory(&self) -> &Factory {
        &self.factory
    }

    pub fn timeout(&self) -> Option<Duration> {
        self.factory.timeout_ms.map(Duration::from_millis)
    }

    pub fn poll_interval(&self) -> Duration {
        poll_cap(&self.factory)
    }

    /// A proxy that blocks on first access until the result is set.
    pub fn proxy(&self) -> Proxy<T> {
        Proxy::from_factory(self.factory.clone())
    }

    /// Whether a result has been set.
    pub fn done(&self) -> Result<bool> {
        self.factory.store()?.exists(&self.factory.key)
    }

    pub fn set_result(&self, value: &T) -> Result<()>
    where
        T: Serialize,
    {
        let store = self.factory.store()?;
        let key = &self.factory.key;
        if store.exists(key)? {
            return Err(Error::AlreadySet(key.clone()));
        }
        let bytes = crate::store::encode_with(&self.factory.serializer_id, value)?;
        store.put_bytes(key, bytes)
    }
}

impl<T: DeserializeOwned> Future<T> {
    /// Waits for the result; `timeout` replaces the future's own limit.
    pub fn result(&self, timeout: Option<Duration>) -> Result<T> {
        let mut factory = self.factory.clone();
        if timeout.is_some() {
            factory.timeout_ms = timeout.map(duration_ms);
        }
        factory.resolve()
    }
}

impl<T> Clone for Future<T> {
    fn clone(&self) -> Self {
        Self {
            factory: self.factory.clone(),
            _value: PhantomData,
        }
    }
}

impl<T> fmt::Debug for Future<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Future").field(&self.factory.key).finish()
    }
}

impl<T> Serialize for Future<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.factory.serialize(s)
    }
}

impl<'de, T> Deserialize<'de> for Future<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let factory = Factory::deserialize(d)?;
        if factory.resolve_kind != ResolveKind::Future {
            return Err(serde::de::Error::custom("factory does not describe a future"));
        }
        Ok(Self {
            factory,
            _value: PhantomData,
        })
    }
}

fn poll_cap(factory: &Factory) -> Duration {
    factory
        .poll_ms
        .map(Duration::from_millis)
        .unwrap_or(DEFAULT_POLL_INTERVAL)
}

/// Blocks until the slot named by `factory` exists or its timeout passes.
pub(crate) fn wait_until_set(store: &Store, factory: &Factory) -> Result<()> {
    let start = Instant::now();
    let deadline = factory
        .timeout_ms
        .map(|ms| start + Duration::from_millis(ms));
    let cap = poll_cap(factory);
    let mut delay = INITIAL_POLL.min(cap);
    loop {
        if store.exists(&factory.key)? {
            return Ok(());
        }
        let mut sleep = delay;
        if let Some(deadline) = deadline {
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::FutureTimeout {
                    key: factory.key.clone(),
                    waited: now - start,
                });
            }
            sleep = sleep.min(deadline - now);
        }
        thread::sleep(sleep);
        delay = (delay * 2).min(cap);
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::codec;
    use crate::connector::MemoryConnector;

    fn store() -> Store {
        Store::new("futures", Arc::new(MemoryConnector::unique())).unwrap()
    }

    #[test]
    fn fresh_future_is_unset_and_unique() {
        let s = store();
        let a: Future<String> = s.future();
        let b: Future<String> = s.future();
        assert_ne!(a.key(), b.key());
        assert!(!s.exists(a.key()).unwrap());
        assert!(!a.done().unwrap());
    }

    #[test]
    fn set_then_proxy_resolves() {
        let s = store();
        let f: Future<String> = s.future();
        let p = f.proxy();
        f.set_result(&"value".to_owned()).unwrap();
        assert_eq!(*p, "value");
        assert_eq!(f.result(None).unwrap(), "value");
        assert!(matches!(f.set_result(&"again".to_owned()), Err(Error::AlreadySet(_))));
        assert_eq!(*f.proxy(), "value");
    }

    #[test]
    fn survives_serialization() {
        let s = store();
        let f: Future<i64> = s.future();
        let g: Future<i64> = codec::from_bytes(&codec::to_bytes(&f).unwrap()).unwrap();
        assert_eq!(g.key(), f.key());
        g.set_result(&9).unwrap();
        assert_eq!(f.result(None).unwrap(), 9);
    }

    #[test]
    fn blocked_consumer_unblocks_after_set() {
        let s = store();
        let f: Future<Vec<i64>> = s.future_with(None, Duration::from_millis(20));
        let consumer = {
            let bytes = codec::to_bytes(&f).unwrap();
            thread::spawn(move || {
                let p: Proxy<Vec<i64>> = codec::from_bytes(&bytes).unwrap();
                let v = p.resolve().unwrap().clone();
                (v, Instant::now())
            })
        };
        thread::sleep(Duration::from_millis(150));
        let set_at = Instant::now();
        f.set_result(&vec![1, 2]).unwrap();
        let (v, got_at) = consumer.join().unwrap();
        assert_eq!(v, [1, 2]);
        assert!(got_at - set_at <= Duration::from_millis(40), "{:?}", got_at - set_at);
    }

    #[test]
    fn unset_future_times_out() {
        let s = store();
        let f: Future<i64> = s.future_with(Some(Duration::from_millis(100)), DEFAULT_POLL_INTERVAL);
        let start = Instant::now();
        let err = f.proxy().resolve().unwrap_err();
        let waited = start.elapsed();
        assert!(matches!(err, Error::FutureTimeout { .. }));
        assert!(waited >= Duration::from_millis(100) && waited < Duration::from_millis(300));
        let err = s.future::<i64>().result(Some(Duration::from_millis(20))).unwrap_err();
        assert!(matches!(err, Error::FutureTimeout { .. }));
    }

    #[test]
    fn non_future_factory_is_rejected() {
        let s = store();
        let p = s.proxy(&1i64).unwrap();
        let bytes = codec::to_bytes(&p).unwrap();
        assert!(codec::from_bytes::<Future<i64>>(&bytes).is_err());
    }
}
