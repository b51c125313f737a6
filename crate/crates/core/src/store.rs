//! Stores, factories and lazy proxies.
//!
//! A [`Store`] serializes objects, places them through a connector and
//! mints [`Proxy`] values. A proxy holds only a [`Factory`]: the key, the
//! store name, the connector config and a few flags. Resolving the proxy
//! fetches and deserializes the target once and caches it locally.
//!
//! A factory encodes as a canonical map:
//!
//! | key          | value                                   |
//! |--------------|-----------------------------------------|
//! | `key`        | object key text                         |
//! | `store`      | store name                              |
//! | `connector`  | connector config text                   |
//! | `serializer` | serializer id                           |
//! | `evict`      | evict after the first resolution        |
//! | `kind`       | `direct`, `future` or `stream`          |
//! | `ref_kind`   | optional: `owned`, `ref` or `mut`       |
//! | `timeout_ms` | optional: future wait limit             |
//! | `poll_ms`    | optional: future poll interval cap      |
//!
//! Proxies pay off for objects above roughly 10 kB; smaller objects are
//! often cheaper to pass by value, but nothing enforces a minimum.

use std::cell::OnceCell;
use std::collections::HashMap;
use std::fmt;
use std::num::NonZeroUsize;
use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use lru::LruCache;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codec::{self, CANONICAL};
use crate::connector::{self, Connector, ConnectorConfig};
use crate::error::{Error, Result};
use crate::key::{self, ObjectKey};
use crate::ownership::Lifetime;
use crate::relay::StoreStats;

pub const DEFAULT_CACHE_SIZE: usize = 16;

/// How a factory waits for its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolveKind {
    Direct,
    Future,
    Stream,
}

/// Ownership flavor of the proxy that carries a factory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefKind {
    Owned,
    Ref,
    Mut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factory {
    pub key: ObjectKey,
    #[serde(rename = "store")]
    pub store_name: String,
    #[serde(rename = "connector")]
    pub connector_config: ConnectorConfig,
    #[serde(rename = "serializer")]
    pub serializer_id: String,
    #[serde(rename = "evict")]
    pub evict_on_resolve: bool,
    #[serde(rename = "kind")]
    pub resolve_kind: ResolveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_kind: Option<RefKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poll_ms: Option<u64>,
}

impl Factory {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        codec::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        codec::from_bytes(bytes)
    }

    /// The store this factory resolves through: the registered store of
    /// that name when it uses the same connector, otherwise a handle built
    /// from the embedded config.
    pub fn store(&self) -> Result<Store> {
        if let Some(store) = lookup_store(&self.store_name) {
            if store.connector_config() == &self.connector_config {
                return Ok(store);
            }
        }
        implicit_store(&self.store_name, &self.connector_config)
    }

    /// Fetches the serialized target.
    pub fn resolve_bytes(&self) -> Result<Arc<Vec<u8>>> {
        let store = self.store()?;
        if self.resolve_kind == ResolveKind::Future {
            crate::future::wait_until_set(&store, self)?;
        }
        let bytes = if self.evict_on_resolve {
            let bytes = store.fetch_uncached(&self.key)?;
            store.evict(&self.key)?;
            bytes
        } else if self.ref_kind.is_some() {
            // Owned objects can be rewritten through `update`, possibly via
            // another handle, so always read the channel.
            store.fetch_uncached(&self.key)?
        } else {
            store.get_bytes(&self.key)?
        };
        bytes.ok_or_else(|| Error::DanglingReference(self.key.clone()))
    }

    pub fn resolve<T: DeserializeOwned>(&self) -> Result<T> {
        let bytes = self.resolve_bytes()?;
        decode_with(&self.serializer_id, &bytes)
    }
}

pub(crate) fn encode_with<T: Serialize + ?Sized>(serializer_id: &str, value: &T) -> Result<Vec<u8>> {
    let serializer = codec::serializer(serializer_id)?;
    serializer.serialize(&codec::to_value(value)?)
}

pub(crate) fn decode_with<T: DeserializeOwned>(serializer_id: &str, bytes: &[u8]) -> Result<T> {
    let serializer = codec::serializer(serializer_id)?;
    codec::from_value(serializer.deserialize(bytes)?)
}

/// Lazy reference to a stored object.
///
/// The first access fetches and deserializes the target; later accesses use
/// the local copy. A proxy belongs to one thread at a time. To share one,
/// serialize it: only the factory travels, never the cached value.
pub struct Proxy<T> {
    factory: Factory,
    cache: OnceCell<T>,
}

impl<T> Proxy<T> {
    pub fn from_factory(factory: Factory) -> Self {
        Self {
            factory,
            cache: OnceCell::new(),
        }
    }

    pub fn factory(&self) -> &Factory {
        &self.factory
    }

    pub fn into_factory(self) -> Factory {
        self.factory
    }

    pub fn key(&self) -> &ObjectKey {
        &self.factory.key
    }

    pub fn is_resolved(&self) -> bool {
        self.cache.get().is_some()
    }

    /// Resolved value, if any, without touching the store.
    pub fn cached(&self) -> Option<&T> {
        self.cache.get()
    }

    pub(crate) fn take_cached(&mut self) -> Option<T> {
        self.cache.take()
    }

    pub(crate) fn set_cached(&mut self, value: T) {
        self.cache = OnceCell::from(value);
    }
}

impl<T: DeserializeOwned> Proxy<T> {
    pub fn resolve(&self) -> Result<&T> {
        if let Some(v) = self.cache.get() {
            return Ok(v);
        }
        let value = self.factory.resolve()?;
        Ok(self.cache.get_or_init(|| value))
    }

    pub(crate) fn resolve_mut(&mut self) -> Result<&mut T> {
        self.resolve()?;
        Ok(self.cache.get_mut().unwrap())
    }

    /// Resolves and returns the owned target.
    pub fn into_inner(self) -> Result<T> {
        match self.cache.into_inner() {
            Some(v) => Ok(v),
            None => self.factory.resolve(),
        }
    }
}

impl<T: DeserializeOwned> Deref for Proxy<T> {
    type Target = T;

    /// # Panics
    ///
    /// Panics if resolution fails; call [`Proxy::resolve`] to handle errors.
    fn deref(&self) -> &T {
        match self.resolve() {
            Ok(v) => v,
            Err(e) => panic!("failed to resolve proxy {}: {e}", self.factory.key),
        }
    }
}

impl<T: Clone> Clone for Proxy<T> {
    fn clone(&self) -> Self {
        Self {
            factory: self.factory.clone(),
            cache: self.cache.clone(),
        }
    }
}

impl<T> fmt::Debug for Proxy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Proxy")
            .field("key", &self.factory.key)
            .field("resolved", &self.is_resolved())
            .finish()
    }
}

impl<T> Serialize for Proxy<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.factory.serialize(s)
    }
}

impl<'de, T> Deserialize<'de> for Proxy<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Factory::deserialize(d).map(Proxy::from_factory)
    }
}

pub fn serialize_proxy<T>(proxy: &Proxy<T>) -> Result<Vec<u8>> {
    proxy.factory.to_bytes()
}

/// The result is unresolved whatever the state of the original.
pub fn deserialize_proxy<T>(bytes: &[u8]) -> Result<Proxy<T>> {
    Factory::from_bytes(bytes).map(Proxy::from_factory)
}

/// Options for [`Store::proxy_with`].
#[derive(Default)]
pub struct ProxyOptions<'a> {
    pub evict_on_resolve: bool,
    pub lifetime: Option<&'a dyn Lifetime>,
}

/// Counters for one store handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StoreMetrics {
    /// Objects fetched from the connector.
    pub gets: u64,
    pub puts: u64,
    pub evicts: u64,
    pub cache_hits: u64,
    pub bytes_put: u64,
    pub bytes_get: u64,
}

#[derive(Default)]
struct Metrics {
    gets: AtomicU64,
    puts: AtomicU64,
    evicts: AtomicU64,
    cache_hits: AtomicU64,
    bytes_put: AtomicU64,
    bytes_get: AtomicU64,
}

struct StoreInner {
    name: String,
    connector: Arc<dyn Connector>,
    config: ConnectorConfig,
    serializer_id: String,
    cache: Mutex<LruCache<ObjectKey, Arc<Vec<u8>>>>,
    metrics: Metrics,
    sweep_interval: Duration,
    sweeper: OnceLock<crate::ownership::Sweeper>,
}

/// High-level interface over a connector. Cloning yields another handle
/// sharing the cache and metrics.
#[derive(Clone)]
pub struct Store {
    inner: Arc<StoreInner>,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("name", &self.inner.name)
            .field("connector", &self.inner.config.to_string())
            .finish()
    }
}

/// Builder for a [`Store`] with non-default settings.
pub struct StoreBuilder {
    name: String,
    connector: Arc<dyn Connector>,
    serializer_id: String,
    cache_size: usize,
    sweep_interval: Duration,
}

impl StoreBuilder {
    pub fn serializer(mut self, id: &str) -> Self {
        self.serializer_id = id.to_owned();
        self
    }

    /// Zero disables caching.
    pub fn cache_size(mut self, entries: usize) -> Self {
        self.cache_size = entries;
        self
    }

    /// How often lease lifetimes created on this store are checked.
    pub fn sweep_interval(mut self, interval: Duration) -> Self {
        self.sweep_interval = interval;
        self
    }

    pub fn build(self) -> Result<Store> {
        key::validate_namespace(&self.name)?;
        codec::serializer(&self.serializer_id)?;
        let config = self.connector.config();
        let cache = match NonZeroUsize::new(self.cache_size) {
            Some(n) => LruCache::new(n),
            None => LruCache::unbounded(),
        };
        Ok(Store {
            inner: Arc::new(StoreInner {
                name: self.name,
                connector: self.connector,
                config,
                serializer_id: self.serializer_id,
                cache: Mutex::new(cache),
                metrics: Metrics::default(),
                sweep_interval: self.sweep_interval,
                sweeper: OnceLock::new(),
            }),
        })
    }
}

impl Store {
    pub fn new(name: &str, connector: Arc<dyn Connector>) -> Result<Self> {
        Self::builder(name, connector).build()
    }

    pub fn builder(name: &str, connector: Arc<dyn Connector>) -> StoreBuilder {
        StoreBuilder {
            name: name.to_owned(),
            connector,
            serializer_id: CANONICAL.to_owned(),
            cache_size: DEFAULT_CACHE_SIZE,
            sweep_interval: crate::ownership::DEFAULT_SWEEP_INTERVAL,
        }
    }

    pub fn from_config(name: &str, config: &ConnectorConfig) -> Result<Self> {
        Self::new(name, connector::from_config(config)?)
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn connector(&self) -> &Arc<dyn Connector> {
        &self.inner.connector
    }

    pub fn connector_config(&self) -> &ConnectorConfig {
        &self.inner.config
    }

    pub fn serializer_id(&self) -> &str {
        &self.inner.serializer_id
    }

    pub(crate) fn sweep_interval(&self) -> Duration {
        self.inner.sweep_interval
    }

    pub(crate) fn sweeper(&self) -> &crate::ownership::Sweeper {
        self.inner
            .sweeper
            .get_or_init(|| crate::ownership::Sweeper::start(self.sweep_interval()))
    }

    pub fn serialize<T: Serialize + ?Sized>(&self, value: &T) -> Result<Vec<u8>> {
        encode_with(&self.inner.serializer_id, value)
    }

    pub fn deserialize<T: DeserializeOwned>(&self, bytes: &[u8]) -> Result<T> {
        decode_with(&self.inner.serializer_id, bytes)
    }

    pub fn new_key(&self) -> ObjectKey {
        ObjectKey::new(&self.inner.name).expect("store name is a valid namespace")
    }

    pub fn put_object<T: Serialize + ?Sized>(&self, value: &T) -> Result<ObjectKey> {
        let key = self.new_key();
        self.put_bytes(&key, self.serialize(value)?)?;
        Ok(key)
    }

    /// Writes `value` under an existing key, replacing what is there.
    pub fn put_object_at<T: Serialize + ?Sized>(&self, key: &ObjectKey, value: &T) -> Result<()> {
        self.put_bytes(key, self.serialize(value)?)
    }

    pub fn put_bytes(&self, key: &ObjectKey, bytes: Vec<u8>) -> Result<()> {
        let len = bytes.len() as u64;
        self.inner.cache.lock().unwrap().pop(key);
        self.inner.connector.put(key, bytes)?;
        let m = &self.inner.metrics;
        m.puts.fetch_add(1, Ordering::Relaxed);
        m.bytes_put.fetch_add(len, Ordering::Relaxed);
        Ok(())
    }

    /// Cached read of the serialized object.
    pub fn get_bytes(&self, key: &ObjectKey) -> Result<Option<Arc<Vec<u8>>>> {
        if let Some(hit) = self.inner.cache.lock().unwrap().get(key) {
            self.inner.metrics.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Some(Arc::clone(hit)));
        }
        let fetched = self.fetch_uncached(key)?;
        if let Some(bytes) = &fetched {
            self.inner
                .cache
                .lock()
                .unwrap()
                .put(key.clone(), Arc::clone(bytes));
        }
        Ok(fetched)
    }

    fn fetch_uncached(&self, key: &ObjectKey) -> Result<Option<Arc<Vec<u8>>>> {
        let fetched = self.inner.connector.get(key)?;
        let m = &self.inner.metrics;
        m.gets.fetch_add(1, Ordering::Relaxed);
        if let Some(bytes) = &fetched {
            m.bytes_get.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        }
        Ok(fetched.map(Arc::new))
    }

    pub fn get_object<T: DeserializeOwned>(&self, key: &ObjectKey) -> Result<Option<T>> {
        match self.get_bytes(key)? {
            Some(bytes) => self.deserialize(&bytes).map(Some),
            None => Ok(None),
        }
    }

    pub fn exists(&self, key: &ObjectKey) -> Result<bool> {
        self.inner.connector.exists(key)
    }

    pub fn evict(&self, key: &ObjectKey) -> Result<()> {
        self.inner.cache.lock().unwrap().pop(key);
        self.inner.connector.evict(key)?;
        self.inner.metrics.evicts.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn metrics(&self) -> StoreMetrics {
        let m = &self.inner.metrics;
        StoreMetrics {
            gets: m.gets.load(Ordering::Relaxed),
            puts: m.puts.load(Ordering::Relaxed),
            evicts: m.evicts.load(Ordering::Relaxed),
            cache_hits: m.cache_hits.load(Ordering::Relaxed),
            bytes_put: m.bytes_put.load(Ordering::Relaxed),
            bytes_get: m.bytes_get.load(Ordering::Relaxed),
        }
    }

    /// Statistics reported by the backend.
    pub fn stats(&self) -> Result<StoreStats> {
        self.inner.connector.stats()
    }

    pub fn factory(&self, key: ObjectKey, kind: ResolveKind, evict_on_resolve: bool) -> Factory {
        Factory {
            key,
            store_name: self.inner.name.clone(),
            connector_config: self.inner.config.clone(),
            serializer_id: self.inner.serializer_id.clone(),
            evict_on_resolve,
            resolve_kind: kind,
            ref_kind: None,
            timeout_ms: None,
            poll_ms: None,
        }
    }

    pub fn proxy<T: Serialize>(&self, value: &T) -> Result<Proxy<T>> {
        self.proxy_with(value, ProxyOptions::default())
    }

    pub fn proxy_with<T: Serialize>(&self, value: &T, options: ProxyOptions<'_>) -> Result<Proxy<T>> {
        let key = self.put_object(value)?;
        if let Some(lifetime) = options.lifetime {
            if let Err(e) = lifetime.attach_key(self, key.clone()) {
                self.evict(&key)?;
                return Err(e);
            }
        }
        Ok(Proxy::from_factory(self.factory(
            key,
            ResolveKind::Direct,
            options.evict_on_resolve,
        )))
    }

    /// Proxy for an object already stored under `key`.
    pub fn proxy_from_key<T>(&self, key: ObjectKey, evict_on_resolve: bool) -> Proxy<T> {
        Proxy::from_factory(self.factory(key, ResolveKind::Direct, evict_on_resolve))
    }
}

fn registry() -> &'static Mutex<HashMap<String, Store>> {
    static REGISTRY: OnceLock<Mutex<HashMap<String, Store>>> = OnceLock::new();
    REGISTRY.get_or_init(Default::default)
}

/// Makes `store` the handle used by factories naming it.
pub fn register_store(store: &Store) -> Result<()> {
    let mut reg = registry().lock().unwrap();
    if reg.contains_key(store.name()) {
        return Err(Error::StoreExists(store.name().to_owned()));
    }
    reg.insert(store.name().to_owned(), store.clone());
    Ok(())
}

pub fn lookup_store(name: &str) -> Option<Store> {
    registry().lock().unwrap().get(name).cloned()
}

pub fn unregister_store(name: &str) -> Option<Store> {
    registry().lock().unwrap().remove(name)
}

// Handles built from factory configs, reused so a process opens one
// connector per (name, config).
fn implicit_store(name: &str, config: &ConnectorConfig) -> Result<Store> {
    static HANDLES: OnceLock<Mutex<HashMap<(String, ConnectorConfig), Store>>> = OnceLock::new();
    let handles = HANDLES.get_or_init(Default::default);
    let id = (name.to_owned(), config.clone());
    if let Some(store) = handles.lock().unwrap().get(&id) {
        return Ok(store.clone());
    }
    let store = Store::from_config(name, config)?;
    Ok(handles.lock().unwrap().entry(id).or_insert(store).clone())
}
