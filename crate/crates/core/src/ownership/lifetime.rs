use std::collections::HashSet;
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use log::warn;

use super::evict_unless_static;
use crate::error::{Error, Result};
use crate::key::ObjectKey;
use crate::store::{Proxy, Store};

/// How often a store checks its leases unless configured otherwise.
pub const DEFAULT_SWEEP_INTERVAL: Duration = Duration::from_millis(500);

/// A scope whose end evicts every attached object once.
pub trait Lifetime: Send + Sync {
    /// Fails with [`Error::LifetimeEnded`] once the lifetime is over.
    fn attach_key(&self, store: &Store, key: ObjectKey) -> Result<()>;

    fn done(&self) -> bool;

    fn attach<T>(&self, proxy: &Proxy<T>) -> Result<()>
    where
        Self: Sized,
    {
        self.attach_key(&proxy.factory().store()?, proxy.key().clone())
    }
}

#[derive(Default)]
struct Attached {
    keys: Vec<(Store, ObjectKey)>,
    ended: bool,
}

impl Attached {
    fn attach(&mut self, store: &Store, key: ObjectKey) -> Result<()> {
        if self.ended {
            return Err(Error::LifetimeEnded);
        }
        self.keys.push((store.clone(), key));
        Ok(())
    }

    /// Marks the lifetime ended and hands back the keys to evict.
    fn end(&mut self) -> Vec<(Store, ObjectKey)> {
        self.ended = true;
        std::mem::take(&mut self.keys)
    }
}

fn evict_all(keys: Vec<(Store, ObjectKey)>) -> Result<()> {
    let mut first_err = None;
    for (store, key) in keys {
        if let Err(e) = evict_unless_static(&store, &key) {
            warn!("failed to evict {key}: {e}");
            first_err.get_or_insert(e);
        }
    }
    first_err.map_or(Ok(()), Err)
}

/// Lifetime ended explicitly by [`ContextLifetime::close`] or by drop.
#[derive(Default)]
pub struct ContextLifetime {
    attached: Mutex<Attached>,
}

impl ContextLifetime {
    pub fn new() -> Self {
        Self::default()
    }

    /// Evicts everything attached. Closing again does nothing.
    pub fn close(&self) -> Result<()> {
        let keys = self.attached.lock().unwrap().end();
        evict_all(keys)
    }
}

impl Lifetime for ContextLifetime {
    fn attach_key(&self, store: &Store, key: ObjectKey) -> Result<()> {
        self.attached.lock().unwrap().attach(store, key)
    }

    fn done(&self) -> bool {
        self.attached.lock().unwrap().ended
    }
}

impl Drop for ContextLifetime {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

struct LeaseState {
    attached: Attached,
    expiry: Instant,
}

struct LeaseInner {
    state: Mutex<LeaseState>,
}

impl LeaseInner {
    /// Ends the lease if it is due; returns whether it has ended.
    fn sweep(&self, now: Instant) -> bool {
        let keys = {
            let mut s = self.state.lock().unwrap();
            if s.attached.ended {
                return true;
            }
            if now < s.expiry {
                return false;
            }
            s.attached.end()
        };
        let _ = evict_all(keys);
        true
    }
}

/// Lifetime that ends when its lease runs out. Expiry is checked by the
/// store's sweeper, so eviction can lag expiry by one sweep interval.
/// Dropping the handle does not end the lease.
pub struct LeaseLifetime {
    inner: Arc<LeaseInner>,
}

impl LeaseLifetime {
    pub fn new(store: &Store, expiry: Duration) -> Self {
        let inner = Arc::new(LeaseInner {
            state: Mutex::new(LeaseState {
                attached: Attached::default(),
                expiry: Instant::now() + expiry,
            }),
        });
        store.sweeper().watch(Arc::clone(&inner));
        Self { inner }
    }

    /// Pushes the expiry back by `delta`.
    pub fn extend(&self, delta: Duration) -> Result<()> {
        let mut s = self.inner.state.lock().unwrap();
        if s.attached.ended {
            return Err(Error::LifetimeEnded);
        }
        s.expiry += delta;
        Ok(())
    }

    pub fn expires_at(&self) -> Instant {
        self.inner.state.lock().unwrap().expiry
    }

    /// Ends the lease now.
    pub fn close(&self) -> Result<()> {
        let keys = self.inner.state.lock().unwrap().attached.end();
        evict_all(keys)
    }
}

impl Lifetime for LeaseLifetime {
    fn attach_key(&self, store: &Store, key: ObjectKey) -> Result<()> {
        self.inner.state.lock().unwrap().attached.attach(store, key)
    }

    fn done(&self) -> bool {
        self.inner.state.lock().unwrap().attached.ended
    }
}

fn static_keys() -> &'static Mutex<HashSet<ObjectKey>> {
    static KEYS: OnceLock<Mutex<HashSet<ObjectKey>>> = OnceLock::new();
    KEYS.get_or_init(Default::default)
}

/// Lifetime of the whole process. Attached objects outlive their owners.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticLifetime;

impl Lifetime for StaticLifetime {
    fn attach_key(&self, _store: &Store, key: ObjectKey) -> Result<()> {
        static_keys().lock().unwrap().insert(key);
        Ok(())
    }

    fn done(&self) -> bool {
        false
    }
}

pub fn is_static(key: &ObjectKey) -> bool {
    static_keys().lock().unwrap().contains(key)
}

struct SweeperShared {
    leases: Mutex<Vec<Arc<LeaseInner>>>,
    stop: Mutex<bool>,
    wake: Condvar,
}

/// Background thread ending expired leases of one store.
pub(crate) struct Sweeper {
    shared: Arc<SweeperShared>,
}

impl Sweeper {
    pub(crate) fn start(interval: Duration) -> Self {
        let shared = Arc::new(SweeperShared {
            leases: Mutex::new(Vec::new()),
            stop: Mutex::new(false),
            wake: Condvar::new(),
        });
        let worker = Arc::clone(&shared);
        thread::Builder::new()
            .name("lease-sweeper".into())
            .spawn(move || sweep_loop(&worker, interval))
            .expect("spawn lease sweeper");
        Self { shared }
    }

    fn watch(&self, lease: Arc<LeaseInner>) {
        self.shared.leases.lock().unwrap().push(lease);
    }
}

impl Drop for Sweeper {
    fn drop(&mut self) {
        // Not joined: the last store handle may be dropped on the sweeper
        // thread itself.
        *self.shared.stop.lock().unwrap() = true;
        self.shared.wake.notify_all();
    }
}

fn sweep_loop(shared: &SweeperShared, interval: Duration) {
    loop {
        {
            let stop = shared.stop.lock().unwrap();
            let (stop, _) = shared
                .wake
                .wait_timeout_while(stop, interval, |stop| !*stop)
                .unwrap();
            if *stop {
                return;
            }
        }
        let now = Instant::now();
        let leases: Vec<_> = shared.leases.lock().unwrap().clone();
        let ended: Vec<_> = leases.iter().filter(|l| l.sweep(now)).collect();
        if !ended.is_empty() {
            shared
                .leases
                .lock()
                .unwrap()
                .retain(|l| !ended.iter().any(|e| Arc::ptr_eq(e, l)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connector::MemoryConnector;
    use crate::store::ProxyOptions;

    fn store(sweep_ms: u64) -> Store {
        Store::builder("life", Arc::new(MemoryConnector::unique()))
            .sweep_interval(Duration::from_millis(sweep_ms))
            .build()
            .unwrap()
    }

    #[test]
    fn context_close_evicts_immediately() {
        let s = store(500);
        let ctx = ContextLifetime::new();
        let a = s
            .proxy_with(&1i64, ProxyOptions { evict_on_resolve: false, lifetime: Some(&ctx) })
            .unwrap();
        let b = s.proxy(&2i64).unwrap();
        ctx.attach(&b).unwrap();
        assert!(!ctx.done());
        ctx.close().unwrap();
        assert!(ctx.done());
        assert!(!s.exists(a.key()).unwrap());
        assert!(!s.exists(b.key()).unwrap());
        assert!(matches!(ctx.attach(&b), Err(Error::LifetimeEnded)));
        ctx.close().unwrap();
    }

    #[test]
    fn context_drop_closes() {
        let s = store(500);
        let p = s.proxy(&1i64).unwrap();
        {
            let ctx = ContextLifetime::new();
            ctx.attach(&p).unwrap();
        }
        assert!(!s.exists(p.key()).unwrap());
    }

    #[test]
    fn lease_expires_after_extension() {
        let s = store(20);
        let lease = LeaseLifetime::new(&s, Duration::from_millis(200));
        let p = s.proxy(&"leased").unwrap();
        lease.attach(&p).unwrap();
        let before = lease.expires_at();
        lease.extend(Duration::from_millis(100)).unwrap();
        assert_eq!(lease.expires_at() - before, Duration::from_millis(100));
        thread::sleep(Duration::from_millis(250));
        assert!(s.exists(p.key()).unwrap());
        assert!(!lease.done());
        thread::sleep(Duration::from_millis(150));
        assert!(lease.done());
        assert!(!s.exists(p.key()).unwrap());
        assert!(matches!(lease.extend(Duration::from_secs(1)), Err(Error::LifetimeEnded)));
    }

    #[test]
    fn static_lifetime_survives_owner_end() {
        let s = store(500);
        let o = s.owned_proxy(&"forever").unwrap();
        StaticLifetime.attach_key(&s, o.key().clone()).unwrap();
        let key = o.key().clone();
        o.end().unwrap();
        assert!(s.exists(&key).unwrap());
        assert!(!StaticLifetime.done());
    }
}
